#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace dmp3dad {

/// Camera on a sphere around the origin, always looking at the origin.
struct CameraPose {
  double azimuth_deg = 0.0;    ///< [0, 360)
  double elevation_deg = 0.0;  ///< [-90, 90]
  double radius = 2.2;

  friend bool operator==(const CameraPose&, const CameraPose&) = default;
};

/// Orthonormal camera frame. `forward` points from the camera to the origin;
/// image x follows `right`, image y follows `up`.
struct CameraBasis {
  std::array<double, 3> position;
  std::array<double, 3> forward;
  std::array<double, 3> right;
  std::array<double, 3> up;
};

CameraBasis camera_basis(const CameraPose& pose);

struct ViewGrid {
  std::string id;
  std::vector<CameraPose> views;

  std::size_t size() const { return views.size(); }
};

inline constexpr double kCameraRadius = 2.2;
inline constexpr std::array<int, 4> kSupportedViewCounts = {5, 10, 20, 30};

/// Fixed ring/elevated/polar grid for V in {5, 10, 20, 30}. Throws
/// InvalidArgument for any other count.
ViewGrid generate_view_grid(int view_count);

/// Single pose at azimuth 0, elevation 0 ("grid-front"); the multi-view-off
/// configuration of the component ablation.
ViewGrid front_view_grid();

/// Resolves "grid-v{V}" or "grid-front".
ViewGrid view_grid_from_id(std::string_view id);

std::string view_grid_id(int view_count);

}  // namespace dmp3dad
