#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <vector>

#include "dmp3dad/geometry.hpp"
#include "dmp3dad/viewgrid.hpp"

namespace dmp3dad {

struct ProjectionParams {
  int grid_resolution = 128;  ///< voxels per axis over [-1.1, 1.1]^3
  int image_size = 224;       ///< pixels per side
  int densify_kernel = 2;     ///< dilation radius, pixels
  double smooth_sigma = 1.0;  ///< Gaussian sigma, pixels; 0 disables smoothing
  double foreground_ceiling = 0.9;

  friend bool operator==(const ProjectionParams&, const ProjectionParams&) = default;
};

void validate(const ProjectionParams& params);

inline constexpr double kLatticeHalfExtent = 1.1;
inline constexpr float kBackground = 1.0f;

/// Square grayscale render. Background is exactly 1.0; foreground lies in
/// [0, foreground_ceiling] with the nearest surface darkest.
struct DepthImage {
  int height = 0;
  int width = 0;
  int view_index = 0;
  std::vector<float> intensities;  ///< row-major, row 0 at the top

  float at(int row, int col) const { return intensities[static_cast<std::size_t>(row) * width + col]; }
  std::size_t pixel_count() const { return intensities.size(); }
};

/// View-aligned occupancy lattice collapsed along the view axis: one entry
/// per (column, row) cell holding the nearest point depth, +inf when empty.
struct ColumnDepths {
  int resolution = 0;
  std::vector<double> depth;  ///< index = row_cell * resolution + col_cell

  static constexpr double kEmpty = std::numeric_limits<double>::infinity();
  std::size_t occupied() const;
  double at(int col_cell, int row_cell) const {
    return depth[static_cast<std::size_t>(row_cell) * resolution + col_cell];
  }
};

/// Bins the cloud into a grid_resolution^3 lattice in the camera frame and
/// keeps the minimum depth per lattice column. Depth is measured from the
/// camera plane along the view axis. Points outside the lattice are dropped.
ColumnDepths voxelize(const PointCloud& cloud, const CameraPose& pose,
                      const ProjectionParams& params);

/// Real-valued depth before intensity mapping. +inf marks background.
struct DepthField {
  int size = 0;
  std::vector<double> splat;     ///< column depths resampled to pixels
  std::vector<double> densified; ///< after min-filter dilation
  std::vector<double> depth;     ///< after masked smoothing
};

DepthField render_depth_field(const PointCloud& cloud, const CameraPose& pose,
                              const ProjectionParams& params);

/// Full render: voxelize, splat, densify, smooth, map to intensities.
/// Bit-deterministic in (point set, pose, params).
DepthImage render_view(const PointCloud& cloud, const CameraPose& pose,
                       const ProjectionParams& params, int view_index = 0);

std::vector<DepthImage> render_all_views(const PointCloud& cloud, const ViewGrid& grid,
                                         const ProjectionParams& params);

/// 8-bit grayscale PNG, value = round(intensity * 255). Inspection only.
void write_png(const DepthImage& image, const std::filesystem::path& path);

}  // namespace dmp3dad
