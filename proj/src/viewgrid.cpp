#include "dmp3dad/viewgrid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "dmp3dad/error.hpp"

namespace dmp3dad {

namespace {

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

void ring(std::vector<CameraPose>& out, double elevation, int count) {
  const double step = 360.0 / count;
  for (int i = 0; i < count; ++i) out.push_back({step * i, elevation, kCameraRadius});
}

void poles(std::vector<CameraPose>& out, bool bottom) {
  out.push_back({0.0, 90.0, kCameraRadius});
  if (bottom) out.push_back({0.0, -90.0, kCameraRadius});
}

}  // namespace

CameraBasis camera_basis(const CameraPose& pose) {
  const double az = deg2rad(pose.azimuth_deg);
  const double el = deg2rad(pose.elevation_deg);
  CameraBasis b{};
  // Exact values at the poles keep the polar frames free of 1e-17 residue.
  const double cos_el = std::abs(pose.elevation_deg) == 90.0 ? 0.0 : std::cos(el);
  const double sin_el = pose.elevation_deg == 90.0    ? 1.0
                        : pose.elevation_deg == -90.0 ? -1.0
                                                      : std::sin(el);
  const std::array<double, 3> dir = {cos_el * std::cos(az), cos_el * std::sin(az), sin_el};
  for (int i = 0; i < 3; ++i) {
    b.position[i] = pose.radius * dir[i];
    b.forward[i] = -dir[i];
  }
  // Tangent of increasing azimuth; horizontal, so it is well defined at the poles.
  b.right = {-std::sin(az), std::cos(az), 0.0};
  const auto& r = b.right;
  const auto& f = b.forward;
  b.up = {r[1] * f[2] - r[2] * f[1], r[2] * f[0] - r[0] * f[2], r[0] * f[1] - r[1] * f[0]};
  return b;
}

ViewGrid generate_view_grid(int view_count) {
  ViewGrid grid;
  grid.id = view_grid_id(view_count);
  auto& v = grid.views;
  switch (view_count) {
    case 5:
      ring(v, 30.0, 4);
      poles(v, false);
      break;
    case 10:
      ring(v, 30.0, 8);
      poles(v, true);
      break;
    case 20:
      ring(v, 0.0, 8);
      ring(v, 45.0, 8);
      ring(v, -45.0, 2);
      poles(v, true);
      break;
    case 30:
      ring(v, 0.0, 12);
      ring(v, 45.0, 8);
      ring(v, -45.0, 8);
      poles(v, true);
      break;
    default:
      throw InvalidArgument("unsupported view count " + std::to_string(view_count) +
                            " (expected 5, 10, 20 or 30)");
  }
  return grid;
}

ViewGrid front_view_grid() { return ViewGrid{"grid-front", {{0.0, 0.0, kCameraRadius}}}; }

std::string view_grid_id(int view_count) { return "grid-v" + std::to_string(view_count); }

ViewGrid view_grid_from_id(std::string_view id) {
  if (id == "grid-front") return front_view_grid();
  constexpr std::string_view prefix = "grid-v";
  if (id.starts_with(prefix)) {
    int v = 0;
    const auto digits = id.substr(prefix.size());
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (ec == std::errc() && ptr == digits.data() + digits.size()) {
      return generate_view_grid(v);
    }
  }
  throw InvalidArgument("unknown view grid id: " + std::string(id));
}

}  // namespace dmp3dad
