#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>

#include "dmp3dad/datastore.hpp"
#include "dmp3dad/geometry.hpp"

namespace dmp3dad {

enum class Shape { sphere, cube, cylinder };

Shape parse_shape(std::string_view name);
std::string_view to_string(Shape shape);

/// Points sampled uniformly by area on the surface of a unit sphere, the
/// [-1,1]^3 cube, or a cylinder along z with height 4x its diameter
/// (radius 0.25, z in [-1, 1]), then jittered with N(0, noise^2) per axis.
PointCloud make_shape(Shape shape, std::uint64_t seed, int points = 2048, double noise = 0.01);

struct SyntheticOptions {
  int train_per_category = 30;
  int test_per_category = 20;
  int points = 2048;
  double noise = 0.01;
  std::uint64_t seed = 7;
};

/// Writes sphere/cube/cylinder clouds (binary xyz) and manifest.tsv into
/// `dir`, returning the loaded manifest.
Manifest write_synthetic_dataset(const std::filesystem::path& dir,
                                 const SyntheticOptions& options = {});

}  // namespace dmp3dad
