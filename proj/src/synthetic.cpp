#include "dmp3dad/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dmp3dad/error.hpp"
#include "dmp3dad/rng.hpp"

namespace dmp3dad {

namespace {

constexpr double kCylinderRadius = 0.25;
constexpr double kCylinderHalfHeight = 1.0;

/// Box-Muller on the bit-exact generator.
double gaussian(Xoshiro256& rng) {
  const double u1 = 1.0 - rng.uniform();  // (0, 1]
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Point3 sample_surface(Shape shape, Xoshiro256& rng) {
  switch (shape) {
    case Shape::sphere: {
      // Uniform z and azimuth give a uniform sphere (Archimedes).
      const double z = 2.0 * rng.uniform() - 1.0;
      const double phi = 2.0 * std::numbers::pi * rng.uniform();
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      return {r * std::cos(phi), r * std::sin(phi), z};
    }
    case Shape::cube: {
      const auto face = rng.below(6);
      const double a = 2.0 * rng.uniform() - 1.0;
      const double b = 2.0 * rng.uniform() - 1.0;
      const double s = face % 2 == 0 ? 1.0 : -1.0;
      switch (face / 2) {
        case 0: return {s, a, b};
        case 1: return {a, s, b};
        default: return {a, b, s};
      }
    }
    case Shape::cylinder: {
      const double r = kCylinderRadius;
      const double h = kCylinderHalfHeight;
      const double side = 2.0 * std::numbers::pi * r * 2.0 * h;
      const double caps = 2.0 * std::numbers::pi * r * r;
      const double phi = 2.0 * std::numbers::pi * rng.uniform();
      if (rng.uniform() * (side + caps) < side) {
        return {r * std::cos(phi), r * std::sin(phi), (2.0 * rng.uniform() - 1.0) * h};
      }
      const double rho = r * std::sqrt(rng.uniform());
      const double z = rng.uniform() < 0.5 ? h : -h;
      return {rho * std::cos(phi), rho * std::sin(phi), z};
    }
  }
  return {};
}

}  // namespace

Shape parse_shape(std::string_view name) {
  if (name == "sphere") return Shape::sphere;
  if (name == "cube") return Shape::cube;
  if (name == "cylinder") return Shape::cylinder;
  throw InvalidArgument("unknown shape '" + std::string(name) + "'");
}

std::string_view to_string(Shape shape) {
  switch (shape) {
    case Shape::sphere: return "sphere";
    case Shape::cube: return "cube";
    case Shape::cylinder: return "cylinder";
  }
  return "?";
}

PointCloud make_shape(Shape shape, std::uint64_t seed, int points, double noise) {
  if (points < 1) throw InvalidArgument("a synthetic cloud needs at least one point");
  if (!(noise >= 0.0)) throw InvalidArgument("noise must be non-negative");
  Xoshiro256 rng(seed);
  PointCloud cloud;
  cloud.source_id = std::string(to_string(shape)) + "-" + std::to_string(seed);
  cloud.points.reserve(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    Point3 p = sample_surface(shape, rng);
    if (noise > 0.0) {
      p.x += noise * gaussian(rng);
      p.y += noise * gaussian(rng);
      p.z += noise * gaussian(rng);
    }
    cloud.points.push_back(p);
  }
  return cloud;
}

Manifest write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticOptions& options) {
  std::filesystem::create_directories(dir / "clouds");
  Manifest m;
  m.root = dir;
  std::uint64_t counter = 0;
  for (Shape shape : {Shape::sphere, Shape::cube, Shape::cylinder}) {
    const std::string name(to_string(shape));
    for (Split split : {Split::train, Split::test}) {
      const int count = split == Split::train ? options.train_per_category : options.test_per_category;
      for (int i = 0; i < count; ++i) {
        std::string tag = name;
        tag.push_back('\0');
        tag += std::to_string(options.seed) + "/" + std::to_string(counter++);
        const PointCloud cloud = make_shape(shape, fnv1a64(tag), options.points, options.noise);
        ManifestEntry e;
        e.sample_id = name + "_" + std::string(to_string(split)) + "_" + std::to_string(i);
        e.category = name;
        e.split = split;
        e.relative_path = "clouds/" + e.sample_id + ".xyz";
        e.path = dir / e.relative_path;
        e.format = CloudFormat::xyz_binary;
        save_point_cloud(cloud, e.path, e.format);
        m.entries.push_back(std::move(e));
      }
    }
  }
  save_manifest(m, dir / "manifest.tsv");
  return load_manifest(dir / "manifest.tsv");
}

}  // namespace dmp3dad
