#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dmp3dad/geometry.hpp"
#include "dmp3dad/projection.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dmp3dad-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline dmp3dad::PointCloud random_cloud(std::uint32_t seed, int n, double lo = -3.0, double hi = 5.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  dmp3dad::PointCloud c;
  for (int i = 0; i < n; ++i) c.points.push_back({u(gen), u(gen), u(gen)});
  return c;
}

/// Image with pixels drawn from {0.0..0.9 foreground, 1.0 background}.
inline dmp3dad::DepthImage random_image(std::uint32_t seed, int size) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<float> u(0.0f, 0.9f);
  std::bernoulli_distribution fg(0.4);
  dmp3dad::DepthImage img;
  img.height = img.width = size;
  for (int i = 0; i < size * size; ++i) img.intensities.push_back(fg(gen) ? u(gen) : 1.0f);
  return img;
}

inline std::filesystem::path data_dir() { return DMP3DAD_TEST_DATA_DIR; }

}  // namespace testing_support
