#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dmp3dad {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Point3&, const Point3&) = default;
};

/// Ordered 3D points in object space. At least one point, all finite.
struct PointCloud {
  std::vector<Point3> points;
  std::string source_id;

  std::size_t size() const { return points.size(); }
};

enum class CloudFormat { pts_text, xyz_binary };

CloudFormat parse_cloud_format(std::string_view name);
std::string_view to_string(CloudFormat format);

/// Reads a cloud from disk. Throws ParseError on a malformed record (with
/// line number for text files) or when the file holds zero points.
PointCloud load_point_cloud(const std::filesystem::path& path, CloudFormat format);

/// Parses the whitespace-separated text format from memory.
PointCloud parse_pts_text(std::string_view text, std::string source_id = {});

void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                      CloudFormat format);

struct NormalizedCloud {
  PointCloud cloud;
  /// Set when every input point coincides; the output is then all zeros.
  bool degenerate = false;
};

/// Centres on the centroid and scales by 1 / max |coordinate| so the cloud
/// fits [-1, 1]^3 with at least one coordinate at +-1.
NormalizedCloud normalize_to_unit_cube(const PointCloud& cloud);

/// Throws InvalidArgument if the cloud is empty or has a non-finite coordinate.
void validate(const PointCloud& cloud);

}  // namespace dmp3dad
