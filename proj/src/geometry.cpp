#include "dmp3dad/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dmp3dad/error.hpp"

namespace dmp3dad {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary cloud I/O assumes a little-endian host");

bool parse_double(std::string_view token, double& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::string read_all(const std::filesystem::path& path, std::ios::openmode mode) {
  std::ifstream in(path, mode);
  if (!in) throw ParseError("cannot open point cloud file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

}  // namespace

CloudFormat parse_cloud_format(std::string_view name) {
  if (name == "pts_text" || name == "pts") return CloudFormat::pts_text;
  if (name == "xyz_binary" || name == "xyz") return CloudFormat::xyz_binary;
  throw InvalidArgument("unknown point cloud format: " + std::string(name));
}

std::string_view to_string(CloudFormat format) {
  return format == CloudFormat::pts_text ? "pts_text" : "xyz_binary";
}

void validate(const PointCloud& cloud) {
  if (cloud.points.empty()) throw InvalidArgument("point cloud has no points");
  for (const auto& p : cloud.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw InvalidArgument("point cloud has a non-finite coordinate: " + cloud.source_id);
    }
  }
}

PointCloud parse_pts_text(std::string_view text, std::string source_id) {
  PointCloud cloud;
  cloud.source_id = std::move(source_id);
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;

    double xyz[3];
    int count = 0;
    bool bad = false;
    std::size_t pos = 0;
    while (pos < line.size()) {
      while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
      if (pos == line.size()) break;
      std::size_t end = pos;
      while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end]))) ++end;
      if (count == 3 || !parse_double(line.substr(pos, end - pos), xyz[count])) {
        bad = true;
        break;
      }
      ++count;
      pos = end;
    }
    if (count == 0 && !bad) continue;  // blank line
    if (bad || count != 3 || !std::isfinite(xyz[0]) || !std::isfinite(xyz[1]) ||
        !std::isfinite(xyz[2])) {
      throw ParseError("malformed point record at line " + std::to_string(line_no) +
                       (cloud.source_id.empty() ? "" : " of " + cloud.source_id));
    }
    cloud.points.push_back({xyz[0], xyz[1], xyz[2]});
  }
  if (cloud.points.empty()) {
    throw ParseError("point cloud has zero points" +
                     (cloud.source_id.empty() ? "" : ": " + cloud.source_id));
  }
  return cloud;
}

PointCloud load_point_cloud(const std::filesystem::path& path, CloudFormat format) {
  const std::string source_id = path.lexically_normal().generic_string();
  if (format == CloudFormat::pts_text) {
    return parse_pts_text(read_all(path, std::ios::in), source_id);
  }

  const std::string bytes = read_all(path, std::ios::binary);
  if (bytes.size() < sizeof(std::uint64_t)) {
    throw ParseError("binary point cloud is missing its count header: " + source_id);
  }
  std::uint64_t count = 0;
  std::memcpy(&count, bytes.data(), sizeof(count));
  const std::size_t payload = bytes.size() - sizeof(count);
  if (count == 0) throw ParseError("point cloud has zero points: " + source_id);
  if (payload != count * 3 * sizeof(float)) {
    throw ParseError("binary point cloud size mismatch (header says " +
                     std::to_string(count) + " points): " + source_id);
  }
  PointCloud cloud;
  cloud.source_id = source_id;
  cloud.points.resize(count);
  const char* src = bytes.data() + sizeof(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    float xyz[3];
    std::memcpy(xyz, src + i * sizeof(xyz), sizeof(xyz));
    if (!std::isfinite(xyz[0]) || !std::isfinite(xyz[1]) || !std::isfinite(xyz[2])) {
      throw ParseError("non-finite coordinate in record " + std::to_string(i + 1) +
                       " of " + source_id);
    }
    cloud.points[i] = {xyz[0], xyz[1], xyz[2]};
  }
  return cloud;
}

void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                      CloudFormat format) {
  std::ofstream out(path, format == CloudFormat::xyz_binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error("cannot write point cloud file: " + path.string());
  if (format == CloudFormat::pts_text) {
    char buf[96];
    for (const auto& p : cloud.points) {
      const int n = std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p.x, p.y, p.z);
      out.write(buf, n);
    }
  } else {
    const std::uint64_t count = cloud.points.size();
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& p : cloud.points) {
      const float xyz[3] = {static_cast<float>(p.x), static_cast<float>(p.y),
                            static_cast<float>(p.z)};
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
  }
  if (!out) throw Error("failed writing point cloud file: " + path.string());
}

NormalizedCloud normalize_to_unit_cube(const PointCloud& cloud) {
  validate(cloud);
  const double n = static_cast<double>(cloud.points.size());
  // Two-pass centroid: the mean of the residuals corrects the first pass's
  // rounding error, which keeps repeated normalisation a fixed point.
  double cx = 0, cy = 0, cz = 0;
  for (const auto& p : cloud.points) {
    cx += p.x;
    cy += p.y;
    cz += p.z;
  }
  cx /= n;
  cy /= n;
  cz /= n;
  double rx = 0, ry = 0, rz = 0;
  for (const auto& p : cloud.points) {
    rx += p.x - cx;
    ry += p.y - cy;
    rz += p.z - cz;
  }
  cx += rx / n;
  cy += ry / n;
  cz += rz / n;

  const bool coincident = std::all_of(cloud.points.begin(), cloud.points.end(),
                                      [&](const Point3& p) { return p == cloud.points.front(); });
  double extent = 0.0;
  for (const auto& p : cloud.points) {
    extent = std::max({extent, std::abs(p.x - cx), std::abs(p.y - cy), std::abs(p.z - cz)});
  }

  NormalizedCloud out;
  out.cloud.source_id = cloud.source_id;
  out.cloud.points.resize(cloud.points.size());
  if (coincident || !(extent > 0.0)) {
    out.degenerate = true;
    return out;
  }
  const double scale = 1.0 / extent;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    out.cloud.points[i] = {(p.x - cx) * scale, (p.y - cy) * scale, (p.z - cz) * scale};
  }
  return out;
}

}  // namespace dmp3dad
