#include "dmp3dad/projection.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "dmp3dad/error.hpp"

namespace dmp3dad {

namespace {

constexpr double kInf = ColumnDepths::kEmpty;

// Smoothing a constant depth leaves rounding noise around 1e-16; spans below
// this (relative to the depth) count as flat. Real depth steps are at least
// one lattice cell, about 0.017.
constexpr double kFlatSpan = 1e-9;

double dot(const Point3& p, const std::array<double, 3>& v) {
  return p.x * v[0] + p.y * v[1] + p.z * v[2];
}

/// Lattice cell of a camera-frame coordinate, or -1 outside [-1.1, 1.1).
int cell_of(double coord, int resolution) {
  const double t = (coord + kLatticeHalfExtent) / (2.0 * kLatticeHalfExtent) * resolution;
  if (!(t >= 0.0) || t >= resolution) return -1;
  return static_cast<int>(t);
}

/// Pixels whose centres fall inside lattice cell `cell`; at least one pixel.
std::pair<int, int> pixel_span(int cell, int resolution, int size) {
  const double scale = static_cast<double>(size) / resolution;
  int first = static_cast<int>(std::ceil(cell * scale - 0.5));
  int last = static_cast<int>(std::ceil((cell + 1) * scale - 0.5)) - 1;
  if (last < first) first = last = static_cast<int>((cell + 0.5) * scale);
  return {std::clamp(first, 0, size - 1), std::clamp(last, 0, size - 1)};
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  return k;
}

/// One separable pass with zero padding. `horizontal` convolves along rows.
std::vector<double> convolve1d(const std::vector<double>& src, int size,
                               const std::vector<double>& kernel, bool horizontal) {
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> dst(src.size(), 0.0);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int rr = horizontal ? r : r + k;
        const int cc = horizontal ? c + k : c;
        if (rr < 0 || rr >= size || cc < 0 || cc >= size) continue;
        acc += kernel[k + radius] * src[static_cast<std::size_t>(rr) * size + cc];
      }
      dst[static_cast<std::size_t>(r) * size + c] = acc;
    }
  }
  return dst;
}

}  // namespace

void validate(const ProjectionParams& p) {
  if (p.grid_resolution <= 0 || p.image_size <= 0 || p.densify_kernel < 0 ||
      !(p.smooth_sigma >= 0.0) || !(p.foreground_ceiling > 0.0 && p.foreground_ceiling < 1.0)) {
    throw InvalidArgument("invalid projection parameters");
  }
}

std::size_t ColumnDepths::occupied() const {
  return static_cast<std::size_t>(
      std::count_if(depth.begin(), depth.end(), [](double d) { return d != kEmpty; }));
}

ColumnDepths voxelize(const PointCloud& cloud, const CameraPose& pose,
                      const ProjectionParams& params) {
  validate(params);
  const CameraBasis basis = camera_basis(pose);
  const int g = params.grid_resolution;
  ColumnDepths out;
  out.resolution = g;
  out.depth.assign(static_cast<std::size_t>(g) * g, kInf);
  for (const auto& p : cloud.points) {
    const double x = dot(p, basis.right);
    const double y = dot(p, basis.up);
    const double z = dot(p, basis.forward);  // relative to the origin plane
    const int cx = cell_of(x, g);
    const int cy = cell_of(y, g);
    if (cx < 0 || cy < 0 || cell_of(z, g) < 0) continue;
    const double depth = pose.radius + z;
    auto& slot = out.depth[static_cast<std::size_t>(cy) * g + cx];
    slot = std::min(slot, depth);
  }
  return out;
}

DepthField render_depth_field(const PointCloud& cloud, const CameraPose& pose,
                              const ProjectionParams& params) {
  const ColumnDepths columns = voxelize(cloud, pose, params);
  const int g = columns.resolution;
  const int s = params.image_size;
  const auto npix = static_cast<std::size_t>(s) * s;

  DepthField field;
  field.size = s;
  field.splat.assign(npix, kInf);
  for (int cy = 0; cy < g; ++cy) {
    const auto [y0, y1] = pixel_span(cy, g, s);
    for (int cx = 0; cx < g; ++cx) {
      const double d = columns.at(cx, cy);
      if (d == kInf) continue;
      const auto [x0, x1] = pixel_span(cx, g, s);
      // Lattice y grows upwards, image rows grow downwards.
      for (int py = y0; py <= y1; ++py) {
        const int row = s - 1 - py;
        for (int px = x0; px <= x1; ++px) {
          auto& slot = field.splat[static_cast<std::size_t>(row) * s + px];
          slot = std::min(slot, d);
        }
      }
    }
  }

  // Min-filter dilation over a disk of radius densify_kernel.
  const int k = params.densify_kernel;
  std::vector<std::pair<int, int>> disk;
  for (int dy = -k; dy <= k; ++dy)
    for (int dx = -k; dx <= k; ++dx)
      if (dx * dx + dy * dy <= k * k) disk.emplace_back(dy, dx);
  field.densified.assign(npix, kInf);
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c < s; ++c) {
      double best = kInf;
      for (const auto& [dy, dx] : disk) {
        const int rr = r + dy;
        const int cc = c + dx;
        if (rr < 0 || rr >= s || cc < 0 || cc >= s) continue;
        best = std::min(best, field.splat[static_cast<std::size_t>(rr) * s + cc]);
      }
      field.densified[static_cast<std::size_t>(r) * s + c] = best;
    }
  }

  // Normalised convolution restricted to the foreground: background pixels
  // neither receive nor contribute depth.
  field.depth = field.densified;
  if (params.smooth_sigma > 0.0) {
    const auto kernel = gaussian_kernel(params.smooth_sigma);
    std::vector<double> num(npix, 0.0);
    std::vector<double> den(npix, 0.0);
    for (std::size_t i = 0; i < npix; ++i) {
      if (field.densified[i] != kInf) {
        num[i] = field.densified[i];
        den[i] = 1.0;
      }
    }
    num = convolve1d(convolve1d(num, s, kernel, true), s, kernel, false);
    den = convolve1d(convolve1d(den, s, kernel, true), s, kernel, false);
    for (std::size_t i = 0; i < npix; ++i) {
      if (field.densified[i] != kInf) field.depth[i] = num[i] / den[i];
    }
  }
  return field;
}

DepthImage render_view(const PointCloud& cloud, const CameraPose& pose,
                       const ProjectionParams& params, int view_index) {
  const DepthField field = render_depth_field(cloud, pose, params);
  DepthImage img;
  img.height = img.width = field.size;
  img.view_index = view_index;
  img.intensities.assign(field.depth.size(), kBackground);

  double lo = kInf;
  double hi = -kInf;
  for (double d : field.depth) {
    if (d == kInf) continue;
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  if (lo == kInf) return img;
  double span = hi - lo;
  if (span <= kFlatSpan * std::max(1.0, std::abs(hi))) span = 0.0;
  for (std::size_t i = 0; i < field.depth.size(); ++i) {
    const double d = field.depth[i];
    if (d == kInf) continue;
    const double t = span > 0.0 ? (d - lo) / span : 0.0;
    img.intensities[i] = static_cast<float>(params.foreground_ceiling * t);
  }
  return img;
}

std::vector<DepthImage> render_all_views(const PointCloud& cloud, const ViewGrid& grid,
                                         const ProjectionParams& params) {
  std::vector<DepthImage> out;
  out.reserve(grid.size());
  for (std::size_t v = 0; v < grid.size(); ++v) {
    out.push_back(render_view(cloud, grid.views[v], params, static_cast<int>(v)));
  }
  return out;
}

void write_png(const DepthImage& image, const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(image.width);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const double v = std::clamp(static_cast<double>(image.at(r, c)), 0.0, 1.0);
      row[c] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace dmp3dad
