#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmp3dad/projection.hpp"

namespace dmp3dad {

/// V x C matrix of per-view embeddings, one unit-norm row per view.
struct FeatureMatrix {
  int views = 0;
  int dim = 0;
  std::vector<float> values;  ///< row-major

  std::span<const float> row(int v) const {
    return {values.data() + static_cast<std::size_t>(v) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<float> row(int v) {
    return {values.data() + static_cast<std::size_t>(v) * dim, static_cast<std::size_t>(dim)};
  }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

/// Square RGB input geometry and per-channel normalisation of a backbone.
struct InputSpec {
  int size = 224;
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> std{1.0f, 1.0f, 1.0f};
};

/// CHW float tensor ready for a backend.
struct EncoderInput {
  int size = 0;
  std::vector<float> chw;  ///< 3 * size * size
};

/// Frozen image-to-vector encoder. Implementations must be safe to call
/// concurrently from several threads.
class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;

  /// Stable identity; equal ids promise equal outputs.
  virtual const std::string& id() const = 0;
  virtual int dim() const = 0;
  virtual std::optional<InputSpec> input_spec() const = 0;
  virtual std::string backbone_name() const = 0;

  /// Raw, unnormalised embedding of one preprocessed image.
  virtual std::vector<float> embed(const EncoderInput& input) const = 0;
};

using BackendPtr = std::shared_ptr<const EncoderBackend>;

/// Bilinear resize (half-pixel centres) to the backend's square input,
/// replicate to three channels, then (x - mean) / std per channel.
EncoderInput preprocess(const DepthImage& image, const EncoderBackend& backend);

/// Bilinear resample of a single-channel row-major image.
std::vector<float> resize_bilinear(std::span<const float> src, int src_h, int src_w, int dst_h,
                                   int dst_w);

/// Encodes each view independently and l2-normalises every row.
FeatureMatrix encode_views(std::span<const DepthImage> images, const EncoderBackend& backend);

/// Deterministic stand-in encoder: 16x16 mean pool, fixed seed-derived
/// 256 x C projection, l2 normalisation. Requires C >= 8.
BackendPtr make_mock_backend(std::uint64_t seed, int dim);

/// Loads an ONNX image encoder with metadata keys input_size, mean, std and
/// backbone_name. backend id = SHA-256 of the file contents.
BackendPtr load_model_backend(const std::filesystem::path& model_path);

/// In-place l2 normalisation; a zero vector is left unchanged.
void l2_normalize(std::span<float> v);

}  // namespace dmp3dad
