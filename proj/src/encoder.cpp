#include "dmp3dad/encoder.hpp"

#include "dmp3dad/log.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dmp3dad/error.hpp"
#include "dmp3dad/hash.hpp"
#include "dmp3dad/onnx/session.hpp"
#include "dmp3dad/rng.hpp"

namespace dmp3dad {

namespace {

constexpr int kMockGrid = 16;

class MockBackend final : public EncoderBackend {
 public:
  MockBackend(std::uint64_t seed, int dim)
      : id_("mock-s" + std::to_string(seed) + "-c" + std::to_string(dim)), dim_(dim) {
    Xoshiro256 rng(seed);
    projection_.resize(static_cast<std::size_t>(kMockGrid * kMockGrid) * dim);
    for (auto& w : projection_) w = 2.0 * rng.uniform() - 1.0;
  }

  const std::string& id() const override { return id_; }
  int dim() const override { return dim_; }
  std::optional<InputSpec> input_spec() const override { return InputSpec{}; }
  std::string backbone_name() const override { return "mock"; }

  std::vector<float> embed(const EncoderInput& input) const override {
    const int s = input.size;
    const auto plane = static_cast<std::size_t>(s) * s;
    std::vector<double> pooled(kMockGrid * kMockGrid, 0.0);
    for (int by = 0; by < kMockGrid; ++by) {
      const int y0 = by * s / kMockGrid, y1 = (by + 1) * s / kMockGrid;
      for (int bx = 0; bx < kMockGrid; ++bx) {
        const int x0 = bx * s / kMockGrid, x1 = (bx + 1) * s / kMockGrid;
        double acc = 0.0;
        for (int c = 0; c < 3; ++c)
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) acc += input.chw[c * plane + static_cast<std::size_t>(y) * s + x];
        const int count = 3 * (y1 - y0) * (x1 - x0);
        pooled[by * kMockGrid + bx] = count ? acc / count : 0.0;
      }
    }
    std::vector<float> out(dim_);
    for (int j = 0; j < dim_; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < pooled.size(); ++k) acc += pooled[k] * projection_[k * dim_ + j];
      out[j] = static_cast<float>(acc);
    }
    return out;
  }

 private:
  std::string id_;
  int dim_;
  std::vector<double> projection_;  // 256 x C
};

std::vector<float> parse_float_list(const std::string& text) {
  std::string cleaned = text;
  for (char& c : cleaned) {
    if (c == ',' || c == '[' || c == ']' || c == '(' || c == ')') c = ' ';
  }
  std::istringstream ss(cleaned);
  std::vector<float> out;
  float v;
  while (ss >> v) out.push_back(v);
  if (!ss.eof()) throw ModelError("malformed numeric metadata: " + text);
  return out;
}

class OnnxBackend final : public EncoderBackend {
 public:
  OnnxBackend(std::string id, onnx::Model model) : id_(std::move(id)), session_(std::move(model)) {
    const auto& g = session_.model().graph;
    if (g.inputs.size() != 1) throw ModelError("model must have exactly one image input");
    if (g.outputs.size() != 1) throw ModelError("model must have exactly one vector output");
    const auto& meta = session_.model().metadata;

    const auto& in_shape = g.inputs[0].shape;
    if (in_shape && in_shape->size() != 4) {
      throw ModelError("image input must be rank 4 (N, 3, H, W), got " + onnx::shape_string(*in_shape));
    }
    if (in_shape && (*in_shape)[1] > 0 && (*in_shape)[1] != 3) {
      throw ModelError("image input must have 3 channels, got " + onnx::shape_string(*in_shape));
    }

    std::optional<int> size;
    if (auto it = meta.find("input_size"); it != meta.end()) {
      const auto values = parse_float_list(it->second);
      if (values.empty() || values[0] <= 0) throw ModelError("invalid input_size metadata");
      size = static_cast<int>(values[0]);
    }
    if (in_shape) {
      const auto h = (*in_shape)[2], w = (*in_shape)[3];
      if (h > 0 && w > 0 && h != w) throw ModelError("image input must be square");
      if (h > 0 && size && *size != h) {
        throw ModelError("input_size metadata (" + std::to_string(*size) +
                         ") disagrees with the graph input " + onnx::shape_string(*in_shape));
      }
      if (!size && h > 0) size = static_cast<int>(h);
    }
    if (size) {
      InputSpec spec;
      spec.size = *size;
      if (auto it = meta.find("mean"); it != meta.end()) spec.mean = channel_triple(it->second, "mean");
      if (auto it = meta.find("std"); it != meta.end()) spec.std = channel_triple(it->second, "std");
      if (!meta.contains("mean") || !meta.contains("std")) {
        logger().warn("model {} has no mean/std metadata; using identity normalisation", id_);
      }
      spec_ = spec;
    }
    if (auto it = meta.find("backbone_name"); it != meta.end()) backbone_ = it->second;

    const auto& out_shape = g.outputs[0].shape;
    if (out_shape && (out_shape->empty() || out_shape->size() > 2)) {
      throw ModelError("output must be a vector per image, got " + onnx::shape_string(*out_shape));
    }
    if (out_shape && out_shape->back() > 0) {
      dim_ = static_cast<int>(out_shape->back());
    } else if (spec_) {
      EncoderInput probe{spec_->size, std::vector<float>(3 * static_cast<std::size_t>(spec_->size) * spec_->size)};
      dim_ = static_cast<int>(embed(probe).size());
    } else {
      throw ModelError("cannot determine output dimension");
    }
  }

  const std::string& id() const override { return id_; }
  int dim() const override { return dim_; }
  std::optional<InputSpec> input_spec() const override { return spec_; }
  std::string backbone_name() const override { return backbone_; }

  std::vector<float> embed(const EncoderInput& input) const override {
    std::vector<onnx::Tensor> inputs;
    inputs.push_back(onnx::Tensor::floats({1, 3, input.size, input.size}, input.chw));
    auto outputs = session_.run(std::move(inputs));
    onnx::Tensor& out = outputs.at(0);
    if (out.kind != onnx::ElemKind::f32) throw ModelError("model output is not floating point");
    if (dim_ > 0 && static_cast<int>(out.f.size()) != dim_) {
      throw ModelError("model output has " + std::to_string(out.f.size()) + " values, expected " +
                       std::to_string(dim_));
    }
    return std::move(out.f);
  }

 private:
  static std::array<float, 3> channel_triple(const std::string& text, const char* key) {
    const auto v = parse_float_list(text);
    if (v.size() == 1) return {v[0], v[0], v[0]};
    if (v.size() != 3) throw ModelError(std::string("metadata '") + key + "' must hold 1 or 3 values");
    return {v[0], v[1], v[2]};
  }

  std::string id_;
  onnx::Session session_;
  std::optional<InputSpec> spec_;
  std::string backbone_ = "unknown";
  int dim_ = 0;
};

}  // namespace

void l2_normalize(std::span<float> v) {
  double ss = 0.0;
  for (float x : v) ss += static_cast<double>(x) * x;
  if (ss <= 0.0) return;
  const double inv = 1.0 / std::sqrt(ss);
  for (float& x : v) x = static_cast<float>(x * inv);
}

std::vector<float> resize_bilinear(std::span<const float> src, int src_h, int src_w, int dst_h,
                                   int dst_w) {
  std::vector<float> dst(static_cast<std::size_t>(dst_h) * dst_w);
  if (src_h == dst_h && src_w == dst_w) {
    std::copy(src.begin(), src.end(), dst.begin());
    return dst;
  }
  const double sy = static_cast<double>(src_h) / dst_h;
  const double sx = static_cast<double>(src_w) / dst_w;
  for (int y = 0; y < dst_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src_h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src_h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dst_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src_w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src_w - 1);
      const double wx = fx - x0;
      const auto at = [&](int r, int c) { return static_cast<double>(src[static_cast<std::size_t>(r) * src_w + c]); };
      const double top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
      const double bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
      dst[static_cast<std::size_t>(y) * dst_w + x] = static_cast<float>(top * (1.0 - wy) + bottom * wy);
    }
  }
  return dst;
}

EncoderInput preprocess(const DepthImage& image, const EncoderBackend& backend) {
  const auto spec = backend.input_spec();
  if (!spec) throw ModelError("backend " + backend.id() + " declares no input size");
  const int s = spec->size;
  const auto gray = resize_bilinear(image.intensities, image.height, image.width, s, s);
  EncoderInput out;
  out.size = s;
  const auto plane = gray.size();
  out.chw.resize(3 * plane);
  for (int c = 0; c < 3; ++c) {
    const float mean = spec->mean[c];
    const float inv = 1.0f / spec->std[c];
    for (std::size_t k = 0; k < plane; ++k) out.chw[c * plane + k] = (gray[k] - mean) * inv;
  }
  return out;
}

FeatureMatrix encode_views(std::span<const DepthImage> images, const EncoderBackend& backend) {
  if (images.empty()) throw InvalidArgument("encode_views needs at least one image");
  FeatureMatrix fm;
  fm.views = static_cast<int>(images.size());
  fm.dim = backend.dim();
  fm.values.resize(static_cast<std::size_t>(fm.views) * fm.dim);
  for (int v = 0; v < fm.views; ++v) {
    auto raw = backend.embed(preprocess(images[v], backend));
    if (static_cast<int>(raw.size()) != fm.dim) {
      throw ModelError("backend " + backend.id() + " returned " + std::to_string(raw.size()) +
                       " values, expected " + std::to_string(fm.dim));
    }
    l2_normalize(raw);
    std::copy(raw.begin(), raw.end(), fm.row(v).begin());
  }
  return fm;
}

BackendPtr make_mock_backend(std::uint64_t seed, int dim) {
  if (dim < 8) throw InvalidArgument("mock backend needs C >= 8");
  return std::make_shared<MockBackend>(seed, dim);
}

BackendPtr load_model_backend(const std::filesystem::path& model_path) {
  std::ifstream in(model_path, std::ios::binary);
  if (!in) throw ModelError("cannot open model file: " + model_path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto bytes = std::as_bytes(std::span(buf.data(), buf.size()));
  std::string id = sha256_hex(bytes).substr(0, 32);
  onnx::Model model;
  try {
    model = onnx::parse_model(bytes, model_path.parent_path());
  } catch (const ModelError& e) {
    throw ModelError("invalid model " + model_path.string() + ": " + e.what());
  }
  return std::make_shared<OnnxBackend>(std::move(id), std::move(model));
}

}  // namespace dmp3dad
