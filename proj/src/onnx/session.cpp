#include "dmp3dad/onnx/session.hpp"

#include <cblas.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <unordered_map>

#include "dmp3dad/error.hpp"

namespace dmp3dad::onnx {

namespace {

using Inputs = std::vector<const Tensor*>;
using Outputs = std::vector<Tensor>;
using OpFn = std::function<void(const Node&, std::int64_t opset, const Inputs&, Outputs&)>;

[[noreturn]] void fail(const Node& node, const std::string& what) {
  throw ModelError(node.op_type + (node.name.empty() ? "" : " '" + node.name + "'") + ": " + what);
}

const Tensor& need(const Node& node, const Inputs& in, std::size_t k) {
  if (k >= in.size() || in[k] == nullptr) fail(node, "missing input " + std::to_string(k));
  return *in[k];
}

const Tensor* optional_input(const Inputs& in, std::size_t k) {
  return k < in.size() ? in[k] : nullptr;
}

std::int64_t norm_axis(const Node& node, std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < -r || axis >= std::max<std::int64_t>(r, 1)) fail(node, "axis out of range");
  return axis < 0 ? axis + r : axis;
}

Shape strides_of(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (int d = static_cast<int>(shape.size()) - 2; d >= 0; --d) s[d] = s[d + 1] * shape[d + 1];
  return s;
}

std::vector<std::int64_t> as_ints(const Node& node, const Tensor& t) {
  if (t.kind == ElemKind::f32) {
    std::vector<std::int64_t> out;
    for (float v : t.f) out.push_back(static_cast<std::int64_t>(v));
    return out;
  }
  (void)node;
  return t.i;
}

Shape broadcast_shape(const Node& node, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::int64_t da = k + a.size() >= r ? a[k + a.size() - r] : 1;
    const std::int64_t db = k + b.size() >= r ? b[k + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1) {
      fail(node, "incompatible broadcast " + shape_string(a) + " vs " + shape_string(b));
    }
    out[k] = da == 1 ? db : da;
  }
  return out;
}

/// Walks an output shape in row-major order while tracking one strided
/// offset per operand.
template <std::size_t N>
struct StridedWalk {
  Shape shape;
  std::array<Shape, N> strides;

  template <typename F>
  void run(F&& f) const {
    const std::size_t r = shape.size();
    const std::int64_t total = numel(shape);
    if (total == 0) return;
    if (r == 0) {
      f(std::int64_t{0}, std::array<std::int64_t, N>{});
      return;
    }
    const std::int64_t inner = shape[r - 1];
    std::array<std::int64_t, N> inner_stride{};
    for (std::size_t k = 0; k < N; ++k) inner_stride[k] = strides[k][r - 1];
    std::array<std::int64_t, N> base{};
    Shape idx(r, 0);
    for (std::int64_t o = 0; o < total; o += inner) {
      auto p = base;
      for (std::int64_t j = 0; j < inner; ++j) {
        f(o + j, p);
        for (std::size_t k = 0; k < N; ++k) p[k] += inner_stride[k];
      }
      for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
        ++idx[d];
        for (std::size_t k = 0; k < N; ++k) base[k] += strides[k][d];
        if (idx[d] < shape[d]) break;
        for (std::size_t k = 0; k < N; ++k) base[k] -= strides[k][d] * shape[d];
        idx[d] = 0;
      }
    }
  }
};

/// Strides of `in` aligned to `out` with zeros on broadcast dimensions.
Shape broadcast_strides(const Shape& in, const Shape& out) {
  Shape s(out.size(), 0);
  const Shape own = strides_of(in);
  const std::size_t off = out.size() - in.size();
  for (std::size_t k = 0; k < in.size(); ++k) s[k + off] = in[k] == 1 ? 0 : own[k];
  return s;
}

template <typename A, typename B, typename R, typename F>
void broadcast_binary(const Shape& as, const std::vector<A>& a, const Shape& bs,
                      const std::vector<B>& b, const Shape& out_shape, std::vector<R>& out, F f) {
  out.resize(numel(out_shape));
  if (as == bs) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(a[k], b[k]);
    return;
  }
  if (b.size() == 1 && as == out_shape) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(a[k], b[0]);
    return;
  }
  if (a.size() == 1 && bs == out_shape) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(a[0], b[k]);
    return;
  }
  // Trailing-suffix operand, e.g. bias [C] against [N, T, C].
  if (as == out_shape && bs.size() <= as.size() &&
      std::equal(bs.begin(), bs.end(), as.end() - static_cast<std::ptrdiff_t>(bs.size()))) {
    const std::size_t m = b.size();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(a[k], b[k % m]);
    return;
  }
  StridedWalk<2> walk{out_shape, {broadcast_strides(as, out_shape), broadcast_strides(bs, out_shape)}};
  walk.run([&](std::int64_t o, const std::array<std::int64_t, 2>& p) { out[o] = f(a[p[0]], b[p[1]]); });
}

// ---- elementwise ----------------------------------------------------------

template <typename FF, typename FI>
void arith(const Node& node, const Inputs& in, Outputs& out, FF ff, FI fi) {
  const Tensor& a = need(node, in, 0);
  const Tensor& b = need(node, in, 1);
  const Shape shape = broadcast_shape(node, a.shape, b.shape);
  Tensor& r = out[0];
  r.shape = shape;
  if (a.kind == ElemKind::f32 && b.kind == ElemKind::f32) {
    r.kind = ElemKind::f32;
    broadcast_binary(a.shape, a.f, b.shape, b.f, shape, r.f, ff);
  } else if (a.kind != ElemKind::f32 && b.kind != ElemKind::f32) {
    r.kind = ElemKind::i64;
    broadcast_binary(a.shape, a.i, b.shape, b.i, shape, r.i, fi);
  } else {
    fail(node, "mixed element types");
  }
}

void op_pow(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& a = need(node, in, 0);
  const Tensor& b = need(node, in, 1);
  if (a.kind != ElemKind::f32) fail(node, "integer base not supported");
  std::vector<float> exponent = b.f;
  if (b.kind != ElemKind::f32) exponent.assign(b.i.begin(), b.i.end());
  const Shape shape = broadcast_shape(node, a.shape, b.shape);
  out[0].kind = ElemKind::f32;
  out[0].shape = shape;
  broadcast_binary(a.shape, a.f, b.shape, exponent, shape, out[0].f, [](float x, float y) {
    if (y == 2.0f) return x * x;
    if (y == 0.5f) return std::sqrt(x);
    return std::pow(x, y);
  });
}

template <typename Cmp>
void compare(const Node& node, const Inputs& in, Outputs& out, Cmp cmp) {
  const Tensor& a = need(node, in, 0);
  const Tensor& b = need(node, in, 1);
  const Shape shape = broadcast_shape(node, a.shape, b.shape);
  out[0].kind = ElemKind::boolean;
  out[0].shape = shape;
  if (a.kind == ElemKind::f32 && b.kind == ElemKind::f32) {
    broadcast_binary(a.shape, a.f, b.shape, b.f, shape, out[0].i,
                     [&](float x, float y) -> std::int64_t { return cmp(x, y); });
  } else if (a.kind != ElemKind::f32 && b.kind != ElemKind::f32) {
    broadcast_binary(a.shape, a.i, b.shape, b.i, shape, out[0].i,
                     [&](std::int64_t x, std::int64_t y) -> std::int64_t { return cmp(x, y); });
  } else {
    fail(node, "mixed element types");
  }
}

template <typename F>
OpFn unary_float(F f) {
  return [f](const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
    const Tensor& x = need(node, in, 0);
    if (x.kind != ElemKind::f32) fail(node, "expects a floating tensor");
    out[0].kind = ElemKind::f32;
    out[0].shape = x.shape;
    out[0].f.resize(x.f.size());
    std::transform(x.f.begin(), x.f.end(), out[0].f.begin(), f);
  };
}

template <typename FF, typename FI>
OpFn unary_any(FF ff, FI fi) {
  return [ff, fi](const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
    const Tensor& x = need(node, in, 0);
    out[0] = x;
    if (x.kind == ElemKind::f32) std::transform(x.f.begin(), x.f.end(), out[0].f.begin(), ff);
    else std::transform(x.i.begin(), x.i.end(), out[0].i.begin(), fi);
  };
}

void variadic(const Node& node, const Inputs& in, Outputs& out,
              const std::function<float(float, float)>& ff,
              const std::function<std::int64_t(std::int64_t, std::int64_t)>& fi) {
  Tensor acc = need(node, in, 0);
  for (std::size_t k = 1; k < in.size(); ++k) {
    Outputs tmp(1);
    const Inputs pair = {&acc, &need(node, in, k)};
    arith(node, pair, tmp, ff, fi);
    acc = std::move(tmp[0]);
  }
  out[0] = std::move(acc);
}

void op_where(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& c = need(node, in, 0);
  const Tensor& x = need(node, in, 1);
  const Tensor& y = need(node, in, 2);
  if (x.kind != y.kind) fail(node, "mixed element types");
  const Shape shape = broadcast_shape(node, broadcast_shape(node, c.shape, x.shape), y.shape);
  Tensor& r = out[0];
  r.kind = x.kind;
  r.shape = shape;
  StridedWalk<3> walk{shape,
                      {broadcast_strides(c.shape, shape), broadcast_strides(x.shape, shape),
                       broadcast_strides(y.shape, shape)}};
  if (x.kind == ElemKind::f32) {
    r.f.resize(numel(shape));
    walk.run([&](std::int64_t o, const auto& p) { r.f[o] = c.i[p[0]] ? x.f[p[1]] : y.f[p[2]]; });
  } else {
    r.i.resize(numel(shape));
    walk.run([&](std::int64_t o, const auto& p) { r.i[o] = c.i[p[0]] ? x.i[p[1]] : y.i[p[2]]; });
  }
}

void op_cast(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  const auto to = node.attr_int("to", 1);
  const bool to_float = to == 1 || to == 10 || to == 11 || to == 16;
  Tensor& r = out[0];
  r.shape = x.shape;
  if (to_float) {
    r.kind = ElemKind::f32;
    if (x.kind == ElemKind::f32) r.f = x.f;
    else r.f.assign(x.i.begin(), x.i.end());
    return;
  }
  r.kind = to == 9 ? ElemKind::boolean : ElemKind::i64;
  r.i.resize(x.size());
  if (x.kind == ElemKind::f32) {
    for (std::size_t k = 0; k < x.f.size(); ++k) {
      r.i[k] = r.kind == ElemKind::boolean ? (x.f[k] != 0.0f) : static_cast<std::int64_t>(x.f[k]);
    }
  } else {
    for (std::size_t k = 0; k < x.i.size(); ++k) {
      r.i[k] = r.kind == ElemKind::boolean ? (x.i[k] != 0) : x.i[k];
    }
  }
}

void op_clip(const Node& node, std::int64_t opset, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  if (x.kind != ElemKind::f32) fail(node, "expects a floating tensor");
  float lo = -std::numeric_limits<float>::infinity();
  float hi = std::numeric_limits<float>::infinity();
  if (opset < 11) {
    lo = node.attr_float("min", lo);
    hi = node.attr_float("max", hi);
  } else {
    if (const Tensor* t = optional_input(in, 1)) lo = t->f.at(0);
    if (const Tensor* t = optional_input(in, 2)) hi = t->f.at(0);
  }
  out[0] = x;
  for (auto& v : out[0].f) v = std::min(std::max(v, lo), hi);
}

// ---- linear algebra --------------------------------------------------------

void sgemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, const float* b,
           float beta, float* c) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, ta ? m : k, b, tb ? k : n, beta, c, n);
}

void op_matmul(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& a = need(node, in, 0);
  const Tensor& b = need(node, in, 1);
  if (a.kind != ElemKind::f32 || b.kind != ElemKind::f32) fail(node, "expects floating tensors");
  Shape as = a.shape;
  Shape bs = b.shape;
  const bool a_vec = as.size() == 1;
  const bool b_vec = bs.size() == 1;
  if (a_vec) as.insert(as.begin(), 1);
  if (b_vec) bs.push_back(1);
  if (as.size() < 2 || bs.size() < 2) fail(node, "rank-0 operand");
  const std::int64_t m = as[as.size() - 2];
  const std::int64_t k = as.back();
  const std::int64_t n = bs.back();
  if (bs[bs.size() - 2] != k) fail(node, "inner dimensions differ " + shape_string(a.shape) + " x " + shape_string(b.shape));
  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  const Shape batch = broadcast_shape(node, a_batch, b_batch);

  Shape shape = batch;
  if (!a_vec) shape.push_back(m);
  if (!b_vec) shape.push_back(n);
  Tensor& r = out[0];
  r.kind = ElemKind::f32;
  r.shape = shape;
  r.f.assign(numel(batch) * m * n, 0.0f);

  const Shape sa = broadcast_strides(a_batch, batch);
  const Shape sb = broadcast_strides(b_batch, batch);
  StridedWalk<2> walk{batch, {sa, sb}};
  walk.run([&](std::int64_t o, const std::array<std::int64_t, 2>& p) {
    sgemm(false, false, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f,
          a.f.data() + p[0] * m * k, b.f.data() + p[1] * k * n, 0.0f, r.f.data() + o * m * n);
  });
}

void op_gemm(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& a = need(node, in, 0);
  const Tensor& b = need(node, in, 1);
  const Tensor* c = optional_input(in, 2);
  const bool ta = node.attr_int("transA", 0) != 0;
  const bool tb = node.attr_int("transB", 0) != 0;
  const float alpha = node.attr_float("alpha", 1.0f);
  const float beta = node.attr_float("beta", 1.0f);
  if (a.rank() != 2 || b.rank() != 2) fail(node, "expects rank-2 operands");
  const std::int64_t m = ta ? a.shape[1] : a.shape[0];
  const std::int64_t k = ta ? a.shape[0] : a.shape[1];
  const std::int64_t n = tb ? b.shape[0] : b.shape[1];
  if ((tb ? b.shape[1] : b.shape[0]) != k) fail(node, "inner dimensions differ");
  Tensor& r = out[0];
  r.kind = ElemKind::f32;
  r.shape = {m, n};
  r.f.assign(m * n, 0.0f);
  if (c != nullptr && beta != 0.0f) {
    std::vector<float> tmp;
    broadcast_binary(Shape{m, n}, r.f, c->shape, c->f, r.shape, tmp,
                     [beta](float, float y) { return beta * y; });
    r.f = std::move(tmp);
  }
  sgemm(ta, tb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a.f.data(),
        b.f.data(), c != nullptr && beta != 0.0f ? 1.0f : 0.0f, r.f.data());
}

struct Window {
  std::vector<std::int64_t> kernel, strides, dilations, pads;  // pads: begins then ends
};

Window window_attrs(const Node& node, std::size_t spatial, const Shape& kernel_from_weights) {
  Window w;
  w.kernel = node.attr_ints("kernel_shape");
  if (w.kernel.empty()) w.kernel = kernel_from_weights;
  if (w.kernel.size() != spatial) fail(node, "kernel rank mismatch");
  w.strides = node.attr_ints("strides");
  if (w.strides.empty()) w.strides.assign(spatial, 1);
  w.dilations = node.attr_ints("dilations");
  if (w.dilations.empty()) w.dilations.assign(spatial, 1);
  w.pads = node.attr_ints("pads");
  if (w.pads.empty()) w.pads.assign(2 * spatial, 0);
  return w;
}

/// Resolves auto_pad and returns output spatial extents.
Shape window_output(const Node& node, Window& w, const Shape& in_spatial, bool ceil_mode) {
  const std::string auto_pad = node.attr_string("auto_pad", "NOTSET");
  const std::size_t n = in_spatial.size();
  Shape out(n);
  for (std::size_t d = 0; d < n; ++d) {
    const std::int64_t eff = (w.kernel[d] - 1) * w.dilations[d] + 1;
    if (auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
      out[d] = (in_spatial[d] + w.strides[d] - 1) / w.strides[d];
      const std::int64_t total = std::max<std::int64_t>(0, (out[d] - 1) * w.strides[d] + eff - in_spatial[d]);
      const std::int64_t small = total / 2;
      w.pads[d] = auto_pad == "SAME_UPPER" ? small : total - small;
      w.pads[d + n] = total - w.pads[d];
      continue;
    }
    if (auto_pad == "VALID") w.pads[d] = w.pads[d + n] = 0;
    const std::int64_t span = in_spatial[d] + w.pads[d] + w.pads[d + n] - eff;
    if (span < 0) fail(node, "window larger than padded input");
    out[d] = (ceil_mode ? (span + w.strides[d] - 1) / w.strides[d] : span / w.strides[d]) + 1;
    // A window may not start inside the trailing padding.
    if (ceil_mode && (out[d] - 1) * w.strides[d] >= in_spatial[d] + w.pads[d]) --out[d];
  }
  return out;
}

/// Lifts a rank-3 (1D spatial) tensor shape to rank 4.
Shape as_2d(const Shape& s) { return s.size() == 3 ? Shape{s[0], s[1], 1, s[2]} : s; }

void op_conv(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  const Tensor& wt = need(node, in, 1);
  const Tensor* bias = optional_input(in, 2);
  if (x.rank() != 4 && x.rank() != 3) fail(node, "only 1D/2D convolution is supported");
  const bool one_d = x.rank() == 3;
  const Shape xs = as_2d(x.shape);
  const Shape ws = as_2d(wt.shape);
  Window w = window_attrs(node, x.rank() - 2, Shape(wt.shape.begin() + 2, wt.shape.end()));
  if (one_d) {
    w.kernel.insert(w.kernel.begin(), 1);
    w.strides.insert(w.strides.begin(), 1);
    w.dilations.insert(w.dilations.begin(), 1);
    w.pads = {0, w.pads[0], 0, w.pads[1]};
  }
  const Shape osp = window_output(node, w, {xs[2], xs[3]}, false);
  const std::int64_t group = node.attr_int("group", 1);
  const std::int64_t batch = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const std::int64_t cout = ws[0], cg = ws[1], kh = ws[2], kw = ws[3];
  if (cin != cg * group || cout % group != 0) fail(node, "channel/group mismatch");
  const std::int64_t oh = osp[0], ow = osp[1];
  const std::int64_t mg = cout / group;
  const std::int64_t cols_rows = cg * kh * kw;

  Tensor& r = out[0];
  r.kind = ElemKind::f32;
  r.shape = one_d ? Shape{batch, cout, ow} : Shape{batch, cout, oh, ow};
  r.f.assign(batch * cout * oh * ow, 0.0f);
  std::vector<float> cols(cols_rows * oh * ow);
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t g = 0; g < group; ++g) {
      const float* src = x.f.data() + (n * cin + g * cg) * h * wd;
      for (std::int64_t c = 0; c < cg; ++c) {
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            float* row = cols.data() + ((c * kh + ky) * kw + kx) * oh * ow;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
              const std::int64_t iy = oy * w.strides[0] - w.pads[0] + ky * w.dilations[0];
              for (std::int64_t ox = 0; ox < ow; ++ox) {
                const std::int64_t ix = ox * w.strides[1] - w.pads[1] + kx * w.dilations[1];
                row[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < wd) ? src[(c * h + iy) * wd + ix] : 0.0f;
              }
            }
          }
        }
      }
      float* dst = r.f.data() + (n * cout + g * mg) * oh * ow;
      sgemm(false, false, static_cast<int>(mg), static_cast<int>(oh * ow), static_cast<int>(cols_rows),
            1.0f, wt.f.data() + g * mg * cols_rows, cols.data(), 0.0f, dst);
    }
    if (bias != nullptr) {
      for (std::int64_t c = 0; c < cout; ++c) {
        float* dst = r.f.data() + (n * cout + c) * oh * ow;
        for (std::int64_t p = 0; p < oh * ow; ++p) dst[p] += bias->f[c];
      }
    }
  }
}

void pool(const Node& node, const Inputs& in, Outputs& out, bool is_max) {
  const Tensor& x = need(node, in, 0);
  if (x.rank() != 4) fail(node, "only 2D pooling is supported");
  Window w = window_attrs(node, 2, {});
  const bool ceil_mode = node.attr_int("ceil_mode", 0) != 0;
  const bool include_pad = node.attr_int("count_include_pad", 0) != 0;
  const Shape osp = window_output(node, w, {x.shape[2], x.shape[3]}, ceil_mode);
  const std::int64_t nc = x.shape[0] * x.shape[1], h = x.shape[2], wd = x.shape[3];
  const std::int64_t oh = osp[0], ow = osp[1];
  Tensor& r = out[0];
  r.kind = ElemKind::f32;
  r.shape = {x.shape[0], x.shape[1], oh, ow};
  r.f.resize(nc * oh * ow);
  for (std::int64_t c = 0; c < nc; ++c) {
    const float* src = x.f.data() + c * h * wd;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const std::int64_t y0 = oy * w.strides[0] - w.pads[0];
        const std::int64_t x0 = ox * w.strides[1] - w.pads[1];
        float acc = is_max ? -std::numeric_limits<float>::infinity() : 0.0f;
        std::int64_t count = 0;
        for (std::int64_t ky = 0; ky < w.kernel[0]; ++ky) {
          const std::int64_t iy = y0 + ky * w.dilations[0];
          for (std::int64_t kx = 0; kx < w.kernel[1]; ++kx) {
            const std::int64_t ix = x0 + kx * w.dilations[1];
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            const float v = src[iy * wd + ix];
            acc = is_max ? std::max(acc, v) : acc + v;
            ++count;
          }
        }
        if (!is_max) {
          std::int64_t denom = count;
          if (include_pad) {
            const std::int64_t ye = std::min(y0 + w.kernel[0], h + w.pads[2]);
            const std::int64_t xe = std::min(x0 + w.kernel[1], wd + w.pads[3]);
            denom = (ye - y0) * (xe - x0);
          }
          acc = denom > 0 ? acc / static_cast<float>(denom) : 0.0f;
        }
        r.f[(c * oh + oy) * ow + ox] = acc;
      }
    }
  }
}

void global_pool(const Node& node, const Inputs& in, Outputs& out, bool is_max) {
  const Tensor& x = need(node, in, 0);
  if (x.rank() < 3) fail(node, "expects rank >= 3");
  std::int64_t spatial = 1;
  for (std::size_t d = 2; d < x.rank(); ++d) spatial *= x.shape[d];
  const std::int64_t nc = x.shape[0] * x.shape[1];
  Tensor& r = out[0];
  r.kind = ElemKind::f32;
  r.shape = x.shape;
  for (std::size_t d = 2; d < x.rank(); ++d) r.shape[d] = 1;
  r.f.resize(nc);
  for (std::int64_t c = 0; c < nc; ++c) {
    const float* src = x.f.data() + c * spatial;
    if (is_max) {
      r.f[c] = *std::max_element(src, src + spatial);
    } else {
      double acc = 0.0;
      for (std::int64_t p = 0; p < spatial; ++p) acc += src[p];
      r.f[c] = static_cast<float>(acc / spatial);
    }
  }
}

void op_batchnorm(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  const Tensor& scale = need(node, in, 1);
  const Tensor& bias = need(node, in, 2);
  const Tensor& mean = need(node, in, 3);
  const Tensor& var = need(node, in, 4);
  const float eps = node.attr_float("epsilon", 1e-5f);
  if (x.rank() < 2) fail(node, "expects rank >= 2");
  const std::int64_t n = x.shape[0], c = x.shape[1];
  const std::int64_t inner = x.size() / std::max<std::int64_t>(1, n * c);
  out[0] = x;
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float s = scale.f[ch] / std::sqrt(var.f[ch] + eps);
      const float t = bias.f[ch] - mean.f[ch] * s;
      float* p = out[0].f.data() + (b * c + ch) * inner;
      for (std::int64_t k = 0; k < inner; ++k) p[k] = p[k] * s + t;
    }
  }
}

void softmax(const Node& node, std::int64_t opset, const Inputs& in, Outputs& out, bool log) {
  const Tensor& x = need(node, in, 0);
  const std::int64_t axis = norm_axis(node, node.attr_int("axis", opset >= 13 ? -1 : 1), x.rank());
  std::int64_t outer = 1, len = 1, inner = 1;
  for (std::int64_t d = 0; d < static_cast<std::int64_t>(x.rank()); ++d) {
    if (d < axis) outer *= x.shape[d];
    else if (d == axis || opset < 13) len *= x.shape[d];
    else inner *= x.shape[d];
  }
  out[0] = x;
  float* data = out[0].f.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      float* p = data + o * len * inner + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t k = 0; k < len; ++k) mx = std::max(mx, p[k * inner]);
      double sum = 0.0;
      for (std::int64_t k = 0; k < len; ++k) sum += std::exp(static_cast<double>(p[k * inner] - mx));
      for (std::int64_t k = 0; k < len; ++k) {
        const double z = p[k * inner] - mx;
        p[k * inner] = static_cast<float>(log ? z - std::log(sum) : std::exp(z) / sum);
      }
    }
  }
}

void op_layernorm(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  const Tensor& scale = need(node, in, 1);
  const Tensor* bias = optional_input(in, 2);
  const std::int64_t axis = norm_axis(node, node.attr_int("axis", -1), x.rank());
  const float eps = node.attr_float("epsilon", 1e-5f);
  std::int64_t outer = 1, len = 1;
  for (std::int64_t d = 0; d < static_cast<std::int64_t>(x.rank()); ++d) (d < axis ? outer : len) *= x.shape[d];
  const auto sc = scale.f.size();
  const auto bc = bias ? bias->f.size() : 0;
  out[0] = x;
  Shape stat_shape = x.shape;
  for (std::size_t d = axis; d < stat_shape.size(); ++d) stat_shape[d] = 1;
  if (out.size() > 1) out[1] = Tensor::floats(stat_shape);
  if (out.size() > 2) out[2] = Tensor::floats(stat_shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    float* p = out[0].f.data() + o * len;
    double mean = 0.0;
    for (std::int64_t k = 0; k < len; ++k) mean += p[k];
    mean /= len;
    double var = 0.0;
    for (std::int64_t k = 0; k < len; ++k) var += (p[k] - mean) * (p[k] - mean);
    var /= len;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::int64_t k = 0; k < len; ++k) {
      float v = static_cast<float>((p[k] - mean) * inv) * scale.f[k % sc];
      if (bias) v += bias->f[k % bc];
      p[k] = v;
    }
    if (out.size() > 1) out[1].f[o] = static_cast<float>(mean);
    if (out.size() > 2) out[2].f[o] = static_cast<float>(inv);
  }
}

// ---- reductions -------------------------------------------------------------

enum class Reduce { sum, mean, max, min, prod, l2, sum_square };

void reduce(const Node& node, std::int64_t opset, const Inputs& in, Outputs& out, Reduce kind) {
  const Tensor& x = need(node, in, 0);
  std::vector<std::int64_t> axes = node.attr_ints("axes");
  const bool axes_from_input = (kind == Reduce::sum && opset >= 13) || opset >= 18;
  if (axes_from_input) {
    if (const Tensor* t = optional_input(in, 1)) axes = as_ints(node, *t);
  }
  const bool keepdims = node.attr_int("keepdims", 1) != 0;
  const bool noop_empty = node.attr_int("noop_with_empty_axes", 0) != 0;
  if (axes.empty() && noop_empty) {
    out[0] = x;
    return;
  }
  std::vector<bool> reduced(x.rank(), axes.empty());
  for (auto a : axes) reduced[norm_axis(node, a, x.rank())] = true;

  Shape kept_shape = x.shape;  // keepdims form
  for (std::size_t d = 0; d < x.rank(); ++d) if (reduced[d]) kept_shape[d] = 1;
  const Shape out_strides = strides_of(kept_shape);
  Shape walk_strides(x.rank(), 0);
  for (std::size_t d = 0; d < x.rank(); ++d) walk_strides[d] = reduced[d] ? 0 : out_strides[d];

  const std::int64_t n_out = numel(kept_shape);
  const std::int64_t count = n_out ? x.size() / n_out : 0;
  const bool is_float = x.kind == ElemKind::f32;
  double init = 0.0;
  if (kind == Reduce::max) init = -std::numeric_limits<double>::infinity();
  if (kind == Reduce::min) init = std::numeric_limits<double>::infinity();
  if (kind == Reduce::prod) init = 1.0;
  std::vector<double> acc(n_out, init);
  StridedWalk<1> walk{x.shape, {walk_strides}};
  walk.run([&](std::int64_t i, const std::array<std::int64_t, 1>& p) {
    const double v = is_float ? x.f[i] : static_cast<double>(x.i[i]);
    double& a = acc[p[0]];
    switch (kind) {
      case Reduce::sum: case Reduce::mean: a += v; break;
      case Reduce::max: a = std::max(a, v); break;
      case Reduce::min: a = std::min(a, v); break;
      case Reduce::prod: a *= v; break;
      case Reduce::l2: case Reduce::sum_square: a += v * v; break;
    }
  });
  Tensor& r = out[0];
  if (keepdims) {
    r.shape = kept_shape;
  } else {
    r.shape.clear();
    for (std::size_t d = 0; d < x.rank(); ++d) if (!reduced[d]) r.shape.push_back(x.shape[d]);
  }
  r.kind = is_float ? ElemKind::f32 : ElemKind::i64;
  for (auto& a : acc) {
    if (kind == Reduce::mean) a /= static_cast<double>(count);
    if (kind == Reduce::l2) a = std::sqrt(a);
  }
  if (is_float) r.f.assign(acc.begin(), acc.end());
  else {
    r.i.resize(acc.size());
    for (std::size_t k = 0; k < acc.size(); ++k) r.i[k] = static_cast<std::int64_t>(acc[k]);
  }
}

void arg_reduce(const Node& node, const Inputs& in, Outputs& out, bool is_max) {
  const Tensor& x = need(node, in, 0);
  const std::int64_t axis = norm_axis(node, node.attr_int("axis", 0), x.rank());
  const bool keepdims = node.attr_int("keepdims", 1) != 0;
  const bool last = node.attr_int("select_last_index", 0) != 0;
  std::int64_t outer = 1, len = x.shape[axis], inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= x.shape[d];
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape[d];
  Tensor& r = out[0];
  r.kind = ElemKind::i64;
  r.shape = x.shape;
  if (keepdims) r.shape[axis] = 1;
  else r.shape.erase(r.shape.begin() + axis);
  r.i.resize(outer * inner);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      std::int64_t best = 0;
      auto val = [&](std::int64_t k) {
        const std::int64_t idx = (o * len + k) * inner + i;
        return x.kind == ElemKind::f32 ? static_cast<double>(x.f[idx]) : static_cast<double>(x.i[idx]);
      };
      for (std::int64_t k = 1; k < len; ++k) {
        const double v = val(k), b = val(best);
        if (is_max ? (v > b || (last && v == b)) : (v < b || (last && v == b))) best = k;
      }
      r.i[o * inner + i] = best;
    }
  }
}

// ---- shape manipulation -------------------------------------------------------

/// Copies elements of `src` selected by a strided walk into a new tensor.
Tensor gather_strided(const Tensor& src, const Shape& shape, const Shape& strides, std::int64_t offset = 0) {
  Tensor r;
  r.kind = src.kind;
  r.shape = shape;
  StridedWalk<1> walk{shape, {strides}};
  if (src.kind == ElemKind::f32) {
    r.f.resize(numel(shape));
    walk.run([&](std::int64_t o, const std::array<std::int64_t, 1>& p) { r.f[o] = src.f[offset + p[0]]; });
  } else {
    r.i.resize(numel(shape));
    walk.run([&](std::int64_t o, const std::array<std::int64_t, 1>& p) { r.i[o] = src.i[offset + p[0]]; });
  }
  return r;
}

void op_shape(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  const auto r = static_cast<std::int64_t>(x.rank());
  std::int64_t start = node.attr_int("start", 0);
  std::int64_t end = node.attr_int("end", r);
  if (start < 0) start += r;
  if (end < 0) end += r;
  start = std::clamp<std::int64_t>(start, 0, r);
  end = std::clamp<std::int64_t>(end, 0, r);
  std::vector<std::int64_t> dims;
  for (std::int64_t d = start; d < end; ++d) dims.push_back(x.shape[d]);
  out[0] = Tensor::ints({static_cast<std::int64_t>(dims.size())}, dims);
}

void op_size(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  out[0] = Tensor::ints({}, {need(node, in, 0).size()});
}

void op_reshape(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  std::vector<std::int64_t> target = as_ints(node, need(node, in, 1));
  const bool allowzero = node.attr_int("allowzero", 0) != 0;
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t d = 0; d < target.size(); ++d) {
    if (target[d] == 0 && !allowzero) {
      if (d >= x.rank()) fail(node, "zero dim beyond input rank");
      target[d] = x.shape[d];
    }
    if (target[d] == -1) {
      if (infer >= 0) fail(node, "more than one -1 in shape");
      infer = static_cast<int>(d);
    } else {
      known *= target[d];
    }
  }
  if (infer >= 0) target[infer] = known ? x.size() / known : 0;
  if (numel(target) != x.size()) fail(node, "cannot reshape " + shape_string(x.shape) + " to " + shape_string(target));
  out[0] = x;
  out[0].shape = target;
}

void op_flatten(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  std::int64_t axis = node.attr_int("axis", 1);
  if (axis < 0) axis += static_cast<std::int64_t>(x.rank());
  std::int64_t outer = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= x.shape[d];
  out[0] = x;
  out[0].shape = {outer, outer ? x.size() / outer : 0};
}

void op_transpose(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  std::vector<std::int64_t> perm = node.attr_ints("perm");
  if (perm.empty()) {
    for (std::int64_t d = static_cast<std::int64_t>(x.rank()) - 1; d >= 0; --d) perm.push_back(d);
  }
  if (perm.size() != x.rank()) fail(node, "perm rank mismatch");
  const Shape in_strides = strides_of(x.shape);
  Shape shape(x.rank()), strides(x.rank());
  for (std::size_t d = 0; d < x.rank(); ++d) {
    shape[d] = x.shape[perm[d]];
    strides[d] = in_strides[perm[d]];
  }
  out[0] = gather_strided(x, shape, strides);
}

void op_concat(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& first = need(node, in, 0);
  const std::int64_t axis = norm_axis(node, node.attr_int("axis", 0), first.rank());
  Shape shape = first.shape;
  shape[axis] = 0;
  for (const Tensor* t : in) {
    if (t == nullptr) continue;
    if (t->rank() != first.rank() || t->kind != first.kind) fail(node, "operand mismatch");
    shape[axis] += t->shape[axis];
  }
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  Tensor& r = out[0];
  r.kind = first.kind;
  r.shape = shape;
  const bool is_f = first.kind == ElemKind::f32;
  if (is_f) r.f.resize(numel(shape));
  else r.i.resize(numel(shape));
  std::int64_t offset = 0;
  for (const Tensor* t : in) {
    if (t == nullptr) continue;
    const std::int64_t chunk = t->shape[axis] * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      const std::int64_t dst = o * shape[axis] * inner + offset;
      if (is_f) std::copy_n(t->f.begin() + o * chunk, chunk, r.f.begin() + dst);
      else std::copy_n(t->i.begin() + o * chunk, chunk, r.i.begin() + dst);
    }
    offset += chunk;
  }
}

void op_split(const Node& node, std::int64_t opset, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  const std::int64_t axis = norm_axis(node, node.attr_int("axis", 0), x.rank());
  std::vector<std::int64_t> parts = node.attr_ints("split");
  if (opset >= 13) {
    if (const Tensor* t = optional_input(in, 1)) parts = as_ints(node, *t);
  }
  const auto n = static_cast<std::int64_t>(out.size());
  if (parts.empty()) {
    const std::int64_t each = (x.shape[axis] + n - 1) / n;
    for (std::int64_t k = 0; k < n; ++k) parts.push_back(std::min(each, x.shape[axis] - k * each));
  }
  if (static_cast<std::int64_t>(parts.size()) != n) fail(node, "split count mismatch");
  const Shape strides = strides_of(x.shape);
  std::int64_t start = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    Shape shape = x.shape;
    shape[axis] = parts[k];
    out[k] = gather_strided(x, shape, strides, start * strides[axis]);
    start += parts[k];
  }
}

void op_slice(const Node& node, std::int64_t opset, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  std::vector<std::int64_t> starts, ends, axes, steps;
  if (opset < 10) {
    starts = node.attr_ints("starts");
    ends = node.attr_ints("ends");
    axes = node.attr_ints("axes");
  } else {
    starts = as_ints(node, need(node, in, 1));
    ends = as_ints(node, need(node, in, 2));
    if (const Tensor* t = optional_input(in, 3)) axes = as_ints(node, *t);
    if (const Tensor* t = optional_input(in, 4)) steps = as_ints(node, *t);
  }
  if (axes.empty()) for (std::size_t k = 0; k < starts.size(); ++k) axes.push_back(static_cast<std::int64_t>(k));
  if (steps.empty()) steps.assign(starts.size(), 1);
  const Shape in_strides = strides_of(x.shape);
  Shape shape = x.shape;
  Shape strides = in_strides;
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const std::int64_t a = norm_axis(node, axes[k], x.rank());
    const std::int64_t dim = x.shape[a];
    const std::int64_t step = steps[k];
    if (step == 0) fail(node, "zero step");
    std::int64_t s = starts[k], e = ends[k];
    if (s < 0) s += dim;
    if (e < 0) e += dim;
    if (step > 0) {
      s = std::clamp<std::int64_t>(s, 0, dim);
      e = std::clamp<std::int64_t>(e, 0, dim);
      shape[a] = e > s ? (e - s + step - 1) / step : 0;
    } else {
      s = std::clamp<std::int64_t>(s, 0, dim - 1);
      e = std::clamp<std::int64_t>(e, -1, dim - 1);
      shape[a] = s > e ? (s - e - step - 1) / (-step) : 0;
    }
    offset += s * in_strides[a];
    strides[a] = in_strides[a] * step;
  }
  out[0] = gather_strided(x, shape, strides, offset);
}

void op_gather(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  const Tensor& idx = need(node, in, 1);
  const std::int64_t axis = norm_axis(node, node.attr_int("axis", 0), x.rank());
  const std::vector<std::int64_t> ids = as_ints(node, idx);
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= x.shape[d];
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape[d];
  const std::int64_t dim = x.shape[axis];
  Shape shape(x.shape.begin(), x.shape.begin() + axis);
  shape.insert(shape.end(), idx.shape.begin(), idx.shape.end());
  shape.insert(shape.end(), x.shape.begin() + axis + 1, x.shape.end());
  Tensor& r = out[0];
  r.kind = x.kind;
  r.shape = shape;
  const bool is_f = x.kind == ElemKind::f32;
  if (is_f) r.f.resize(numel(shape));
  else r.i.resize(numel(shape));
  const auto n = static_cast<std::int64_t>(ids.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t j = 0; j < n; ++j) {
      std::int64_t g = ids[j] < 0 ? ids[j] + dim : ids[j];
      if (g < 0 || g >= dim) fail(node, "index out of range");
      const std::int64_t src = (o * dim + g) * inner;
      const std::int64_t dst = (o * n + j) * inner;
      if (is_f) std::copy_n(x.f.begin() + src, inner, r.f.begin() + dst);
      else std::copy_n(x.i.begin() + src, inner, r.i.begin() + dst);
    }
  }
}

std::vector<std::int64_t> axes_arg(const Node& node, std::int64_t opset, const Inputs& in) {
  if (opset >= 13) {
    if (const Tensor* t = optional_input(in, 1)) return as_ints(node, *t);
    return {};
  }
  return node.attr_ints("axes");
}

void op_unsqueeze(const Node& node, std::int64_t opset, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  std::vector<std::int64_t> axes = axes_arg(node, opset, in);
  const auto r = static_cast<std::int64_t>(x.rank() + axes.size());
  for (auto& a : axes) a = a < 0 ? a + r : a;
  std::sort(axes.begin(), axes.end());
  Shape shape = x.shape;
  for (auto a : axes) {
    if (a < 0 || a > static_cast<std::int64_t>(shape.size())) fail(node, "axis out of range");
    shape.insert(shape.begin() + a, 1);
  }
  out[0] = x;
  out[0].shape = shape;
}

void op_squeeze(const Node& node, std::int64_t opset, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  std::vector<std::int64_t> axes = axes_arg(node, opset, in);
  std::set<std::int64_t> drop;
  for (auto a : axes) drop.insert(norm_axis(node, a, x.rank()));
  Shape shape;
  for (std::size_t d = 0; d < x.rank(); ++d) {
    const bool remove = axes.empty() ? x.shape[d] == 1 : drop.contains(static_cast<std::int64_t>(d));
    if (remove && x.shape[d] != 1) fail(node, "cannot squeeze a non-unit dimension");
    if (!remove) shape.push_back(x.shape[d]);
  }
  out[0] = x;
  out[0].shape = shape;
}

void op_expand(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  const Shape target = as_ints(node, need(node, in, 1));
  const Shape shape = broadcast_shape(node, x.shape, target);
  out[0] = gather_strided(x, shape, broadcast_strides(x.shape, shape));
}

void op_tile(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  const std::vector<std::int64_t> reps = as_ints(node, need(node, in, 1));
  if (reps.size() != x.rank()) fail(node, "repeats rank mismatch");
  // View as [r0, d0, r1, d1, ...] with zero stride on the repeat axes.
  const Shape own = strides_of(x.shape);
  Shape shape, strides;
  for (std::size_t d = 0; d < x.rank(); ++d) {
    shape.push_back(reps[d]);
    strides.push_back(0);
    shape.push_back(x.shape[d]);
    strides.push_back(own[d]);
  }
  Tensor r = gather_strided(x, shape, strides);
  Shape final_shape(x.rank());
  for (std::size_t d = 0; d < x.rank(); ++d) final_shape[d] = x.shape[d] * reps[d];
  r.shape = final_shape;
  out[0] = std::move(r);
}

void op_constant(const Node& node, std::int64_t, const Inputs&, Outputs& out) {
  if (const auto* a = node.attr("value"); a && a->t) out[0] = *a->t;
  else if (const auto* a = node.attr("value_float")) out[0] = Tensor::floats({}, {a->f});
  else if (const auto* a = node.attr("value_floats")) out[0] = Tensor::floats({static_cast<std::int64_t>(a->floats.size())}, a->floats);
  else if (const auto* a = node.attr("value_int")) out[0] = Tensor::ints({}, {a->i});
  else if (const auto* a = node.attr("value_ints")) out[0] = Tensor::ints({static_cast<std::int64_t>(a->ints.size())}, a->ints);
  else fail(node, "unsupported constant payload");
}

void op_constant_of_shape(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Shape shape = as_ints(node, need(node, in, 0));
  const auto* a = node.attr("value");
  if (a == nullptr || !a->t) {
    out[0] = Tensor::floats(shape);
    return;
  }
  const Tensor& v = *a->t;
  Tensor r;
  r.kind = v.kind;
  r.shape = shape;
  if (v.kind == ElemKind::f32) r.f.assign(numel(shape), v.f.at(0));
  else r.i.assign(numel(shape), v.i.at(0));
  out[0] = std::move(r);
}

void op_range(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  const Tensor& s = need(node, in, 0);
  const Tensor& l = need(node, in, 1);
  const Tensor& d = need(node, in, 2);
  if (s.kind == ElemKind::f32) {
    const float start = s.f.at(0), limit = l.f.at(0), delta = d.f.at(0);
    const auto n = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil((limit - start) / delta)));
    std::vector<float> v(n);
    for (std::int64_t k = 0; k < n; ++k) v[k] = start + k * delta;
    out[0] = Tensor::floats({n}, v);
    out[0].f.resize(n);
  } else {
    const std::int64_t start = s.i.at(0), limit = l.i.at(0), delta = d.i.at(0);
    if (delta == 0) fail(node, "zero delta");
    const std::int64_t n = std::max<std::int64_t>(0, (limit - start + delta + (delta > 0 ? -1 : 1)) / delta);
    std::vector<std::int64_t> v(n);
    for (std::int64_t k = 0; k < n; ++k) v[k] = start + k * delta;
    out[0] = Tensor::ints({n}, v);
    out[0].i.resize(n);
  }
}

void op_identity(const Node& node, std::int64_t, const Inputs& in, Outputs& out) {
  out[0] = need(node, in, 0);
  if (out.size() > 1) {
    out[1] = Tensor::bools(out[0].shape);
    std::fill(out[1].i.begin(), out[1].i.end(), 1);
  }
}

void op_pad(const Node& node, std::int64_t opset, const Inputs& in, Outputs& out) {
  const Tensor& x = need(node, in, 0);
  std::vector<std::int64_t> pads = opset >= 11 ? as_ints(node, need(node, in, 1)) : node.attr_ints("pads");
  const std::string mode = node.attr_string("mode", "constant");
  if (mode != "constant") fail(node, "only constant padding is supported");
  float value = node.attr_float("value", 0.0f);
  if (opset >= 11) {
    if (const Tensor* t = optional_input(in, 2); t && !t->f.empty()) value = t->f[0];
  }
  std::vector<std::int64_t> axes;
  if (const Tensor* t = optional_input(in, 3)) axes = as_ints(node, *t);
  const std::size_t r = x.rank();
  std::vector<std::int64_t> full(2 * r, 0);
  if (axes.empty()) {
    if (pads.size() != 2 * r) fail(node, "pads length mismatch");
    full = pads;
  } else {
    for (std::size_t k = 0; k < axes.size(); ++k) {
      const auto a = norm_axis(node, axes[k], r);
      full[a] = pads[k];
      full[a + r] = pads[k + axes.size()];
    }
  }
  Shape shape(r);
  for (std::size_t d = 0; d < r; ++d) shape[d] = x.shape[d] + full[d] + full[d + r];
  if (x.kind != ElemKind::f32) fail(node, "integer padding not supported");
  Tensor res = Tensor::floats(shape);
  std::fill(res.f.begin(), res.f.end(), value);
  const Shape xs = strides_of(x.shape);
  const Shape os = strides_of(shape);
  std::int64_t base = 0;
  for (std::size_t d = 0; d < r; ++d) base += full[d] * os[d];
  StridedWalk<2> copy{x.shape, {xs, os}};
  copy.run([&](std::int64_t, const std::array<std::int64_t, 2>& p) {
    const std::int64_t dst = base + p[1];
    if (dst >= 0 && dst < static_cast<std::int64_t>(res.f.size())) res.f[dst] = x.f[p[0]];
  });
  out[0] = std::move(res);
}

float erf_gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * static_cast<float>(M_SQRT1_2))); }

float tanh_gelu(float x) {
  constexpr float k = 0.7978845608028654f;  // sqrt(2 / pi)
  return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

const std::unordered_map<std::string, OpFn>& registry() {
  static const std::unordered_map<std::string, OpFn> ops = [] {
    std::unordered_map<std::string, OpFn> m;
    m["Add"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      arith(n, in, out, std::plus<float>(), std::plus<std::int64_t>());
    };
    m["Sub"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      arith(n, in, out, std::minus<float>(), std::minus<std::int64_t>());
    };
    m["Mul"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      arith(n, in, out, std::multiplies<float>(), std::multiplies<std::int64_t>());
    };
    m["Div"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      arith(n, in, out, std::divides<float>(), [&n](std::int64_t a, std::int64_t b) {
        if (b == 0) fail(n, "integer division by zero");
        return a / b;
      });
    };
    m["Mod"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      const bool fmod = n.attr_int("fmod", 0) != 0;
      arith(n, in, out,
            [fmod](float a, float b) {
              const float r = std::fmod(a, b);
              return (!fmod && r != 0.0f && ((r < 0) != (b < 0))) ? r + b : r;
            },
            [fmod, &n](std::int64_t a, std::int64_t b) {
              if (b == 0) fail(n, "integer modulo by zero");
              const std::int64_t r = a % b;
              return (!fmod && r != 0 && ((r < 0) != (b < 0))) ? r + b : r;
            });
    };
    m["Pow"] = op_pow;
    m["Max"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      variadic(n, in, out, [](float a, float b) { return std::max(a, b); },
               [](std::int64_t a, std::int64_t b) { return std::max(a, b); });
    };
    m["Min"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      variadic(n, in, out, [](float a, float b) { return std::min(a, b); },
               [](std::int64_t a, std::int64_t b) { return std::min(a, b); });
    };
    m["Sum"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      variadic(n, in, out, std::plus<float>(), std::plus<std::int64_t>());
    };
    m["Equal"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      compare(n, in, out, [](auto a, auto b) { return a == b; });
    };
    m["Less"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      compare(n, in, out, [](auto a, auto b) { return a < b; });
    };
    m["LessOrEqual"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      compare(n, in, out, [](auto a, auto b) { return a <= b; });
    };
    m["Greater"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      compare(n, in, out, [](auto a, auto b) { return a > b; });
    };
    m["GreaterOrEqual"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      compare(n, in, out, [](auto a, auto b) { return a >= b; });
    };
    m["And"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      compare(n, in, out, [](auto a, auto b) { return a != 0 && b != 0; });
    };
    m["Or"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      compare(n, in, out, [](auto a, auto b) { return a != 0 || b != 0; });
    };
    m["Xor"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      compare(n, in, out, [](auto a, auto b) { return (a != 0) != (b != 0); });
    };
    m["Not"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) {
      out[0] = need(n, in, 0);
      for (auto& v : out[0].i) v = v == 0;
    };
    m["Where"] = op_where;
    m["Cast"] = op_cast;
    m["Clip"] = op_clip;

    m["Relu"] = unary_float([](float x) { return x > 0.0f ? x : 0.0f; });
    m["Sigmoid"] = unary_float([](float x) { return 1.0f / (1.0f + std::exp(-x)); });
    m["Tanh"] = unary_float([](float x) { return std::tanh(x); });
    m["Erf"] = unary_float([](float x) { return std::erf(x); });
    m["Sqrt"] = unary_float([](float x) { return std::sqrt(x); });
    m["Exp"] = unary_float([](float x) { return std::exp(x); });
    m["Log"] = unary_float([](float x) { return std::log(x); });
    m["Reciprocal"] = unary_float([](float x) { return 1.0f / x; });
    m["Floor"] = unary_float([](float x) { return std::floor(x); });
    m["Ceil"] = unary_float([](float x) { return std::ceil(x); });
    m["Round"] = unary_float([](float x) { return std::nearbyint(x); });
    m["Sin"] = unary_float([](float x) { return std::sin(x); });
    m["Cos"] = unary_float([](float x) { return std::cos(x); });
    m["Softplus"] = unary_float([](float x) { return std::log1p(std::exp(x)); });
    m["HardSwish"] = unary_float([](float x) { return x * std::clamp(x / 6.0f + 0.5f, 0.0f, 1.0f); });
    m["Neg"] = unary_any([](float x) { return -x; }, [](std::int64_t x) { return -x; });
    m["Abs"] = unary_any([](float x) { return std::abs(x); }, [](std::int64_t x) { return x < 0 ? -x : x; });
    m["Sign"] = unary_any([](float x) { return static_cast<float>((x > 0) - (x < 0)); },
                          [](std::int64_t x) { return static_cast<std::int64_t>((x > 0) - (x < 0)); });
    m["LeakyRelu"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) {
      const float alpha = n.attr_float("alpha", 0.01f);
      unary_float([alpha](float x) { return x >= 0.0f ? x : alpha * x; })(n, o, in, out);
    };
    m["Elu"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) {
      const float alpha = n.attr_float("alpha", 1.0f);
      unary_float([alpha](float x) { return x >= 0.0f ? x : alpha * (std::exp(x) - 1.0f); })(n, o, in, out);
    };
    m["HardSigmoid"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) {
      const float alpha = n.attr_float("alpha", 0.2f);
      const float beta = n.attr_float("beta", 0.5f);
      unary_float([=](float x) { return std::clamp(alpha * x + beta, 0.0f, 1.0f); })(n, o, in, out);
    };
    m["Gelu"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) {
      if (n.attr_string("approximate", "none") == "tanh") unary_float(tanh_gelu)(n, o, in, out);
      else unary_float(erf_gelu)(n, o, in, out);
    };

    m["MatMul"] = op_matmul;
    m["Gemm"] = op_gemm;
    m["Conv"] = op_conv;
    m["MaxPool"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) { pool(n, in, out, true); };
    m["AveragePool"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) { pool(n, in, out, false); };
    m["GlobalAveragePool"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) { global_pool(n, in, out, false); };
    m["GlobalMaxPool"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) { global_pool(n, in, out, true); };
    m["BatchNormalization"] = op_batchnorm;
    m["Softmax"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) { softmax(n, o, in, out, false); };
    m["LogSoftmax"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) { softmax(n, o, in, out, true); };
    m["LayerNormalization"] = op_layernorm;

    m["ReduceSum"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) { reduce(n, o, in, out, Reduce::sum); };
    m["ReduceMean"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) { reduce(n, o, in, out, Reduce::mean); };
    m["ReduceMax"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) { reduce(n, o, in, out, Reduce::max); };
    m["ReduceMin"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) { reduce(n, o, in, out, Reduce::min); };
    m["ReduceProd"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) { reduce(n, o, in, out, Reduce::prod); };
    m["ReduceL2"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) { reduce(n, o, in, out, Reduce::l2); };
    m["ReduceSumSquare"] = [](const Node& n, std::int64_t o, const Inputs& in, Outputs& out) { reduce(n, o, in, out, Reduce::sum_square); };
    m["ArgMax"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) { arg_reduce(n, in, out, true); };
    m["ArgMin"] = [](const Node& n, std::int64_t, const Inputs& in, Outputs& out) { arg_reduce(n, in, out, false); };

    m["Shape"] = op_shape;
    m["Size"] = op_size;
    m["Reshape"] = op_reshape;
    m["Flatten"] = op_flatten;
    m["Transpose"] = op_transpose;
    m["Concat"] = op_concat;
    m["Split"] = op_split;
    m["Slice"] = op_slice;
    m["Gather"] = op_gather;
    m["Unsqueeze"] = op_unsqueeze;
    m["Squeeze"] = op_squeeze;
    m["Expand"] = op_expand;
    m["Tile"] = op_tile;
    m["Pad"] = op_pad;
    m["Constant"] = op_constant;
    m["ConstantOfShape"] = op_constant_of_shape;
    m["Range"] = op_range;
    m["Identity"] = op_identity;
    m["Dropout"] = op_identity;
    return m;
  }();
  return ops;
}

}  // namespace

namespace {

/// Values a subgraph reads from enclosing scopes.
void captured_names(const Graph& g, std::set<std::string>& out) {
  std::set<std::string> local;
  for (const auto& i : g.inputs) local.insert(i.name);
  for (const auto& [name, _] : g.initializers) local.insert(name);
  for (const auto& node : g.nodes) {
    for (const auto& name : node.inputs) {
      if (!name.empty() && !local.contains(name)) out.insert(name);
    }
    for (const auto& [_, a] : node.attributes) {
      if (!a.g) continue;
      std::set<std::string> inner;
      captured_names(*a.g, inner);
      for (const auto& name : inner) {
        if (!local.contains(name)) out.insert(name);
      }
    }
    for (const auto& name : node.outputs) local.insert(name);
  }
}

std::vector<std::string> node_reads(const Node& node) {
  std::vector<std::string> names(node.inputs.begin(), node.inputs.end());
  for (const auto& [_, a] : node.attributes) {
    if (!a.g) continue;
    std::set<std::string> inner;
    captured_names(*a.g, inner);
    names.insert(names.end(), inner.begin(), inner.end());
  }
  return names;
}

void collect_unsupported(const Graph& g, std::set<std::string>& missing) {
  for (const auto& node : g.nodes) {
    if (!node.domain.empty() && node.domain != "ai.onnx") {
      missing.insert(node.domain + "::" + node.op_type);
    } else if (!is_supported_op(node.op_type)) {
      missing.insert(node.op_type);
    }
    for (const auto& [_, a] : node.attributes) {
      if (a.g) collect_unsupported(*a.g, missing);
    }
  }
}

}  // namespace

bool is_supported_op(const std::string& op_type) {
  return op_type == "If" || registry().contains(op_type);
}

struct Session::Scope {
  const Graph* graph = nullptr;
  const Scope* parent = nullptr;
  std::unordered_map<std::string, std::shared_ptr<const Tensor>> values;

  const Tensor* find(const std::string& name) const {
    if (auto it = values.find(name); it != values.end()) return it->second.get();
    if (auto it = graph->initializers.find(name); it != graph->initializers.end()) return it->second.get();
    return parent ? parent->find(name) : nullptr;
  }

  const Tensor* lookup(const std::string& name) const {
    if (name.empty()) return nullptr;
    if (const Tensor* t = find(name)) return t;
    throw ModelError("value '" + name + "' is used before it is produced");
  }
};

Session::Session(Model model) : model_(std::move(model)) {
  check_supported();
  // Last consumer of each value, so intermediates are freed as soon as possible.
  std::unordered_map<std::string, std::size_t> last;
  for (std::size_t k = 0; k < model_.graph.nodes.size(); ++k) {
    for (const auto& name : node_reads(model_.graph.nodes[k])) {
      if (!name.empty()) last[name] = k;
    }
  }
  for (const auto& o : model_.graph.outputs) last.erase(o.name);
  release_after_.resize(model_.graph.nodes.size());
  for (const auto& [name, k] : last) {
    if (!model_.graph.initializers.contains(name)) release_after_[k].push_back(name);
  }
}

void Session::check_supported() const {
  std::set<std::string> missing;
  collect_unsupported(model_.graph, missing);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ModelError("model uses unsupported operators: " + list);
  }
}

void Session::execute(const Graph& g, Scope& scope,
                      const std::vector<std::vector<std::string>>* release) const {
  const auto& ops = registry();
  for (std::size_t k = 0; k < g.nodes.size(); ++k) {
    const Node& node = g.nodes[k];
    Inputs in;
    in.reserve(node.inputs.size());
    for (const auto& name : node.inputs) in.push_back(scope.lookup(name));
    Outputs out(node.outputs.size());
    if (node.op_type == "If") {
      const Tensor& cond = need(node, in, 0);
      if (cond.size() != 1) fail(node, "condition must hold one element");
      const bool taken = cond.kind == ElemKind::f32 ? cond.f[0] != 0.0f : cond.i[0] != 0;
      const Graph* branch = node.attr_graph(taken ? "then_branch" : "else_branch");
      if (branch == nullptr) fail(node, "missing branch subgraph");
      Scope inner{branch, &scope, {}};
      execute(*branch, inner, nullptr);
      if (branch->outputs.size() != node.outputs.size()) fail(node, "branch output count mismatch");
      for (std::size_t o = 0; o < out.size(); ++o) out[o] = *inner.lookup(branch->outputs[o].name);
    } else {
      ops.at(node.op_type)(node, model_.opset, in, out);
    }
    for (std::size_t o = 0; o < node.outputs.size(); ++o) {
      if (!node.outputs[o].empty()) {
        scope.values[node.outputs[o]] = std::make_shared<const Tensor>(std::move(out[o]));
      }
    }
    if (release != nullptr) {
      for (const auto& dead : (*release)[k]) scope.values.erase(dead);
    }
  }
}

std::vector<Tensor> Session::run(std::vector<Tensor> inputs) const {
  const Graph& g = model_.graph;
  if (inputs.size() != g.inputs.size()) {
    throw ModelError("expected " + std::to_string(g.inputs.size()) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  Scope scope{&g, nullptr, {}};
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& declared = g.inputs[k].shape;
    if (declared) {
      bool ok = declared->size() == inputs[k].rank();
      for (std::size_t d = 0; ok && d < declared->size(); ++d) {
        ok = (*declared)[d] < 0 || (*declared)[d] == inputs[k].shape[d];
      }
      if (!ok) {
        throw ModelError("input '" + g.inputs[k].name + "' expects shape " + shape_string(*declared) +
                         ", got " + shape_string(inputs[k].shape));
      }
    }
    scope.values[g.inputs[k].name] = std::make_shared<const Tensor>(std::move(inputs[k]));
  }
  execute(g, scope, &release_after_);

  std::vector<Tensor> result;
  for (const auto& o : g.outputs) result.push_back(*scope.lookup(o.name));
  return result;
}

}  // namespace dmp3dad::onnx
