#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "somforge/autodiff.hpp"
#include "somforge/parallel.hpp"

namespace somforge::ad {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Target GEMM width per chunk; fixes chunk boundaries independently of the
// worker count.
constexpr std::size_t kChunkColumns = 4096;

[[noreturn]] void shape_fail(Primitive op, const std::string& detail) {
  throw ShapeError(std::string(name(op)) + ": " + detail);
}

[[noreturn]] void shape_fail(Primitive op, const Shape& a, const Shape& b) {
  shape_fail(op, "incompatible shapes " + a.to_string() + " and " + b.to_string());
}

void require_rank(Primitive op, const Tensor& t, std::size_t rank) {
  if (t.shape().rank() != rank)
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got shape " + t.shape().to_string());
}

// ---------------------------------------------------------------- conv2d

struct ConvGeom {
  std::size_t batch, in_ch, height, width, out_ch, k, pad;
  std::size_t hw() const { return height * width; }
  std::size_t ckk() const { return in_ch * k * k; }
  std::size_t items_per_chunk() const { return std::max<std::size_t>(1, kChunkColumns / hw()); }
  std::size_t chunks() const { return (batch + items_per_chunk() - 1) / items_per_chunk(); }
};

ConvGeom conv_geom(const Tensor& x, const Tensor& w) {
  const auto op = Primitive::conv2d;
  require_rank(op, x, 4);
  require_rank(op, w, 4);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs[1] != ws[1] || ws[2] != ws[3] || ws[2] % 2 == 0) shape_fail(op, xs, ws);
  return {xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[2] / 2};
}

// Valid output-column range [lo, hi) for kernel column kw: iw = ow + kw - pad
// stays inside [0, width).
struct ColRange {
  std::size_t lo, hi;
};

ColRange valid_cols(const ConvGeom& g, std::size_t kw) {
  const std::size_t lo = kw < g.pad ? g.pad - kw : 0;
  const std::size_t hi = std::min(g.width, g.width + g.pad - kw);
  return {lo, std::max(lo, hi)};
}

// col is [in_ch*k*k, nb*hw] row-major.
template <class T>
void im2col(const T* x, const ConvGeom& g, std::size_t b0, std::size_t nb, T* col) {
  const std::size_t cols = nb * g.hw();
  for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        T* row = col + ((ci * g.k + kh) * g.k + kw) * cols;
        const ColRange r = valid_cols(g, kw);
        for (std::size_t b = 0; b < nb; ++b) {
          const T* plane = x + ((b0 + b) * g.in_ch + ci) * g.hw();
          T* dst = row + b * g.hw();
          for (std::size_t oh = 0; oh < g.height; ++oh) {
            const long ih = static_cast<long>(oh + kh) - static_cast<long>(g.pad);
            T* out = dst + oh * g.width;
            if (ih < 0 || ih >= static_cast<long>(g.height)) {
              std::fill(out, out + g.width, T(0));
              continue;
            }
            const T* in = plane + static_cast<std::size_t>(ih) * g.width + kw;
            std::fill(out, out + r.lo, T(0));
            std::copy(in + r.lo - g.pad, in + r.hi - g.pad, out + r.lo);
            std::fill(out + r.hi, out + g.width, T(0));
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const ConvGeom& g, std::size_t b0, std::size_t nb, T* dx) {
  const std::size_t cols = nb * g.hw();
  for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        const T* row = col + ((ci * g.k + kh) * g.k + kw) * cols;
        const ColRange r = valid_cols(g, kw);
        for (std::size_t b = 0; b < nb; ++b) {
          T* plane = dx + ((b0 + b) * g.in_ch + ci) * g.hw();
          const T* src = row + b * g.hw();
          for (std::size_t oh = 0; oh < g.height; ++oh) {
            const long ih = static_cast<long>(oh + kh) - static_cast<long>(g.pad);
            if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
            T* out = plane + static_cast<std::size_t>(ih) * g.width + kw - g.pad;
            const T* in = src + oh * g.width;
            for (std::size_t ow = r.lo; ow < r.hi; ++ow) out[ow] += in[ow];
          }
        }
      }
    }
  }
}

// Uninitialized scratch storage.
template <class T>
std::unique_ptr<T[]> scratch(std::size_t n) {
  return std::unique_ptr<T[]>(new T[n]);
}

template <class T>
Tensor conv2d_forward(const Tensor& x, const Tensor& w) {
  const ConvGeom g = conv_geom(x, w);
  std::vector<T> out(g.batch * g.out_ch * g.hw());
  const T* xp = x.values<T>().data();
  ConstMatMap<T> wm(w.values<T>().data(), g.out_ch, g.ckk());
  const std::size_t per = g.items_per_chunk();
  parallel::for_each_chunk(g.chunks(), [&](std::size_t c) {
    const std::size_t b0 = c * per;
    const std::size_t nb = std::min(per, g.batch - b0);
    const std::size_t cols = nb * g.hw();
    auto col = scratch<T>(g.ckk() * cols);
    im2col(xp, g, b0, nb, col.get());
    RowMat<T> res = wm * ConstMatMap<T>(col.get(), g.ckk(), cols);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t co = 0; co < g.out_ch; ++co)
        std::copy_n(res.data() + co * cols + b * g.hw(), g.hw(), out.data() + ((b0 + b) * g.out_ch + co) * g.hw());
  });
  return Tensor(Shape{g.batch, g.out_ch, g.height, g.width}, std::move(out));
}

template <class T>
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy, bool need_x, bool need_w,
                     std::optional<Tensor>& dx_out, std::optional<Tensor>& dw_out) {
  const ConvGeom g = conv_geom(x, w);
  const T* xp = x.values<T>().data();
  const T* gp = gy.values<T>().data();
  ConstMatMap<T> wm(w.values<T>().data(), g.out_ch, g.ckk());
  const std::size_t per = g.items_per_chunk();
  const std::size_t n_chunks = g.chunks();
  std::vector<T> dx(need_x ? x.numel() : 0, T(0));
  std::vector<RowMat<T>> dw_parts(need_w ? n_chunks : 0);
  parallel::for_each_chunk(n_chunks, [&](std::size_t c) {
    const std::size_t b0 = c * per;
    const std::size_t nb = std::min(per, g.batch - b0);
    const std::size_t cols = nb * g.hw();
    RowMat<T> gm(g.out_ch, cols);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t co = 0; co < g.out_ch; ++co)
        std::copy_n(gp + ((b0 + b) * g.out_ch + co) * g.hw(), g.hw(), gm.data() + co * cols + b * g.hw());
    if (need_w) {
      auto col = scratch<T>(g.ckk() * cols);
      im2col(xp, g, b0, nb, col.get());
      dw_parts[c].noalias() = gm * ConstMatMap<T>(col.get(), g.ckk(), cols).transpose();
    }
    if (need_x) {
      RowMat<T> dcol = wm.transpose() * gm;
      col2im(dcol.data(), g, b0, nb, dx.data());
    }
  });
  if (need_x) dx_out = Tensor(x.shape(), std::move(dx));
  if (need_w) {
    RowMat<T> dw = dw_parts[0];
    for (std::size_t c = 1; c < n_chunks; ++c) dw += dw_parts[c];
    dw_out = Tensor(w.shape(), std::vector<T>(dw.data(), dw.data() + dw.size()));
  }
}

// ---------------------------------------------------------------- dense

template <class T>
Tensor dense_forward(const Tensor& x, const Tensor& w) {
  const auto op = Primitive::dense;
  require_rank(op, x, 2);
  require_rank(op, w, 2);
  if (x.shape()[1] != w.shape()[1]) shape_fail(op, x.shape(), w.shape());
  const std::size_t batch = x.shape()[0], in = x.shape()[1], out = w.shape()[0];
  std::vector<T> y(batch * out);
  MatMap<T>(y.data(), batch, out).noalias() =
      ConstMatMap<T>(x.values<T>().data(), batch, in) * ConstMatMap<T>(w.values<T>().data(), out, in).transpose();
  return Tensor(Shape{batch, out}, std::move(y));
}

template <class T>
void dense_backward(const Tensor& x, const Tensor& w, const Tensor& gy, bool need_x, bool need_w,
                    std::optional<Tensor>& dx, std::optional<Tensor>& dw) {
  const std::size_t batch = x.shape()[0], in = x.shape()[1], out = w.shape()[0];
  ConstMatMap<T> gm(gy.values<T>().data(), batch, out);
  if (need_x) {
    std::vector<T> v(batch * in);
    MatMap<T>(v.data(), batch, in).noalias() = gm * ConstMatMap<T>(w.values<T>().data(), out, in);
    dx = Tensor(x.shape(), std::move(v));
  }
  if (need_w) {
    std::vector<T> v(out * in);
    MatMap<T>(v.data(), out, in).noalias() = gm.transpose() * ConstMatMap<T>(x.values<T>().data(), batch, in);
    dw = Tensor(w.shape(), std::move(v));
  }
}

// ---------------------------------------------------------------- resampling

void require_nchw(Primitive op, const Tensor& x) { require_rank(op, x, 4); }

template <class T>
Tensor upsample_forward(const Tensor& x) {
  require_nchw(Primitive::upsample_nearest_2x, x);
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  auto in = x.values<T>();
  std::vector<T> out(planes * 4 * h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = in.data() + p * h * w;
    T* dst = out.data() + p * 4 * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      T* r0 = dst + (2 * i) * 2 * w;
      T* r1 = r0 + 2 * w;
      for (std::size_t j = 0; j < w; ++j) r0[2 * j] = r0[2 * j + 1] = r1[2 * j] = r1[2 * j + 1] = src[i * w + j];
    }
  }
  return Tensor(Shape{s[0], s[1], 2 * h, 2 * w}, std::move(out));
}

// Sums each 2x2 block pairwise as (a+b)+(c+d), then multiplies by `factor`.
template <class T>
Tensor block_sum(const Tensor& x, T factor, Primitive op) {
  require_nchw(op, x);
  const Shape& s = x.shape();
  if (s[2] % 2 != 0 || s[3] % 2 != 0) shape_fail(op, "spatial extents must be even, got " + s.to_string());
  const std::size_t planes = s[0] * s[1], h = s[2] / 2, w = s[3] / 2;
  auto in = x.values<T>();
  std::vector<T> out(planes * h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = in.data() + p * 4 * h * w;
    T* dst = out.data() + p * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      const T* r0 = src + (2 * i) * 2 * w;
      const T* r1 = r0 + 2 * w;
      for (std::size_t j = 0; j < w; ++j)
        dst[i * w + j] = ((r0[2 * j] + r0[2 * j + 1]) + (r1[2 * j] + r1[2 * j + 1])) * factor;
    }
  }
  return Tensor(Shape{s[0], s[1], h, w}, std::move(out));
}

template <class T>
Tensor spread_quarter(const Tensor& g, const Shape& input_shape) {
  const Tensor up = upsample_forward<T>(g);
  auto v = up.values<T>();
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * T(0.25);
  return Tensor(input_shape, std::move(out));
}

// ---------------------------------------------------------------- elementwise

template <class T, class Fn>
Tensor map_values(const Tensor& x, Fn fn) {
  auto in = x.values<T>();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fn(in[i]);
  return Tensor(x.shape(), std::move(out));
}

template <class T, class Fn>
Tensor zip_values(const Tensor& a, const Tensor& b, Fn fn) {
  auto x = a.values<T>();
  auto y = b.values<T>();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i], y[i]);
  return Tensor(a.shape(), std::move(out));
}

std::size_t inner_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 2; i < s.rank(); ++i) n *= s[i];
  return n;
}

template <class T>
Tensor pixel_norm_forward(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.rank() < 2) shape_fail(Primitive::pixel_norm, "expected rank >= 2, got " + s.to_string());
  const std::size_t batch = s[0], ch = s[1], inner = inner_size(s);
  auto in = x.values<T>();
  std::vector<T> out(in.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = in.data() + b * ch * inner;
    T* dst = out.data() + b * ch * inner;
    for (std::size_t p = 0; p < inner; ++p) {
      T ss = 0;
      for (std::size_t c = 0; c < ch; ++c) ss += src[c * inner + p] * src[c * inner + p];
      const T r = T(1) / std::sqrt(ss / T(ch) + T(kPixelNormEpsilon));
      for (std::size_t c = 0; c < ch; ++c) dst[c * inner + p] = src[c * inner + p] * r;
    }
  }
  return Tensor(s, std::move(out));
}

template <class T>
Tensor pixel_norm_backward(const Tensor& x, const Tensor& gy) {
  const Shape& s = x.shape();
  const std::size_t batch = s[0], ch = s[1], inner = inner_size(s);
  auto in = x.values<T>();
  auto g = gy.values<T>();
  std::vector<T> out(in.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * ch * inner;
    for (std::size_t p = 0; p < inner; ++p) {
      T ss = 0, dot = 0;
      for (std::size_t c = 0; c < ch; ++c) {
        const T v = in[base + c * inner + p];
        ss += v * v;
        dot += v * g[base + c * inner + p];
      }
      const T r = T(1) / std::sqrt(ss / T(ch) + T(kPixelNormEpsilon));
      const T k = r * r * r * dot / T(ch);
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t i = base + c * inner + p;
        out[i] = g[i] * r - in[i] * k;
      }
    }
  }
  return Tensor(s, std::move(out));
}

template <class T>
Tensor bias_add_forward(const Tensor& x, const Tensor& bias) {
  const auto op = Primitive::bias_add;
  const Shape& s = x.shape();
  if (s.rank() < 2 || bias.shape().rank() != 1 || bias.shape()[0] != s[1]) shape_fail(op, s, bias.shape());
  const std::size_t batch = s[0], ch = s[1], inner = inner_size(s);
  auto in = x.values<T>();
  auto bv = bias.values<T>();
  std::vector<T> out(in.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (b * ch + c) * inner;
      for (std::size_t p = 0; p < inner; ++p) out[base + p] = in[base + p] + bv[c];
    }
  return Tensor(s, std::move(out));
}

template <class T>
Tensor bias_add_backward_bias(const Tensor& gy, const Shape& bias_shape) {
  const Shape& s = gy.shape();
  const std::size_t batch = s[0], ch = s[1], inner = inner_size(s);
  auto g = gy.values<T>();
  std::vector<T> out(ch, T(0));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (b * ch + c) * inner;
      T acc = 0;
      for (std::size_t p = 0; p < inner; ++p) acc += g[base + p];
      out[c] += acc;
    }
  return Tensor(bias_shape, std::move(out));
}

template <class T>
Tensor reduce_mean_forward(const Tensor& x) {
  auto in = x.values<T>();
  if (in.empty()) shape_fail(Primitive::reduce_mean, "empty input");
  double acc = 0.0;
  for (T v : in) acc += static_cast<double>(v);
  return Tensor(Shape{}, std::vector<T>{static_cast<T>(acc / static_cast<double>(in.size()))});
}

template <class T>
Tensor minibatch_stddev_forward(const Tensor& x) {
  const auto op = Primitive::minibatch_stddev;
  require_rank(op, x, 4);
  const Shape& s = x.shape();
  const std::size_t batch = s[0], per = s[1] * s[2] * s[3], hw = s[2] * s[3];
  auto in = x.values<T>();
  double acc = 0.0;
  for (std::size_t i = 0; i < per; ++i) {
    T mean = 0;
    for (std::size_t b = 0; b < batch; ++b) mean += in[b * per + i];
    mean /= T(batch);
    T var = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const T d = in[b * per + i] - mean;
      var += d * d;
    }
    acc += std::sqrt(var / T(batch) + T(kStddevEpsilon));
  }
  const T stat = static_cast<T>(acc / static_cast<double>(per));
  std::vector<T> out(batch * (per + hw));
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(in.data() + b * per, per, out.data() + b * (per + hw));
    std::fill_n(out.data() + b * (per + hw) + per, hw, stat);
  }
  return Tensor(Shape{s[0], s[1] + 1, s[2], s[3]}, std::move(out));
}

template <class T>
Tensor minibatch_stddev_backward(const Tensor& x, const Tensor& gy) {
  const Shape& s = x.shape();
  const std::size_t batch = s[0], per = s[1] * s[2] * s[3], hw = s[2] * s[3];
  auto in = x.values<T>();
  auto g = gy.values<T>();
  T stat_grad = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < hw; ++p) stat_grad += g[b * (per + hw) + per + p];
  std::vector<T> out(in.size());
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(g.data() + b * (per + hw), per, out.data() + b * per);
  for (std::size_t i = 0; i < per; ++i) {
    T mean = 0;
    for (std::size_t b = 0; b < batch; ++b) mean += in[b * per + i];
    mean /= T(batch);
    T var = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const T d = in[b * per + i] - mean;
      var += d * d;
    }
    const T sd = std::sqrt(var / T(batch) + T(kStddevEpsilon));
    const T k = stat_grad / (T(batch) * sd * T(per));
    for (std::size_t b = 0; b < batch; ++b) out[b * per + i] += k * (in[b * per + i] - mean);
  }
  return Tensor(s, std::move(out));
}

template <class T>
T softplus_value(T v) {
  return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
}

template <class T>
T sigmoid_value(T v) {
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

std::size_t arity(Primitive op) {
  switch (op) {
    case Primitive::conv2d:
    case Primitive::dense:
    case Primitive::add:
    case Primitive::bias_add:
      return 2;
    default:
      return 1;
  }
}

template <class T>
Tensor forward_typed(Primitive op, std::span<const Tensor* const> in, const Attrs& attrs) {
  const Tensor& x = *in[0];
  switch (op) {
    case Primitive::conv2d:
      return conv2d_forward<T>(x, *in[1]);
    case Primitive::dense:
      return dense_forward<T>(x, *in[1]);
    case Primitive::leaky_relu: {
      const T slope = static_cast<T>(attrs.scalar);
      return map_values<T>(x, [slope](T v) { return v > T(0) ? v : slope * v; });
    }
    case Primitive::upsample_nearest_2x:
      return upsample_forward<T>(x);
    case Primitive::avgpool_2x:
      return block_sum<T>(x, T(0.25), op);
    case Primitive::add:
      if (!(x.shape() == in[1]->shape())) shape_fail(op, x.shape(), in[1]->shape());
      return zip_values<T>(x, *in[1], [](T a, T b) { return a + b; });
    case Primitive::scale_by_constant: {
      const T f = static_cast<T>(attrs.scalar);
      return map_values<T>(x, [f](T v) { return v * f; });
    }
    case Primitive::pixel_norm:
      return pixel_norm_forward<T>(x);
    case Primitive::reduce_mean:
      return reduce_mean_forward<T>(x);
    case Primitive::tanh:
      return map_values<T>(x, [](T v) { return std::tanh(v); });
    case Primitive::bias_add:
      return bias_add_forward<T>(x, *in[1]);
    case Primitive::softplus:
      return map_values<T>(x, [](T v) { return softplus_value(v); });
    case Primitive::reshape:
      try {
        return x.reshaped(attrs.shape);
      } catch (const ShapeError&) {
        shape_fail(op, x.shape(), attrs.shape);
      }
    case Primitive::minibatch_stddev:
      return minibatch_stddev_forward<T>(x);
    case Primitive::linear_map:
      if (!attrs.map) shape_fail(op, "no operator attached");
      return attrs.map->apply(x);
  }
  throw Error("unknown primitive");
}

template <class T>
std::vector<std::optional<Tensor>> backward_typed(Primitive op, std::span<const Tensor* const> in, const Tensor& y,
                                                  const Tensor& gy, const Attrs& attrs, std::span<const bool> needs) {
  std::vector<std::optional<Tensor>> out(in.size());
  const Tensor& x = *in[0];
  switch (op) {
    case Primitive::conv2d:
      conv2d_backward<T>(x, *in[1], gy, needs[0], needs[1], out[0], out[1]);
      break;
    case Primitive::dense:
      dense_backward<T>(x, *in[1], gy, needs[0], needs[1], out[0], out[1]);
      break;
    case Primitive::leaky_relu: {
      const T slope = static_cast<T>(attrs.scalar);
      out[0] = zip_values<T>(x, gy, [slope](T v, T g) { return v > T(0) ? g : slope * g; });
      break;
    }
    case Primitive::upsample_nearest_2x:
      out[0] = block_sum<T>(gy, T(1), op);
      break;
    case Primitive::avgpool_2x:
      out[0] = spread_quarter<T>(gy, x.shape());
      break;
    case Primitive::add:
      if (needs[0]) out[0] = gy;
      if (needs[1]) out[1] = gy;
      break;
    case Primitive::scale_by_constant: {
      const T f = static_cast<T>(attrs.scalar);
      out[0] = map_values<T>(gy, [f](T g) { return g * f; });
      break;
    }
    case Primitive::pixel_norm:
      out[0] = pixel_norm_backward<T>(x, gy);
      break;
    case Primitive::reduce_mean: {
      const T g = gy.values<T>()[0] / static_cast<T>(x.numel());
      out[0] = Tensor(x.shape(), std::vector<T>(x.numel(), g));
      break;
    }
    case Primitive::tanh:
      out[0] = zip_values<T>(y, gy, [](T v, T g) { return g * (T(1) - v * v); });
      break;
    case Primitive::bias_add:
      if (needs[0]) out[0] = gy;
      if (needs[1]) out[1] = bias_add_backward_bias<T>(gy, in[1]->shape());
      break;
    case Primitive::softplus:
      out[0] = zip_values<T>(x, gy, [](T v, T g) { return g * sigmoid_value(v); });
      break;
    case Primitive::reshape:
      out[0] = gy.reshaped(x.shape());
      break;
    case Primitive::minibatch_stddev:
      out[0] = minibatch_stddev_backward<T>(x, gy);
      break;
    case Primitive::linear_map:
      out[0] = attrs.map->adjoint(gy);
      break;
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!needs[i]) out[i].reset();
  return out;
}

}  // namespace

std::string_view name(Primitive op) {
  switch (op) {
    case Primitive::conv2d:
      return "conv2d";
    case Primitive::dense:
      return "dense";
    case Primitive::leaky_relu:
      return "leaky_relu";
    case Primitive::upsample_nearest_2x:
      return "upsample_nearest_2x";
    case Primitive::avgpool_2x:
      return "avgpool_2x";
    case Primitive::add:
      return "add";
    case Primitive::scale_by_constant:
      return "scale_by_constant";
    case Primitive::pixel_norm:
      return "pixel_norm";
    case Primitive::reduce_mean:
      return "reduce_mean";
    case Primitive::tanh:
      return "tanh";
    case Primitive::bias_add:
      return "bias_add";
    case Primitive::softplus:
      return "softplus";
    case Primitive::reshape:
      return "reshape";
    case Primitive::minibatch_stddev:
      return "minibatch_stddev";
    case Primitive::linear_map:
      return "linear_map";
  }
  return "unknown";
}

Tensor forward_primitive(Primitive op, std::span<const Tensor* const> inputs, const Attrs& attrs) {
  if (inputs.size() != arity(op))
    throw Error(std::string(name(op)) + ": expected " + std::to_string(arity(op)) + " inputs, got " +
                std::to_string(inputs.size()));
  for (std::size_t i = 1; i < inputs.size(); ++i) require_same_dtype(*inputs[0], *inputs[i], name(op));
  return dispatch(inputs[0]->dtype(), [&](auto t) { return forward_typed<decltype(t)>(op, inputs, attrs); });
}

std::vector<std::optional<Tensor>> backward_primitive(Primitive op, std::span<const Tensor* const> inputs,
                                                      const Tensor& output, const Tensor& grad_output,
                                                      const Attrs& attrs, std::span<const bool> needs) {
  if (inputs.size() != arity(op) || needs.size() != inputs.size())
    throw Error(std::string(name(op)) + ": backward arity mismatch");
  require_same_shape(output, grad_output, name(op));
  require_same_dtype(output, grad_output, name(op));
  return dispatch(inputs[0]->dtype(),
                  [&](auto t) { return backward_typed<decltype(t)>(op, inputs, output, grad_output, attrs, needs); });
}

}  // namespace somforge::ad
