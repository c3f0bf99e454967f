#pragma once

// Differentiable layers and losses: conv2d, deconv2d, affine, relu, sigmoid,
// masked mse, stop_gradient, plus the small glue ops the networks need.

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "blockplan/nn/gemm.hpp"
#include "blockplan/nn/tensor.hpp"

namespace blockplan::nn {

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int output_padding = 0;  // transposed mode only
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

inline int conv_output_size(int in, const ConvSpec& s) {
  if (in + 2 * s.padding < s.kernel)
    throw ShapeError("conv: spatial size " + std::to_string(in) + " smaller than kernel " +
                     std::to_string(s.kernel) + " after padding");
  return (in + 2 * s.padding - s.kernel) / s.stride + 1;
}

inline int deconv_output_size(int in, const ConvSpec& s) {
  return (in - 1) * s.stride - 2 * s.padding + s.kernel + s.output_padding;
}

namespace detail {

inline void check(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

inline void validate_spec(const ConvSpec& s, const char* op) {
  const std::string p = std::string(op) + ": ";
  check(s.in_channels > 0, p + "in_channels must be positive");
  check(s.out_channels > 0, p + "out_channels must be positive");
  check(s.kernel > 0, p + "kernel must be positive");
  check(s.stride > 0, p + "stride must be positive");
  check(s.padding >= 0, p + "padding must be non-negative");
  check(s.output_padding >= 0 && s.output_padding < s.stride,
        p + "output_padding must lie in [0, stride)");
}

/// Unfolds image c x h x w into rows (c, ki, kj) and columns offset + (oy, ox)
/// of a matrix with leading dimension ld.
template <class T>
void im2col(const T* img, int channels, int h, int w, int k, int stride, int pad, int oh, int ow,
            T* col, std::size_t ld, std::size_t offset) {
  for (int c = 0; c < channels; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + static_cast<std::size_t>((c * k + ki) * k + kj) * ld + offset;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ki;
          T* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = img + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

/// Adjoint of im2col: accumulates columns back into the image.
template <class T>
void col2im(const T* col, int channels, int h, int w, int k, int stride, int pad, int oh, int ow,
            T* img, std::size_t ld, std::size_t offset) {
  for (int c = 0; c < channels; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + static_cast<std::size_t>((c * k + ki) * k + kj) * ld + offset;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * ow;
          T* dst = img + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

/// [B, C, P] <-> [C, B*P]
template <class T>
void batch_to_channel_major(const T* in, int batch, int channels, std::size_t plane, T* out) {
  const std::size_t ld = static_cast<std::size_t>(batch) * plane;
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      std::copy_n(in + (static_cast<std::size_t>(b) * channels + c) * plane, plane,
                  out + c * ld + b * plane);
}

template <class T>
void channel_major_to_batch(const T* in, int batch, int channels, std::size_t plane, T* out) {
  const std::size_t ld = static_cast<std::size_t>(batch) * plane;
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      std::copy_n(in + c * ld + b * plane, plane,
                  out + (static_cast<std::size_t>(b) * channels + c) * plane);
}

/// Values frozen at stop_gradient boundaries while finite differences are
/// taken, so the numeric derivative sees stopped values as constants.
struct StopGradientReplay {
  enum class Mode { Off, Record, Replay } mode = Mode::Off;
  std::vector<std::vector<double>> values;
  std::size_t cursor = 0;
};

inline StopGradientReplay& stop_gradient_replay() {
  thread_local StopGradientReplay replay;
  return replay;
}

}  // namespace detail

/// Cross-correlation with zero padding.
/// input [B, Cin, H, W]; weights [Cout, Cin, k, k]; bias [Cout].
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const ConvSpec& spec, const BasicTensor<T>& weights,
                      const BasicTensor<T>& bias) {
  using detail::check;
  detail::validate_spec(spec, "conv2d");
  check(input.rank() == 4, "conv2d: input must be [batch, channels, height, width], got " + to_string(input.shape()));
  check(input.dim(1) == spec.in_channels, "conv2d: input channels " + std::to_string(input.dim(1)) +
                                              " != spec in_channels " + std::to_string(spec.in_channels));
  check(weights.shape() == Shape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
        "conv2d: weights shape " + to_string(weights.shape()) + " does not match ConvSpec");
  check(bias.shape() == Shape{spec.out_channels},
        "conv2d: bias length " + to_string(bias.shape()) + " != out_channels " + std::to_string(spec.out_channels));

  const int batch = input.dim(0), h = input.dim(2), w = input.dim(3);
  const int oh = conv_output_size(h, spec), ow = conv_output_size(w, spec);
  const int k = spec.kernel, cin = spec.in_channels, cout = spec.out_channels;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t ld = plane * batch;
  const int ckk = cin * k * k;

  auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(ckk) * ld);
  const std::size_t in_plane = static_cast<std::size_t>(cin) * h * w;
  for (int b = 0; b < batch; ++b)
    detail::im2col(input.values().data() + b * in_plane, cin, h, w, k, spec.stride, spec.padding, oh, ow,
                   col->data(), ld, b * plane);

  std::vector<T> y(static_cast<std::size_t>(cout) * ld);
  detail::gemm(false, false, cout, static_cast<int>(ld), ckk, T(1), weights.values().data(), ckk, col->data(),
               static_cast<int>(ld), T(0), y.data(), static_cast<int>(ld));
  std::vector<T> out(static_cast<std::size_t>(batch) * cout * plane);
  detail::channel_major_to_batch(y.data(), batch, cout, plane, out.data());
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < cout; ++c) {
      T* p = out.data() + (static_cast<std::size_t>(b) * cout + c) * plane;
      const T bv = bias.values()[c];
      for (std::size_t i = 0; i < plane; ++i) p[i] += bv;
    }

  auto result = detail::make_result<T>({batch, cout, oh, ow}, std::move(out), {input, weights, bias});
  if (result.requires_grad()) {
    result.node().backward = [=](detail::Node<T>& self) {
      auto& x = *self.parents[0];
      auto& wt = *self.parents[1];
      auto& bs = *self.parents[2];
      std::vector<T> dy(static_cast<std::size_t>(cout) * ld);
      detail::batch_to_channel_major(self.grad.data(), batch, cout, plane, dy.data());
      if (bs.requires_grad) {
        auto& db = bs.ensure_grad();
        for (int c = 0; c < cout; ++c) {
          T acc = 0;
          const T* row = dy.data() + c * ld;
          for (std::size_t i = 0; i < ld; ++i) acc += row[i];
          db[c] += acc;
        }
      }
      if (wt.requires_grad) {
        detail::gemm(false, true, cout, ckk, static_cast<int>(ld), T(1), dy.data(), static_cast<int>(ld),
                     col->data(), static_cast<int>(ld), T(1), wt.ensure_grad().data(), ckk);
      }
      if (x.requires_grad) {
        std::vector<T> dcol(static_cast<std::size_t>(ckk) * ld);
        detail::gemm(true, false, ckk, static_cast<int>(ld), cout, T(1), wt.value.data(), ckk, dy.data(),
                     static_cast<int>(ld), T(0), dcol.data(), static_cast<int>(ld));
        auto& dx = x.ensure_grad();
        for (int b = 0; b < batch; ++b)
          detail::col2im(dcol.data(), cin, h, w, k, spec.stride, spec.padding, oh, ow, dx.data() + b * in_plane,
                         ld, b * plane);
      }
    };
  }
  return result;
}

/// Transposed convolution, the adjoint of conv2d with the same kernel.
/// input [B, Cin, H, W]; weights [Cin, Cout, k, k]; bias [Cout].
template <class T>
BasicTensor<T> deconv2d(const BasicTensor<T>& input, const ConvSpec& spec, const BasicTensor<T>& weights,
                        const BasicTensor<T>& bias) {
  using detail::check;
  detail::validate_spec(spec, "deconv2d");
  check(input.rank() == 4, "deconv2d: input must be [batch, channels, height, width], got " + to_string(input.shape()));
  check(input.dim(1) == spec.in_channels, "deconv2d: input channels " + std::to_string(input.dim(1)) +
                                              " != spec in_channels " + std::to_string(spec.in_channels));
  check(weights.shape() == Shape{spec.in_channels, spec.out_channels, spec.kernel, spec.kernel},
        "deconv2d: weights shape " + to_string(weights.shape()) + " does not match ConvSpec");
  check(bias.shape() == Shape{spec.out_channels},
        "deconv2d: bias length " + to_string(bias.shape()) + " != out_channels " + std::to_string(spec.out_channels));

  const int batch = input.dim(0), h = input.dim(2), w = input.dim(3);
  const int oh = deconv_output_size(h, spec), ow = deconv_output_size(w, spec);
  check(oh > 0 && ow > 0, "deconv2d: non-positive output size");
  const int k = spec.kernel, cin = spec.in_channels, cout = spec.out_channels;
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t ld = in_plane * batch;
  const int cokk = cout * k * k;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;

  auto xm = std::make_shared<std::vector<T>>(static_cast<std::size_t>(cin) * ld);
  detail::batch_to_channel_major(input.values().data(), batch, cin, in_plane, xm->data());
  std::vector<T> col(static_cast<std::size_t>(cokk) * ld);
  detail::gemm(true, false, cokk, static_cast<int>(ld), cin, T(1), weights.values().data(), cokk, xm->data(),
               static_cast<int>(ld), T(0), col.data(), static_cast<int>(ld));
  std::vector<T> out(static_cast<std::size_t>(batch) * cout * out_plane, T(0));
  for (int b = 0; b < batch; ++b) {
    T* img = out.data() + b * cout * out_plane;
    detail::col2im(col.data(), cout, oh, ow, k, spec.stride, spec.padding, h, w, img, ld, b * in_plane);
    for (int c = 0; c < cout; ++c) {
      const T bv = bias.values()[c];
      for (std::size_t i = 0; i < out_plane; ++i) img[c * out_plane + i] += bv;
    }
  }

  auto result = detail::make_result<T>({batch, cout, oh, ow}, std::move(out), {input, weights, bias});
  if (result.requires_grad()) {
    result.node().backward = [=](detail::Node<T>& self) {
      auto& x = *self.parents[0];
      auto& wt = *self.parents[1];
      auto& bs = *self.parents[2];
      if (bs.requires_grad) {
        auto& db = bs.ensure_grad();
        for (int b = 0; b < batch; ++b)
          for (int c = 0; c < cout; ++c) {
            T acc = 0;
            const T* p = self.grad.data() + (static_cast<std::size_t>(b) * cout + c) * out_plane;
            for (std::size_t i = 0; i < out_plane; ++i) acc += p[i];
            db[c] += acc;
          }
      }
      if (!wt.requires_grad && !x.requires_grad) return;
      std::vector<T> dcol(static_cast<std::size_t>(cokk) * ld);
      for (int b = 0; b < batch; ++b)
        detail::im2col(self.grad.data() + b * cout * out_plane, cout, oh, ow, k, spec.stride, spec.padding, h, w,
                       dcol.data(), ld, b * in_plane);
      if (wt.requires_grad) {
        detail::gemm(false, true, cin, cokk, static_cast<int>(ld), T(1), xm->data(), static_cast<int>(ld),
                     dcol.data(), static_cast<int>(ld), T(1), wt.ensure_grad().data(), cokk);
      }
      if (x.requires_grad) {
        std::vector<T> dxm(static_cast<std::size_t>(cin) * ld);
        detail::gemm(false, false, cin, static_cast<int>(ld), cokk, T(1), wt.value.data(), cokk, dcol.data(),
                     static_cast<int>(ld), T(0), dxm.data(), static_cast<int>(ld));
        std::vector<T> dx(static_cast<std::size_t>(batch) * cin * in_plane);
        detail::channel_major_to_batch(dxm.data(), batch, cin, in_plane, dx.data());
        auto& g = x.ensure_grad();
        for (std::size_t i = 0; i < dx.size(); ++i) g[i] += dx[i];
      }
    };
  }
  return result;
}

/// y = W x + b for input [N] or a batch [B, N]; weights [M, N]; bias [M].
template <class T>
BasicTensor<T> affine(const BasicTensor<T>& input, const BasicTensor<T>& weights, const BasicTensor<T>& bias) {
  using detail::check;
  check(input.rank() == 1 || input.rank() == 2, "affine: input must be [N] or [batch, N], got " + to_string(input.shape()));
  check(weights.rank() == 2, "affine: weights must be [M, N], got " + to_string(weights.shape()));
  const int n = input.shape().back();
  const int m = weights.dim(0);
  check(weights.dim(1) == n, "affine: input width " + std::to_string(n) + " != weights columns " +
                                 std::to_string(weights.dim(1)));
  check(bias.shape() == Shape{m}, "affine: bias " + to_string(bias.shape()) + " != output width " + std::to_string(m));
  const int batch = input.rank() == 2 ? input.dim(0) : 1;

  std::vector<T> y(static_cast<std::size_t>(batch) * m);
  for (int b = 0; b < batch; ++b) std::copy(bias.values().begin(), bias.values().end(), y.begin() + b * m);
  detail::gemm(false, true, batch, m, n, T(1), input.values().data(), n, weights.values().data(), n, T(1), y.data(), m);

  Shape out_shape = input.rank() == 2 ? Shape{batch, m} : Shape{m};
  auto result = detail::make_result<T>(std::move(out_shape), std::move(y), {input, weights, bias});
  if (result.requires_grad()) {
    result.node().backward = [=](detail::Node<T>& self) {
      auto& x = *self.parents[0];
      auto& wt = *self.parents[1];
      auto& bs = *self.parents[2];
      const T* dy = self.grad.data();
      if (bs.requires_grad) {
        auto& db = bs.ensure_grad();
        for (int b = 0; b < batch; ++b)
          for (int j = 0; j < m; ++j) db[j] += dy[b * m + j];
      }
      if (wt.requires_grad)
        detail::gemm(true, false, m, n, batch, T(1), dy, m, x.value.data(), n, T(1), wt.ensure_grad().data(), n);
      if (x.requires_grad)
        detail::gemm(false, false, batch, n, m, T(1), dy, m, wt.value.data(), n, T(1), x.ensure_grad().data(), n);
    };
  }
  return result;
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& t) {
  std::vector<T> y(t.values().begin(), t.values().end());
  for (auto& v : y) v = v > T(0) ? v : T(0);
  auto result = detail::make_result<T>(t.shape(), std::move(y), {t});
  if (result.requires_grad()) {
    result.node().backward = [](detail::Node<T>& self) {
      auto& x = *self.parents[0];
      if (!x.requires_grad) return;
      auto& g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x.value[i] > T(0)) g[i] += self.grad[i];
    };
  }
  return result;
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& t) {
  std::vector<T> y(t.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-t.values()[i]));
  auto result = detail::make_result<T>(t.shape(), std::move(y), {t});
  if (result.requires_grad()) {
    result.node().backward = [](detail::Node<T>& self) {
      auto& x = *self.parents[0];
      if (!x.requires_grad) return;
      auto& g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T s = self.value[i];
        g[i] += self.grad[i] * s * (T(1) - s);
      }
    };
  }
  return result;
}

/// Same values, new shape.
template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& t, Shape shape) {
  detail::check(numel(shape) == t.size(), "reshape: " + to_string(t.shape()) + " -> " + to_string(shape));
  std::vector<T> y(t.values().begin(), t.values().end());
  auto result = detail::make_result<T>(std::move(shape), std::move(y), {t});
  if (result.requires_grad()) {
    result.node().backward = [](detail::Node<T>& self) {
      auto& x = *self.parents[0];
      if (!x.requires_grad) return;
      auto& g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return result;
}

/// [B, N1] ++ [B, N2] -> [B, N1 + N2]
template <class T>
BasicTensor<T> concat_columns(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::check(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
                "concat_columns: " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const int batch = a.dim(0), na = a.dim(1), nb = b.dim(1);
  std::vector<T> y(static_cast<std::size_t>(batch) * (na + nb));
  for (int r = 0; r < batch; ++r) {
    std::copy_n(a.values().data() + r * na, na, y.data() + r * (na + nb));
    std::copy_n(b.values().data() + r * nb, nb, y.data() + r * (na + nb) + na);
  }
  auto result = detail::make_result<T>({batch, na + nb}, std::move(y), {a, b});
  if (result.requires_grad()) {
    result.node().backward = [=](detail::Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      for (int r = 0; r < batch; ++r) {
        const T* g = self.grad.data() + r * (na + nb);
        if (pa.requires_grad) {
          auto& ga = pa.ensure_grad();
          for (int j = 0; j < na; ++j) ga[r * na + j] += g[j];
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (int j = 0; j < nb; ++j) gb[r * nb + j] += g[na + j];
        }
      }
    };
  }
  return result;
}

/// Identity forward; the result is a fresh leaf, so nothing flows back.
template <class T>
BasicTensor<T> stop_gradient(const BasicTensor<T>& t) {
  auto& replay = detail::stop_gradient_replay();
  using Mode = detail::StopGradientReplay::Mode;
  if (replay.mode == Mode::Record) {
    replay.values.emplace_back(t.values().begin(), t.values().end());
  } else if (replay.mode == Mode::Replay) {
    const auto& frozen = replay.values.at(replay.cursor++);
    std::vector<T> v(frozen.begin(), frozen.end());
    return BasicTensor<T>::from(t.shape(), std::move(v));
  }
  return t.clone();
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::check(a.shape() == b.shape(), "add: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  std::vector<T> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] + b.values()[i];
  auto result = detail::make_result<T>(a.shape(), std::move(y), {a, b});
  if (result.requires_grad()) {
    result.node().backward = [](detail::Node<T>& self) {
      for (auto& p : self.parents) {
        if (!p->requires_grad) continue;
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return result;
}

/// Scalar sum_i weights[i] * t[i] with constant weights.
template <class T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& t, std::vector<T> weights) {
  detail::check(weights.size() == t.size(), "weighted_sum: weight count mismatch for " + to_string(t.shape()));
  T acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * t.values()[i];
  auto result = detail::make_result<T>({1}, {acc}, {t});
  if (result.requires_grad()) {
    result.node().backward = [w = std::move(weights)](detail::Node<T>& self) {
      auto& x = *self.parents[0];
      if (!x.requires_grad) return;
      auto& g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * w[i];
    };
  }
  return result;
}

/// Mean of squared differences over entries where mask is 1. Target and mask
/// are constants. An all-zero mask gives loss 0 and zero gradient.
template <class T>
BasicTensor<T> mse(const BasicTensor<T>& pred, const BasicTensor<T>& target, const BasicTensor<T>* mask) {
  detail::check(pred.shape() == target.shape(),
                "mse: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  if (mask) detail::check(mask->shape() == pred.shape(), "mse: mask " + to_string(mask->shape()) + " vs prediction " + to_string(pred.shape()));
  const std::size_t n = pred.size();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask && mask->values()[i] == T(0)) continue;
    const double d = static_cast<double>(pred.values()[i]) - static_cast<double>(target.values()[i]);
    sum += d * d;
    ++count;
  }
  const T loss = count ? static_cast<T>(sum / static_cast<double>(count)) : T(0);
  auto result = detail::make_result<T>({1}, {loss}, {pred});
  if (result.requires_grad() && count > 0) {
    std::vector<T> tgt(target.values().begin(), target.values().end());
    std::vector<T> msk;
    if (mask) msk.assign(mask->values().begin(), mask->values().end());
    result.node().backward = [tgt = std::move(tgt), msk = std::move(msk), count](detail::Node<T>& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      auto& g = p.ensure_grad();
      const T scale = self.grad[0] * T(2) / static_cast<T>(count);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!msk.empty() && msk[i] == T(0)) continue;
        g[i] += scale * (p.value[i] - tgt[i]);
      }
    };
  }
  return result;
}

template <class T>
BasicTensor<T> mse(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  return mse(pred, target, static_cast<const BasicTensor<T>*>(nullptr));
}

template <class T>
BasicTensor<T> mse(const BasicTensor<T>& pred, const BasicTensor<T>& target, const BasicTensor<T>& mask) {
  return mse(pred, target, &mask);
}

}  // namespace blockplan::nn
