#pragma once

// Differentiable ops used by the U-Net and its losses.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "woundseg/autodiff/tensor.hpp"

namespace woundseg::ad {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require_rank(const Shape& s, int rank, const char* op) {
  if (static_cast<int>(s.size()) != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

struct ConvGeometry {
  int cin, h, w, k, stride, pad, ho, wo;
  int rows() const { return cin * k * k; }
  int cols() const { return ho * wo; }
};

// Unfolds one image [cin, h, w] into a [cin*k*k, ho*wo] patch matrix.
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const int kk = g.k * g.k;
  for (int c = 0; c < g.cin; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        T* dst = col + static_cast<std::size_t>(c * kk + ky * g.k + kx) * g.cols();
        const T* src = img + static_cast<std::size_t>(c) * g.h * g.w;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          T* drow = dst + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(drow, drow + g.wo, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            drow[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : T(0);
          }
        }
      }
}

// Adjoint of im2col: scatters patch-matrix gradients back into the image.
template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  const int kk = g.k * g.k;
  for (int c = 0; c < g.cin; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const T* src = col + static_cast<std::size_t>(c * kk + ky * g.k + kx) * g.cols();
        T* dst = img + static_cast<std::size_t>(c) * g.h * g.w;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          const T* srow = src + static_cast<std::size_t>(oy) * g.wo;
          T* drow = dst + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
          }
        }
      }
}

}  // namespace detail

// ---- elementwise -------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result<T>("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      in->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!in->requires_grad) continue;
      in->ensure_grad();
      const T sign = k == 0 ? T(1) : T(-1);
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += sign * self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.requires_grad) {
      x.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      y.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) y.grad[i] += self.grad[i] * x.value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
  return make_result<T>("scale", a.shape(), std::move(out), {a.node()}, [s](Node<T>& self) {
    auto& x = *self.inputs[0];
    x.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += s * self.grad[i];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.values()) s += v;
  return make_result<T>("sum", {1}, {s}, {a.node()}, [](Node<T>& self) {
    auto& x = *self.inputs[0];
    x.ensure_grad();
    for (auto& g : x.grad) g += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// x >= 0 -> x, else slope * x. The derivative at 0 is taken as 1.
template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope = T(0.01)) {
  if (slope < T(0)) throw ValueError("leaky_relu: slope must be >= 0");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = a.values()[i];
    out[i] = v >= T(0) ? v : slope * v;
  }
  return make_result<T>("leaky_relu", a.shape(), std::move(out), {a.node()}, [slope](Node<T>& self) {
    auto& x = *self.inputs[0];
    x.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      x.grad[i] += self.grad[i] * (x.value[i] >= T(0) ? T(1) : slope);
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return leaky_relu(a, T(0));
}

template <class T>
T sigmoid_scalar(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(a.values()[i]);
  return make_result<T>("sigmoid", a.shape(), std::move(out), {a.node()}, [](Node<T>& self) {
    auto& x = *self.inputs[0];
    x.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T s = self.value[i];
      x.grad[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

// ---- convolution ---------------------------------------------------------------

// Cross-correlation of input [N,Cin,H,W] with kernel [Cout,Cin,k,k], zero
// padding (k-1)/2 ("same" at stride 1). Bias [Cout] is optional.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias = nullptr,
                 int stride = 1) {
  detail::require_rank(input.shape(), 4, "conv2d input");
  detail::require_rank(kernel.shape(), 4, "conv2d kernel");
  const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin)
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
                     std::to_string(cin));
  if (kernel.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (k % 2 == 0) throw ShapeError("conv2d: same padding needs an odd kernel size");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout))
    throw ShapeError("conv2d: bias must have shape [" + std::to_string(cout) + "]");
  const int pad = (k - 1) / 2;
  const detail::ConvGeometry g{cin, h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1,
                               (w + 2 * pad - k) / stride + 1};
  const bool direct = k == 1 && stride == 1;  // the image already is the patch matrix
  const std::size_t in_plane = static_cast<std::size_t>(cin) * h * w;
  const std::size_t out_plane = static_cast<std::size_t>(cout) * g.cols();

  std::vector<T> out(static_cast<std::size_t>(n) * out_plane);
  std::vector<T> col(direct ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
  detail::CMapMat<T> wmat(kernel.values().data(), cout, g.rows());
  for (int b = 0; b < n; ++b) {
    const T* img = input.values().data() + b * in_plane;
    const T* cols = img;
    if (!direct) {
      detail::im2col(img, g, col.data());
      cols = col.data();
    }
    detail::CMapMat<T> cm(cols, g.rows(), g.cols());
    detail::MapMat<T> om(out.data() + b * out_plane, cout, g.cols());
    om.noalias() = wmat * cm;
    if (bias)
      for (int c = 0; c < cout; ++c) om.row(c).array() += bias->values()[c];
  }

  std::vector<std::shared_ptr<Node<T>>> inputs{input.node(), kernel.node()};
  if (bias) inputs.push_back(bias->node());
  return make_result<T>(
      "conv2d", {n, cout, g.ho, g.wo}, std::move(out), std::move(inputs),
      [g, n, cout, direct, in_plane, out_plane, has_bias = bias != nullptr](Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& wk = *self.inputs[1];
        Node<T>* bn = has_bias ? self.inputs[2].get() : nullptr;
        if (x.requires_grad) x.ensure_grad();
        if (wk.requires_grad) wk.ensure_grad();
        if (bn && bn->requires_grad) bn->ensure_grad();
        std::vector<T> col(direct ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
        std::vector<T> gcol(direct ? 0 : col.size());
        detail::CMapMat<T> wmat(wk.value.data(), cout, g.rows());
        for (int b = 0; b < n; ++b) {
          detail::CMapMat<T> gout(self.grad.data() + b * out_plane, cout, g.cols());
          if (wk.requires_grad) {
            const T* cols = x.value.data() + b * in_plane;
            if (!direct) {
              detail::im2col(cols, g, col.data());
              cols = col.data();
            }
            detail::MapMat<T> gw(wk.grad.data(), cout, g.rows());
            gw.noalias() += gout * detail::CMapMat<T>(cols, g.rows(), g.cols()).transpose();
          }
          if (bn && bn->requires_grad)
            for (int c = 0; c < cout; ++c) {
              // Plain loop: Eigen's vectorized sum() peels by address, so its
              // rounding would depend on where the buffer was allocated.
              T acc = T(0);
              const T* row = self.grad.data() + b * out_plane + static_cast<std::size_t>(c) * g.cols();
              for (int j = 0; j < g.cols(); ++j) acc += row[j];
              bn->grad[c] += acc;
            }
          if (x.requires_grad) {
            if (direct) {
              detail::MapMat<T> gx(x.grad.data() + b * in_plane, g.rows(), g.cols());
              gx.noalias() += wmat.transpose() * gout;
            } else {
              detail::MapMat<T> gc(gcol.data(), g.rows(), g.cols());
              gc.noalias() = wmat.transpose() * gout;
              detail::col2im_add(gcol.data(), g, x.grad.data() + b * in_plane);
            }
          }
        }
      });
}

// ---- resampling ----------------------------------------------------------------

// 2x2 max pooling with stride 2. Gradient goes to the first maximum in
// row-major order within each window.
template <class T>
Tensor<T> max_pool2(const Tensor<T>& input) {
  detail::require_rank(input.shape(), 4, "max_pool2");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 || w % 2)
    throw ShapeError("max_pool2: spatial dims must be even, got " + shape_str(input.shape()));
  const int ho = h / 2, wo = w / 2;
  std::vector<T> out(static_cast<std::size_t>(n) * c * ho * wo);
  std::vector<std::uint32_t> argmax(out.size());
  const T* src = input.values().data();
  std::size_t o = 0;
  for (int p = 0; p < n * c; ++p) {
    const std::size_t plane = static_cast<std::size_t>(p) * h * w;
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x, ++o) {
        const std::size_t base = plane + static_cast<std::size_t>(2 * y) * w + 2 * x;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (int q = 1; q < 4; ++q)
          if (src[cand[q]] > src[best]) best = cand[q];
        out[o] = src[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  }
  return make_result<T>("max_pool2", {n, c, ho, wo}, std::move(out), {input.node()},
                        [argmax = std::move(argmax)](Node<T>& self) {
                          auto& x = *self.inputs[0];
                          x.ensure_grad();
                          for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[argmax[i]] += self.grad[i];
                        });
}

// Nearest-neighbor 2x upsampling.
template <class T>
Tensor<T> upsample2(const Tensor<T>& input) {
  detail::require_rank(input.shape(), 4, "upsample2");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int ho = 2 * h, wo = 2 * w;
  std::vector<T> out(static_cast<std::size_t>(n) * c * ho * wo);
  const T* src = input.values().data();
  for (int p = 0; p < n * c; ++p)
    for (int y = 0; y < ho; ++y) {
      const T* srow = src + (static_cast<std::size_t>(p) * h + y / 2) * w;
      T* drow = out.data() + (static_cast<std::size_t>(p) * ho + y) * wo;
      for (int x = 0; x < wo; ++x) drow[x] = srow[x / 2];
    }
  return make_result<T>("upsample2", {n, c, ho, wo}, std::move(out), {input.node()},
                        [n, c, h, w](Node<T>& self) {
                          auto& x = *self.inputs[0];
                          x.ensure_grad();
                          const int wo = 2 * w;
                          for (int p = 0; p < n * c; ++p)
                            for (int y = 0; y < 2 * h; ++y) {
                              const T* grow = self.grad.data() + (static_cast<std::size_t>(p) * 2 * h + y) * wo;
                              T* xrow = x.grad.data() + (static_cast<std::size_t>(p) * h + y / 2) * w;
                              for (int xx = 0; xx < wo; ++xx) xrow[xx / 2] += grow[xx];
                            }
                        });
}

// Concatenation along the channel axis of [N,C,H,W] tensors.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  for (const auto& p : parts) detail::require_rank(p.shape(), 4, "concat_channels");
  const int n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  int ctotal = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w)
      throw ShapeError("concat_channels: batch/spatial mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    ctotal += p.dim(1);
  }
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<T> out(static_cast<std::size_t>(n) * ctotal * hw);
  std::vector<int> channels;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  for (const auto& p : parts) {
    channels.push_back(p.dim(1));
    inputs.push_back(p.node());
  }
  for (int b = 0; b < n; ++b) {
    std::size_t off = static_cast<std::size_t>(b) * ctotal * hw;
    for (const auto& p : parts) {
      const std::size_t len = static_cast<std::size_t>(p.dim(1)) * hw;
      std::copy_n(p.values().data() + b * len, len, out.data() + off);
      off += len;
    }
  }
  return make_result<T>("concat_channels", {n, ctotal, h, w}, std::move(out), std::move(inputs),
                        [n, ctotal, hw, channels](Node<T>& self) {
                          for (int b = 0; b < n; ++b) {
                            std::size_t off = static_cast<std::size_t>(b) * ctotal * hw;
                            for (std::size_t k = 0; k < channels.size(); ++k) {
                              const std::size_t len = static_cast<std::size_t>(channels[k]) * hw;
                              auto& in = *self.inputs[k];
                              if (in.requires_grad) {
                                in.ensure_grad();
                                T* dst = in.grad.data() + b * len;
                                for (std::size_t i = 0; i < len; ++i) dst[i] += self.grad[off + i];
                              }
                              off += len;
                            }
                          }
                        });
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_channels(std::vector<Tensor<T>>{a, b});
}

// ---- losses ----------------------------------------------------------------------

template <class T>
void require_binary_targets(const Tensor<T>& targets, const char* op) {
  for (T t : targets.values())
    if (t != T(0) && t != T(1)) throw ValueError(std::string(op) + ": targets must be 0 or 1");
}

// Mean over elements of max(z,0) - z*t + log(1 + exp(-|z|)).
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  detail::require_same(logits.shape(), targets.shape(), "bce_with_logits");
  require_binary_targets(targets, "bce_with_logits");
  const auto z = logits.values();
  const auto t = targets.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    acc += std::max(zi, 0.0) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  const double count = static_cast<double>(z.size());
  return make_result<T>("bce_with_logits", {1}, {static_cast<T>(acc / count)}, {logits.node(), targets.node()},
                        [count](Node<T>& self) {
                          auto& x = *self.inputs[0];
                          const auto& tv = self.inputs[1]->value;
                          if (!x.requires_grad) return;
                          x.ensure_grad();
                          const T gscale = static_cast<T>(self.grad[0] / count);
                          for (std::size_t i = 0; i < x.value.size(); ++i)
                            x.grad[i] += gscale * (sigmoid_scalar(x.value[i]) - tv[i]);
                        });
}

// Soft Dice loss 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps) over all
// elements, eps = 1.
template <class T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& targets, double eps = 1.0) {
  detail::require_same(probs.shape(), targets.shape(), "dice_loss");
  require_binary_targets(targets, "dice_loss");
  const auto p = probs.values();
  const auto t = targets.values();
  double inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += static_cast<double>(p[i]) * t[i];
    total += static_cast<double>(p[i]) + t[i];
  }
  const double loss = 1.0 - (2.0 * inter + eps) / (total + eps);
  return make_result<T>("dice_loss", {1}, {static_cast<T>(loss)}, {probs.node(), targets.node()},
                        [inter, total, eps](Node<T>& self) {
                          auto& x = *self.inputs[0];
                          const auto& tv = self.inputs[1]->value;
                          if (!x.requires_grad) return;
                          x.ensure_grad();
                          const double d = total + eps;
                          const double num = 2.0 * inter + eps;
                          const double g = self.grad[0];
                          for (std::size_t i = 0; i < x.value.size(); ++i)
                            x.grad[i] += static_cast<T>(-g * (2.0 * tv[i] * d - num) / (d * d));
                        });
}

}  // namespace woundseg::ad
