#pragma once

// Single-threaded tensor kernels. Every accumulation runs in a fixed order
// (ascending reduction index), so results are bit-stable across runs and
// equal to the textbook loop nests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "noisynet/errors.hpp"
#include "noisynet/tensor.hpp"

namespace noisynet::ops {

namespace detail {

// C[MxN] (+)= A[MxK] * B[KxN]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[MxN] (+)= A^T * B, with A stored [KxM] and B [KxN]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + s;
  return out;
}

/// ReLU with max(0, x); the subgradient at 0 is 0 (see relu_backward).
template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > T{0} || std::isnan(a[i]) ? a[i] : T{0};  // NaN propagates
  return out;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  Tensor<T> g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > T{0} ? grad_out[i] : T{0};
  return g;
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
T sum(const Tensor<T>& a) {
  T acc{0};
  for (const T& v : a.data()) acc += v;
  return acc;
}

template <class T>
T mean(const Tensor<T>& a) {
  return sum(a) / static_cast<T>(a.size());
}

/// Row-wise argmax of a [N, K] tensor; ties pick the lowest index.
template <class T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& a) {
  require_rank(a.shape(), 2, "argmax");
  const std::size_t n = a.dim(0), k = a.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (a[i * k + j] > a[i * k + best]) best = j;
    out[i] = best;
  }
  return out;
}

/// Row-wise softmax with max subtraction.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  require_rank(a.shape(), 2, "softmax");
  const std::size_t n = a.dim(0), k = a.dim(1);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < n; ++i) {
    T mx = a[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, a[i * k + j]);
    T z{0};
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = std::exp(a[i * k + j] - mx);
      z += out[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= z;
  }
  return out;
}

template <class T>
Tensor<T> flatten(const Tensor<T>& a) {
  if (a.rank() < 1) throw ShapeError("flatten: empty shape");
  return a.reshaped({a.dim(0), a.size() / a.dim(0)});
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  Tensor<T> out({a.dim(0), b.dim(1)});
  detail::gemm_nn(a.dim(0), b.dim(1), a.dim(1), a.raw(), b.raw(), out.raw(), false);
  return out;
}

/// y[N, out] = x[N, in] * W^T + b with W stored [out, in].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias) {
  require_rank(x.shape(), 2, "linear");
  require_rank(weight.shape(), 2, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in)
    throw ShapeError("linear: input features " + std::to_string(in) + " vs weight " +
                     shape_string(weight.shape()));
  std::vector<T> wt(in * out_f);
  detail::transpose(out_f, in, weight.raw(), wt.data());
  Tensor<T> y({n, out_f});
  detail::gemm_nn(n, out_f, in, x.raw(), wt.data(), y.raw(), false);
  if (bias) {
    if (bias->size() != out_f) throw ShapeError("linear: bias size mismatch");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_f; ++j) y[i * out_f + j] += (*bias)[j];
  }
  return y;
}

template <class T>
struct LinearGrads {
  Tensor<T> input, weight, bias;
};

template <class T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                               bool need_input) {
  const std::size_t n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  LinearGrads<T> g;
  if (need_input) {
    g.input = Tensor<T>(x.shape());
    detail::gemm_nn(n, in, out_f, grad_out.raw(), weight.raw(), g.input.raw(), false);
  }
  g.weight = Tensor<T>(weight.shape());
  detail::gemm_tn(out_f, in, n, grad_out.raw(), x.raw(), g.weight.raw(), false);
  g.bias = Tensor<T>({out_f});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out_f; ++j) g.bias[j] += grad_out[i * out_f + j];
  return g;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation), NCHW, kernels [F, C, kh, kw]

/// Window output size. Strict mode rejects windows that do not tile the padded
/// input exactly; floor mode drops the trailing partial window.
inline std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride,
                                 std::size_t padding, const char* op, bool floor_mode = false) {
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
  const std::size_t padded = in + 2 * padding;
  if (padded < kernel)
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(kernel) +
                     " larger than padded input " + std::to_string(padded));
  if (!floor_mode && (padded - kernel) % stride != 0)
    throw ShapeError(std::string(op) + ": non-integral output size for input " + std::to_string(in) +
                     ", kernel " + std::to_string(kernel) + ", stride " + std::to_string(stride) +
                     ", padding " + std::to_string(padding));
  return (padded - kernel) / stride + 1;
}

struct Conv2dGeometry {
  std::size_t channels, height, width, kernel_h, kernel_w, stride, padding, out_h, out_w;
  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  std::size_t pixels() const { return out_h * out_w; }
};

namespace detail {

// col[(c*kh + i)*kw + j][oy*OW + ox] = in[c][oy*s - p + i][ox*s - p + j] (zero outside)
template <class T>
void im2col(const Conv2dGeometry& g, const T* in, T* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t i = 0; i < g.kernel_h; ++i)
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * g.pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - pad;
          T* dst = row + oy * g.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = in + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - pad;
            dst[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) ? T{0}
                                                                           : src[static_cast<std::size_t>(x)];
          }
        }
      }
}

template <class T>
void col2im(const Conv2dGeometry& g, const T* col, T* in) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t i = 0; i < g.kernel_h; ++i)
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * g.pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = in + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - pad;
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.width))
              dst[static_cast<std::size_t>(x)] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace detail

inline Conv2dGeometry conv2d_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                                      std::size_t padding, bool floor_mode = false) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (input[1] != kernel[1])
    throw ShapeError("conv2d: input channels " + std::to_string(input[1]) + " vs kernel " +
                     shape_string(kernel));
  Conv2dGeometry g{input[1], input[2], input[3], kernel[2], kernel[3], stride, padding, 0, 0};
  g.out_h = conv_out_size(input[2], kernel[2], stride, padding, "conv2d", floor_mode);
  g.out_w = conv_out_size(input[3], kernel[3], stride, padding, "conv2d", floor_mode);
  return g;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const std::type_identity_t<Tensor<T>>* bias,
                 std::size_t stride, std::size_t padding, bool floor_mode = false) {
  const Conv2dGeometry g = conv2d_geometry(input.shape(), kernel.shape(), stride, padding, floor_mode);
  const std::size_t n = input.dim(0), f = kernel.dim(0);
  if (bias && bias->size() != f) throw ShapeError("conv2d: bias size mismatch");
  Tensor<T> out({n, f, g.out_h, g.out_w});
  std::vector<T> col(g.patch() * g.pixels());
  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = f * g.pixels();
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col(g, input.raw() + s * in_stride, col.data());
    T* dst = out.raw() + s * out_stride;
    detail::gemm_nn(f, g.pixels(), g.patch(), kernel.raw(), col.data(), dst, false);
    if (bias)
      for (std::size_t k = 0; k < f; ++k)
        for (std::size_t p = 0; p < g.pixels(); ++p) dst[k * g.pixels() + p] += (*bias)[k];
  }
  return out;
}

template <class T>
struct Conv2dGrads {
  Tensor<T> input, kernel, bias;
};

template <class T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& grad_out,
                               std::size_t stride, std::size_t padding, bool need_input,
                               bool floor_mode = false) {
  const Conv2dGeometry g = conv2d_geometry(input.shape(), kernel.shape(), stride, padding, floor_mode);
  const std::size_t n = input.dim(0), f = kernel.dim(0);
  Conv2dGrads<T> grads;
  grads.kernel = Tensor<T>(kernel.shape());
  grads.bias = Tensor<T>({f});
  if (need_input) grads.input = Tensor<T>(input.shape());
  std::vector<T> col(g.patch() * g.pixels());
  std::vector<T> col_t(g.patch() * g.pixels());
  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = f * g.pixels();
  for (std::size_t s = 0; s < n; ++s) {
    const T* gout = grad_out.raw() + s * out_stride;
    detail::im2col(g, input.raw() + s * in_stride, col.data());
    detail::transpose(g.patch(), g.pixels(), col.data(), col_t.data());
    detail::gemm_nn(f, g.patch(), g.pixels(), gout, col_t.data(), grads.kernel.raw(), true);
    for (std::size_t k = 0; k < f; ++k)
      for (std::size_t p = 0; p < g.pixels(); ++p) grads.bias[k] += gout[k * g.pixels() + p];
    if (need_input) {
      detail::gemm_tn(g.patch(), g.pixels(), f, kernel.raw(), gout, col.data(), false);
      detail::col2im(g, col.data(), grads.input.raw() + s * in_stride);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Pooling

template <class T>
struct MaxPoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Max pooling; ties route to the first maximal element in scan order.
template <class T>
MaxPoolResult<T> max_pool2d(const Tensor<T>& input, std::size_t kernel, std::size_t stride,
                            std::size_t padding = 0, bool floor_mode = false) {
  require_rank(input.shape(), 4, "max_pool2d");
  if (padding * 2 > kernel) throw ShapeError("max_pool2d: padding exceeds half the kernel");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = conv_out_size(h, kernel, stride, padding, "max_pool2d", floor_mode);
  const std::size_t ow = conv_out_size(w, kernel, stride, padding, "max_pool2d", floor_mode);
  MaxPoolResult<T> r{Tensor<T>({n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = base;
        bool found = false;
        for (std::size_t i = 0; i < kernel; ++i) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + i) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * stride + j) - pad;
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = base + static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
            if (!found || input[idx] > best || (std::isnan(input[idx]) && !std::isnan(best))) {
              best = input[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        r.output[o] = best;
        r.argmax[o] = best_idx;
      }
  }
  return r;
}

template <class T>
Tensor<T> max_pool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                              const Tensor<T>& grad_out) {
  Tensor<T> g(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += grad_out[o];
  return g;
}

inline std::size_t adaptive_start(std::size_t o, std::size_t in, std::size_t out) { return o * in / out; }
inline std::size_t adaptive_end(std::size_t o, std::size_t in, std::size_t out) {
  return ((o + 1) * in + out - 1) / out;
}

/// Adaptive average pooling to (out_h, out_w); window bounds floor(o*H/OH) .. ceil((o+1)*H/OH).
template <class T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input.shape(), 4, "adaptive_avg_pool2d");
  if (out_h == 0 || out_w == 0) throw ShapeError("adaptive_avg_pool2d: zero output size");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor<T> out({n, c, out_h, out_w});
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = input.raw() + plane * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const std::size_t y0 = adaptive_start(oy, h, out_h), y1 = adaptive_end(oy, h, out_h);
      for (std::size_t ox = 0; ox < out_w; ++ox, ++o) {
        const std::size_t x0 = adaptive_start(ox, w, out_w), x1 = adaptive_end(ox, w, out_w);
        T acc{0};
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) acc += src[y * w + x];
        out[o] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> adaptive_avg_pool2d_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  const std::size_t n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
  const std::size_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  Tensor<T> g(input_shape);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    T* dst = g.raw() + plane * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const std::size_t y0 = adaptive_start(oy, h, out_h), y1 = adaptive_end(oy, h, out_h);
      for (std::size_t ox = 0; ox < out_w; ++ox, ++o) {
        const std::size_t x0 = adaptive_start(ox, w, out_w), x1 = adaptive_end(ox, w, out_w);
        const T share = grad_out[o] / static_cast<T>((y1 - y0) * (x1 - x0));
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) dst[y * w + x] += share;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Loss

/// Mean over the batch of -log softmax(logits)[label], max-subtracted.
template <class T>
T cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  require_rank(logits.shape(), 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: label count differs from batch size");
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw ShapeError("cross_entropy: label out of range");
    const T* row = logits.raw() + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T z{0};
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    total += std::log(z) + mx - row[labels[i]];
  }
  return total / static_cast<T>(n);
}

template <class T>
Tensor<T> cross_entropy_backward(const Tensor<T>& logits, const std::vector<std::size_t>& labels, T upstream) {
  Tensor<T> g = softmax_rows(logits);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const T inv_n = upstream / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    g[i * k + labels[i]] -= T{1};
    for (std::size_t j = 0; j < k; ++j) g[i * k + j] *= inv_n;
  }
  return g;
}

}  // namespace noisynet::ops
