#pragma once

// Differentiable primitives. Every op takes the tape it records onto; pass
// Tape<T>::inference() (or any non-recording tape) for forward-only work.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rcn/errors.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

namespace detail {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

/// Marks `out` as tracked when the tape records and any input needs a gradient.
template <typename T, typename... Ins>
bool track(const Tape<T>& tape, Tensor<T>& out, const Ins&... ins) {
  const bool on = tape.recording() && (ins.requires_grad() || ...);
  out.set_requires_grad(on);
  return on;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shape algebra. These never touch data.

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

inline Shape conv2d_shape(const Shape& input, const Shape& kernel, std::size_t stride,
                          std::size_t padding) {
  if (input.size() != 3 || kernel.size() != 4) {
    throw DimensionError("conv2d: expected input CxHxW and kernel OxIxKhxKw, got " +
                         shape_str(input) + " and " + shape_str(kernel));
  }
  if (kernel[1] != input[0]) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel) + " expects " +
                         std::to_string(kernel[1]) + " input channels but input is " +
                         shape_str(input));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (kernel[2] > input[1] + 2 * padding || kernel[3] > input[2] + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel) + " larger than padded input " +
                         shape_str(input));
  }
  return {kernel[0], (input[1] + 2 * padding - kernel[2]) / stride + 1,
          (input[2] + 2 * padding - kernel[3]) / stride + 1};
}

inline Shape max_pool2d_shape(const Shape& input, std::size_t window_h, std::size_t window_w,
                              std::size_t stride) {
  if (input.size() != 3) throw DimensionError("max_pool2d: expected CxHxW, got " + shape_str(input));
  if (stride == 0 || window_h == 0 || window_w == 0) {
    throw DimensionError("max_pool2d: window and stride must be positive");
  }
  if (window_h > input[1] || window_w > input[2]) {
    throw DimensionError("max_pool2d: window " + std::to_string(window_h) + "x" +
                         std::to_string(window_w) + " larger than input " + shape_str(input));
  }
  return {input[0], (input[1] - window_h) / stride + 1, (input[2] - window_w) / stride + 1};
}

// ---------------------------------------------------------------------------
// Elementwise.

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (detail::track(tape, out, a, b)) {
    tape.record(OpKind::kAdd, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (detail::track(tape, out, a, b)) {
    tape.record(OpKind::kSub, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

/// Hadamard product.
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (detail::track(tape, out, a, b)) {
    tape.record(OpKind::kMul, out, [a, b, out]() mutable {
      auto g = out.grad();
      auto x = a.data();
      auto y = b.data();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = factor * x[i];
  if (detail::track(tape, out, a)) {
    tape.record(OpKind::kScale, out, [a, out, factor]() mutable {
      auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = detail::stable_sigmoid(x[i]);
  if (detail::track(tape, out, a)) {
    tape.record(OpKind::kSigmoid, out, [a, out]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(x[i]);
  if (detail::track(tape, out, a)) {
    tape.record(OpKind::kTanh, out, [a, out]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
    });
  }
  return out;
}

/// (1 - gate) * previous + gate * candidate, the GRU state update.
template <typename T>
Tensor<T> gru_blend(Tape<T>& tape, const Tensor<T>& gate, const Tensor<T>& previous,
                    const Tensor<T>& candidate) {
  detail::require_same_shape("gru_blend", gate, previous);
  detail::require_same_shape("gru_blend", gate, candidate);
  Tensor<T> out(gate.shape());
  auto o = out.data();
  auto z = gate.data();
  auto h = previous.data();
  auto c = candidate.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (T(1) - z[i]) * h[i] + z[i] * c[i];
  if (detail::track(tape, out, gate, previous, candidate)) {
    tape.record(OpKind::kGruBlend, out, [gate, previous, candidate, out]() mutable {
      auto g = out.grad();
      auto z = gate.data();
      auto h = previous.data();
      auto c = candidate.data();
      if (gate.requires_grad()) {
        auto gz = gate.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gz[i] += g[i] * (c[i] - h[i]);
      }
      if (previous.requires_grad()) {
        auto gh = previous.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gh[i] += g[i] * (T(1) - z[i]);
      }
      if (candidate.requires_grad()) {
        auto gc = candidate.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gc[i] += g[i] * z[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding) via im2col.

namespace detail {

struct ConvDims {
  std::size_t cin, h, w, cout, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvDims& d, T* col) {
  const std::size_t n = d.pixels();
  for (std::size_t c = 0; c < d.cin; ++c) {
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        T* row = col + ((c * d.kh + ki) * d.kw + kj) * n;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + ki) -
                                    static_cast<std::ptrdiff_t>(d.pad);
          T* dst = row + oy * d.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill(dst, dst + d.ow, T(0));
            continue;
          }
          const T* src = x + (c * d.h + static_cast<std::size_t>(iy)) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + kj) -
                                      static_cast<std::ptrdiff_t>(d.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) ? T(0)
                                                                         : src[ix];
          }
        }
      }
    }
  }
}

// Four rows of C[M x N] += a_r * B[q] for each q in order; the caller picks
// how a_r and the B rows are addressed.
template <typename T>
void axpy4(std::size_t N, T a0, T a1, T a2, T a3, const T* __restrict b, T* __restrict c0, T* __restrict c1,
           T* __restrict c2, T* __restrict c3) {
  for (std::size_t p = 0; p < N; ++p) {
    const T bv = b[p];
    c0[p] += a0 * bv;
    c1[p] += a1 * bv;
    c2[p] += a2 * bv;
    c3[p] += a3 * bv;
  }
}

template <typename T>
void axpy1(std::size_t N, T a, const T* __restrict b, T* __restrict c) {
  for (std::size_t p = 0; p < N; ++p) c[p] += a * b[p];
}

// C[M x N] += A[M x K] B[K x N], summing over K in order.
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* a, const T* b, T* c) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    T* c0 = c + i * N;
    for (std::size_t kk = 0; kk < K; ++kk) {
      axpy4(N, a[i * K + kk], a[(i + 1) * K + kk], a[(i + 2) * K + kk], a[(i + 3) * K + kk], b + kk * N, c0, c0 + N,
            c0 + 2 * N, c0 + 3 * N);
    }
  }
  for (; i < M; ++i)
    for (std::size_t kk = 0; kk < K; ++kk) axpy1(N, a[i * K + kk], b + kk * N, c + i * N);
}

// C[M x K] += A[M x N] B[K x N]^T. Each dot product is summed over N in order
// from zero before it is added to C.
template <typename T>
void gemm_nt_acc(std::size_t M, std::size_t K, std::size_t N, const T* a, const T* b, T* c) {
  std::vector<T> bt(K * N);
  for (std::size_t kk = 0; kk < K; ++kk)
    for (std::size_t p = 0; p < N; ++p) bt[p * K + kk] = b[kk * N + p];
  std::vector<T> acc(M * K, T(0));
  gemm_nn(M, K, N, a, bt.data(), acc.data());
  for (std::size_t i = 0; i < M * K; ++i) c[i] += acc[i];
}

// C[K x N] += A[M x K]^T B[M x N], summing over M in order.
template <typename T>
void gemm_tn(std::size_t M, std::size_t K, std::size_t N, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* arow = a + i * K;
    const T* brow = b + i * N;
    std::size_t kk = 0;
    for (; kk + 4 <= K; kk += 4) {
      T* c0 = c + kk * N;
      axpy4(N, arow[kk], arow[kk + 1], arow[kk + 2], arow[kk + 3], brow, c0, c0 + N, c0 + 2 * N, c0 + 3 * N);
    }
    for (; kk < K; ++kk) axpy1(N, arow[kk], brow, c + kk * N);
  }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* dx) {
  const std::size_t n = d.pixels();
  for (std::size_t c = 0; c < d.cin; ++c) {
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        const T* row = col + ((c * d.kh + ki) * d.kw + kj) * n;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + ki) -
                                    static_cast<std::ptrdiff_t>(d.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          T* dst = dx + (c * d.h + static_cast<std::size_t>(iy)) * d.w;
          const T* src = row + oy * d.ow;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + kj) -
                                      static_cast<std::ptrdiff_t>(d.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(d.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel,
                 std::size_t stride = 1, std::size_t padding = 0) {
  const Shape out_shape = conv2d_shape(input.shape(), kernel.shape(), stride, padding);
  const detail::ConvDims d{input.extent(0), input.extent(1), input.extent(2),
                           kernel.extent(0), kernel.extent(2), kernel.extent(3),
                           stride, padding, out_shape[1], out_shape[2]};
  const std::size_t k = d.patch();
  const std::size_t n = d.pixels();

  std::shared_ptr<std::vector<T>> col;
  const T* cols = input.data().data();
  if (!d.pointwise()) {
    col = std::make_shared<std::vector<T>>(k * n);
    detail::im2col(input.data().data(), d, col->data());
    cols = col->data();
  }

  Tensor<T> out(out_shape);
  detail::gemm_nn(d.cout, n, k, kernel.data().data(), cols, out.data().data());

  if (detail::track(tape, out, input, kernel)) {
    tape.record(OpKind::kConv2d, out, [input, kernel, out, col, d]() mutable {
      const std::size_t k = d.patch();
      const std::size_t n = d.pixels();
      const T* g = out.grad().data();
      const T* cols = col ? col->data() : input.data().data();
      if (kernel.requires_grad()) detail::gemm_nt_acc(d.cout, k, n, g, cols, kernel.ensure_grad().data());
      if (input.requires_grad()) {
        std::vector<T> dcol(k * n, T(0));
        detail::gemm_tn(d.cout, k, n, kernel.data().data(), g, dcol.data());
        T* gx = input.ensure_grad().data();
        if (d.pointwise()) {
          for (std::size_t i = 0; i < k * n; ++i) gx[i] += dcol[i];
        } else {
          detail::col2im_add(dcol.data(), d, gx);
        }
      }
    });
  }
  return out;
}

/// Adds bias[c] to every cell of channel c.
template <typename T>
Tensor<T> bias_add(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& bias) {
  detail::require_rank("bias_add", input, 3);
  if (bias.rank() != 1 || bias.extent(0) != input.extent(0)) {
    throw DimensionError("bias_add: bias " + shape_str(bias.shape()) + " does not match input " +
                         shape_str(input.shape()));
  }
  const std::size_t c = input.extent(0);
  const std::size_t plane = input.extent(1) * input.extent(2);
  Tensor<T> out(input.shape());
  auto o = out.data();
  auto x = input.data();
  auto b = bias.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < plane; ++p) o[ch * plane + p] = x[ch * plane + p] + b[ch];
  if (detail::track(tape, out, input, bias)) {
    tape.record(OpKind::kBiasAdd, out, [input, bias, out, c, plane]() mutable {
      auto g = out.grad();
      if (input.requires_grad()) {
        auto gx = input.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch) {
          T acc = T(0);
          for (std::size_t p = 0; p < plane; ++p) acc += g[ch * plane + p];
          gb[ch] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling.

namespace detail {

template <typename T>
Tensor<T> record_argmax_pool(Tape<T>& tape, OpKind kind, const Tensor<T>& input, Tensor<T> out,
                             std::vector<std::size_t> argmax) {
  if (track(tape, out, input)) {
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(argmax));
    tape.record(kind, out, [input, out, idx]() mutable {
      auto g = out.grad();
      auto gx = input.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*idx)[i]] += g[i];
    });
  }
  return out;
}

}  // namespace detail

/// Max over window_h x window_w windows. Gradient goes to the first maximal
/// element of each window in row-major order.
template <typename T>
Tensor<T> max_pool2d(Tape<T>& tape, const Tensor<T>& input, std::size_t window_h,
                     std::size_t window_w, std::size_t stride) {
  const Shape shape = max_pool2d_shape(input.shape(), window_h, window_w, stride);
  const std::size_t h = input.extent(1), w = input.extent(2);
  Tensor<T> out(shape);
  std::vector<std::size_t> argmax(out.size());
  auto x = input.data();
  auto o = out.data();
  std::size_t i = 0;
  for (std::size_t c = 0; c < shape[0]; ++c) {
    for (std::size_t oy = 0; oy < shape[1]; ++oy) {
      for (std::size_t ox = 0; ox < shape[2]; ++ox, ++i) {
        std::size_t best = (c * h + oy * stride) * w + ox * stride;
        for (std::size_t dy = 0; dy < window_h; ++dy) {
          for (std::size_t dx = 0; dx < window_w; ++dx) {
            const std::size_t at = (c * h + oy * stride + dy) * w + ox * stride + dx;
            if (x[at] > x[best]) best = at;
          }
        }
        o[i] = x[best];
        argmax[i] = best;
      }
    }
  }
  return detail::record_argmax_pool(tape, OpKind::kMaxPool, input, std::move(out), std::move(argmax));
}

/// Max pooling onto an exact out_h x out_w grid. Output cell (i, j) covers rows
/// [floor(i*H/out_h), ceil((i+1)*H/out_h)) and likewise for columns; when the
/// extents divide evenly this is ordinary max pooling with window = stride = ratio.
template <typename T>
Tensor<T> adaptive_max_pool2d(Tape<T>& tape, const Tensor<T>& input, std::size_t out_h,
                              std::size_t out_w) {
  detail::require_rank("adaptive_max_pool2d", input, 3);
  const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
  if (out_h == 0 || out_w == 0 || out_h > h || out_w > w) {
    throw DimensionError("adaptive_max_pool2d: cannot pool " + shape_str(input.shape()) + " to " +
                         std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  Tensor<T> out(Shape{c, out_h, out_w});
  std::vector<std::size_t> argmax(out.size());
  auto x = input.data();
  auto o = out.data();
  std::size_t i = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const std::size_t y0 = oy * h / out_h, y1 = ((oy + 1) * h + out_h - 1) / out_h;
      for (std::size_t ox = 0; ox < out_w; ++ox, ++i) {
        const std::size_t x0 = ox * w / out_w, x1 = ((ox + 1) * w + out_w - 1) / out_w;
        std::size_t best = (ch * h + y0) * w + x0;
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) {
            const std::size_t at = (ch * h + yy) * w + xx;
            if (x[at] > x[best]) best = at;
          }
        }
        o[i] = x[best];
        argmax[i] = best;
      }
    }
  }
  return detail::record_argmax_pool(tape, OpKind::kAdaptiveMaxPool, input, std::move(out),
                                    std::move(argmax));
}

/// Mean over the spatial grid: CxHxW -> C.
template <typename T>
Tensor<T> avg_pool_spatial(Tape<T>& tape, const Tensor<T>& input) {
  detail::require_rank("avg_pool_spatial", input, 3);
  const std::size_t c = input.extent(0);
  const std::size_t plane = input.extent(1) * input.extent(2);
  if (c == 0 || plane == 0) throw DimensionError("avg_pool_spatial: empty tensor " + shape_str(input.shape()));
  Tensor<T> out(Shape{c});
  auto x = input.data();
  auto o = out.data();
  const T inv = T(1) / static_cast<T>(plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T acc = T(0);
    for (std::size_t p = 0; p < plane; ++p) acc += x[ch * plane + p];
    o[ch] = acc * inv;
  }
  if (detail::track(tape, out, input)) {
    tape.record(OpKind::kAvgPoolSpatial, out, [input, out, plane, inv]() mutable {
      auto g = out.grad();
      auto gx = input.ensure_grad();
      for (std::size_t ch = 0; ch < g.size(); ++ch)
        for (std::size_t p = 0; p < plane; ++p) gx[ch * plane + p] += g[ch] * inv;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vector algebra.

/// matrix [M x N] times vector [N] -> [M].
template <typename T>
Tensor<T> matvec(Tape<T>& tape, const Tensor<T>& matrix, const Tensor<T>& vec) {
  detail::require_rank("matvec", matrix, 2);
  detail::require_rank("matvec", vec, 1);
  const std::size_t m = matrix.extent(0), n = matrix.extent(1);
  if (vec.extent(0) != n) {
    throw DimensionError("matvec: matrix " + shape_str(matrix.shape()) + " cannot multiply vector " +
                         shape_str(vec.shape()));
  }
  Tensor<T> out(Shape{m});
  auto a = matrix.data();
  auto x = vec.data();
  auto o = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < n; ++j) acc += a[i * n + j] * x[j];
    o[i] = acc;
  }
  if (detail::track(tape, out, matrix, vec)) {
    tape.record(OpKind::kMatVec, out, [matrix, vec, out, m, n]() mutable {
      auto g = out.grad();
      if (matrix.requires_grad()) {
        auto ga = matrix.ensure_grad();
        auto x = vec.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i] * x[j];
      }
      if (vec.requires_grad()) {
        auto gx = vec.ensure_grad();
        auto a = matrix.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gx[j] += g[i] * a[i * n + j];
      }
    });
  }
  return out;
}

/// Inner product of equal-shape tensors -> scalar tensor.
template <typename T>
Tensor<T> dot(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("dot", a, b);
  auto x = a.data();
  auto y = b.data();
  T acc = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::track(tape, out, a, b)) {
    tape.record(OpKind::kDot, out, [a, b, out]() mutable {
      const T g = out.grad()[0];
      auto x = a.data();
      auto y = b.data();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * x[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::track(tape, out, a)) {
    tape.record(OpKind::kSum, out, [a, out]() mutable {
      const T g = out.grad()[0];
      for (auto& v : a.ensure_grad()) v += g;
    });
  }
  return out;
}

/// Inverted dropout: zeroes each element with probability `drop` and scales
/// survivors by 1/(1-drop), so no rescaling is needed at inference.
template <typename T, typename Rng>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& a, double drop, Rng& rng) {
  if (!(drop >= 0.0 && drop < 1.0)) throw ConfigError("dropout probability must lie in [0, 1)");
  if (drop == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - drop);
  const T survivor = static_cast<T>(1.0 / (1.0 - drop));
  auto mask = std::make_shared<std::vector<T>>(a.size());
  for (auto& m : *mask) m = keep(rng) ? survivor : T(0);
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * (*mask)[i];
  if (detail::track(tape, out, a)) {
    tape.record(OpKind::kDropout, out, [a, out, mask]() mutable {
      auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

/// x / max(||x||_2, eps).
template <typename T>
Tensor<T> l2_normalize(Tape<T>& tape, const Tensor<T>& a, T eps = T(1e-12)) {
  T sq = T(0);
  for (T v : a.data()) sq += v * v;
  const T norm = std::sqrt(sq);
  const bool clamped = norm <= eps;
  const T denom = clamped ? eps : norm;
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] / denom;
  if (detail::track(tape, out, a)) {
    tape.record(OpKind::kL2Normalize, out, [a, out, denom, clamped]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto ga = a.ensure_grad();
      T proj = T(0);
      if (!clamped)
        for (std::size_t i = 0; i < g.size(); ++i) proj += g[i] * y[i];
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (g[i] - y[i] * proj) / denom;
    });
  }
  return out;
}

/// Elementwise mean of equal-shape tensors.
template <typename T>
Tensor<T> stack_mean(Tape<T>& tape, const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw DimensionError("stack_mean: empty input");
  for (const auto& t : items) detail::require_same_shape("stack_mean", items.front(), t);
  const T inv = T(1) / static_cast<T>(items.size());
  Tensor<T> out(items.front().shape());
  auto o = out.data();
  for (const auto& t : items) {
    auto x = t.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += x[i];
  }
  for (auto& v : o) v *= inv;
  bool any = false;
  for (const auto& t : items) any = any || t.requires_grad();
  out.set_requires_grad(tape.recording() && any);
  if (out.requires_grad()) {
    tape.record(OpKind::kStackMean, out, [items, out, inv]() mutable {
      auto g = out.grad();
      for (auto& t : items) {
        if (!t.requires_grad()) continue;
        auto gt = t.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i] * inv;
      }
    });
  }
  return out;
}

/// Elementwise max of equal-shape tensors; ties go to the earliest item.
template <typename T>
Tensor<T> stack_max(Tape<T>& tape, const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw DimensionError("stack_max: empty input");
  for (const auto& t : items) detail::require_same_shape("stack_max", items.front(), t);
  Tensor<T> out = items.front().clone();
  out.set_requires_grad(false);
  auto which = std::make_shared<std::vector<std::size_t>>(out.size(), 0);
  auto o = out.data();
  for (std::size_t k = 1; k < items.size(); ++k) {
    auto x = items[k].data();
    for (std::size_t i = 0; i < o.size(); ++i) {
      if (x[i] > o[i]) {
        o[i] = x[i];
        (*which)[i] = k;
      }
    }
  }
  bool any = false;
  for (const auto& t : items) any = any || t.requires_grad();
  out.set_requires_grad(tape.recording() && any);
  if (out.requires_grad()) {
    tape.record(OpKind::kStackMax, out, [items, out, which]() mutable {
      auto g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        auto& t = items[(*which)[i]];
        if (t.requires_grad()) t.ensure_grad()[i] += g[i];
      }
    });
  }
  return out;
}

/// Smallest distance kept between a probability and {0, 1} before taking logs.
inline constexpr double kProbabilityClamp = 1e-7;

/// -log(s) for similar pairs, -log(1 - s) for dissimilar ones.
template <typename T>
Tensor<T> binary_cross_entropy(Tape<T>& tape, const Tensor<T>& prob, bool similar) {
  const T s = prob.item();
  if (!std::isfinite(s)) throw NumericError("binary_cross_entropy: probability is not finite");
  const T lo = static_cast<T>(kProbabilityClamp);
  const T hi = T(1) - lo;
  const T p = std::clamp(s, lo, hi);
  if (!(p > T(0) && p < T(1))) throw NumericError("binary_cross_entropy: probability outside (0,1)");
  const bool inside = s > lo && s < hi;
  Tensor<T> out = Tensor<T>::scalar(similar ? -std::log(p) : -std::log(T(1) - p));
  if (detail::track(tape, out, prob)) {
    tape.record(OpKind::kBinaryCrossEntropy, out, [prob, out, p, similar, inside]() mutable {
      if (!inside) return;
      const T g = out.grad()[0];
      prob.ensure_grad()[0] += similar ? -g / p : g / (T(1) - p);
    });
  }
  return out;
}

/// Elementwise clamp of every gradient component into [lo, hi].
template <typename T>
void clip_gradients(std::vector<Tensor<T>>& params, T lo = T(-5), T hi = T(5)) {
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (auto& g : p.grad()) g = std::clamp(g, lo, hi);
  }
}

template <typename T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

}  // namespace rcn
