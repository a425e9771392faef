/* Copyright 2026 The LinearConv Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Differentiable primitives. Every op validates shapes eagerly, computes its
// value, and registers a backward rule that accumulates into its inputs.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "linearconv/errors.hpp"
#include "linearconv/gemm.hpp"
#include "linearconv/tensor.hpp"

namespace linearconv {

namespace detail {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

template <typename T>
bool wants_grad(const Node<T>& n) {
  return n.requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  gemm<T>(false, false, m, n, k, T(1), a.data().data(), b.data().data(), T(0), out.data());
  return Tensor<T>::from_op("matmul", {m, n}, std::move(out), {a, b},
                            [m, k, n](detail::Node<T>& self) {
                              auto& A = *self.inputs[0];
                              auto& B = *self.inputs[1];
                              const T* g = self.grad.data();
                              if (A.requires_grad) {
                                gemm<T>(false, true, m, k, n, T(1), g, B.value.data(), T(1),
                                        A.grad_buffer().data());
                              }
                              if (B.requires_grad) {
                                gemm<T>(true, false, k, n, m, T(1), A.value.data(), g, T(1),
                                        B.grad_buffer().data());
                              }
                            });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  const auto src = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  return Tensor<T>::from_op("transpose", {c, r}, std::move(out), {a},
                            [r, c](detail::Node<T>& self) {
                              auto& g_in = self.inputs[0]->grad_buffer();
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j)
                                  g_in[i * c + j] += self.grad[j * r + i];
                            });
}

/// Fully connected layer: x [N x in] * w^T [in x out] + b [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(1) ||
      b.dim(0) != w.dim(0)) {
    throw DimensionError("linear: incompatible shapes x=" + shape_str(x.shape()) +
                         " w=" + shape_str(w.shape()) + " b=" + shape_str(b.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  std::vector<T> out(n * out_dim);
  for (std::size_t i = 0; i < n; ++i)
    std::copy(b.data().begin(), b.data().end(), out.begin() + i * out_dim);
  gemm<T>(false, true, n, out_dim, in, T(1), x.data().data(), w.data().data(), T(1), out.data());
  return Tensor<T>::from_op(
      "linear", {n, out_dim}, std::move(out), {x, w, b},
      [n, in, out_dim](detail::Node<T>& self) {
        auto& X = *self.inputs[0];
        auto& W = *self.inputs[1];
        auto& B = *self.inputs[2];
        const T* g = self.grad.data();
        if (X.requires_grad)
          gemm<T>(false, false, n, in, out_dim, T(1), g, W.value.data(), T(1),
                  X.grad_buffer().data());
        if (W.requires_grad)
          gemm<T>(true, false, out_dim, in, n, T(1), g, X.value.data(), T(1),
                  W.grad_buffer().data());
        if (B.requires_grad) {
          auto& gb = B.grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[i * out_dim + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor<T>::from_op("add", a.shape(), std::move(out), {a, b},
                            [](detail::Node<T>& self) {
                              for (auto& in : self.inputs) {
                                if (!in->requires_grad) continue;
                                auto& g = in->grad_buffer();
                                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                              }
                            });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor<T>::from_op("sub", a.shape(), std::move(out), {a, b},
                            [](detail::Node<T>& self) {
                              for (std::size_t k = 0; k < 2; ++k) {
                                auto& in = *self.inputs[k];
                                if (!in.requires_grad) continue;
                                const T sign = k == 0 ? T(1) : T(-1);
                                auto& g = in.grad_buffer();
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  g[i] += sign * self.grad[i];
                              }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a[i];
  return Tensor<T>::from_op("scale", a.shape(), std::move(out), {a},
                            [s](detail::Node<T>& self) {
                              auto& g = self.inputs[0]->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
                            });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return Tensor<T>::from_op("sum", {1}, {total}, {a}, [](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  const auto src = a.data();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i] > T(0) ? src[i] : T(0);
  return Tensor<T>::from_op("relu", a.shape(), std::move(out), {a}, [](detail::Node<T>& self) {
    T* g = self.inputs[0]->grad_buffer().data();
    const T* v = self.value.data();
    const T* go = self.grad.data();
    const std::size_t n = self.value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += v[i] > T(0) ? go[i] : T(0);
  });
}

/// Entrywise absolute sum. Subgradient sign(0) = 0.
template <typename T>
Tensor<T> l1_norm(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += std::abs(v);
  return Tensor<T>::from_op("l1_norm", {1}, {total}, {a}, [](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    const T go = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = in.value[i];
      if (v > T(0)) g[i] += go;
      else if (v < T(0)) g[i] -= go;
    }
  });
}

/// Scales every row of a [k x n] matrix to unit l2 norm.
template <typename T>
Tensor<T> row_l2_normalize(const Tensor<T>& a) {
  detail::require_rank(a, 2, "row_l2_normalize");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<T> out(a.numel());
  std::vector<T> norms(rows);
  const auto src = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = T(0);
    for (std::size_t c = 0; c < cols; ++c) ss += src[r * cols + c] * src[r * cols + c];
    const T norm = std::sqrt(ss);
    if (!(norm >= T(1e-12))) {
      throw DegenerateFilterError("row_l2_normalize: row " + std::to_string(r) +
                                  " has l2 norm below 1e-12");
    }
    norms[r] = norm;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = src[r * cols + c] / norm;
  }
  return Tensor<T>::from_op(
      "row_l2_normalize", a.shape(), std::move(out), {a},
      [rows, cols, norms = std::move(norms)](detail::Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* y = self.value.data() + r * cols;
          const T* gy = self.grad.data() + r * cols;
          T dot = T(0);
          for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
          for (std::size_t c = 0; c < cols; ++c)
            g[r * cols + c] += (gy[c] - y[c] * dot) / norms[r];
        }
      });
}

/// Mean cross-entropy of softmax(logits) against integer class labels.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  detail::require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (n == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  }
  std::vector<T> probs(n * k);
  std::vector<int> lab(labels.begin(), labels.end());
  T loss = T(0);
  const auto z = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= k) {
      throw DimensionError("softmax_cross_entropy: label " + std::to_string(lab[i]) +
                           " outside [0, " + std::to_string(k) + ")");
    }
    T mx = z[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z[i * k + j]);
    T se = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(z[i * k + j] - mx);
      se += probs[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= se;
    loss += -(z[i * k + lab[i]] - mx - std::log(se));
  }
  loss /= static_cast<T>(n);
  return Tensor<T>::from_op(
      "softmax_cross_entropy", {1}, {loss}, {logits},
      [n, k, probs = std::move(probs), lab = std::move(lab)](detail::Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const T s = self.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < k; ++j) g[i * k + j] += s * probs[i * k + j];
          g[i * k + lab[i]] -= s;
        }
      });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return Tensor<T>::from_op("reshape", std::move(shape), std::move(out), {a},
                            [](detail::Node<T>& self) {
                              auto& g = self.inputs[0]->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                            });
}

/// [N x ...] -> [N x prod(...)].
template <typename T>
Tensor<T> flatten(const Tensor<T>& a) {
  if (a.rank() < 1) throw DimensionError("flatten: rank-0 tensor");
  const std::size_t n = a.dim(0);
  return reshape(a, {n, n == 0 ? 0 : a.numel() / n});
}

/// Concatenation along the first dimension.
template <typename T>
Tensor<T> concat0(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat0: no inputs");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw DimensionError("concat0: rank-0 input");
  std::size_t first = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() ||
        !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw DimensionError("concat0: trailing shapes differ, " + shape_str(shape) + " vs " +
                           shape_str(p.shape()));
    }
    first += p.dim(0);
  }
  shape[0] = first;
  std::vector<T> out;
  out.reserve(shape_numel(shape));
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  return Tensor<T>::from_op("concat0", std::move(shape), std::move(out), parts,
                            [sizes = std::move(sizes)](detail::Node<T>& self) {
                              std::size_t offset = 0;
                              for (std::size_t k = 0; k < sizes.size(); ++k) {
                                auto& in = *self.inputs[k];
                                if (in.requires_grad) {
                                  auto& g = in.grad_buffer();
                                  for (std::size_t i = 0; i < sizes[k]; ++i)
                                    g[i] += self.grad[offset + i];
                                }
                                offset += sizes[k];
                              }
                            });
}

// ---------------------------------------------------------------------------
// Spatial ops. Layout is NCHW throughout.

struct ConvGeometry {
  std::size_t n, c, h, w;       // input
  std::size_t f, kh, kw;        // kernel
  std::size_t stride, padding;
  std::size_t out_h, out_w;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t padding, const char* axis) {
  if (stride == 0) throw GeometryError("conv2d: stride must be positive");
  const auto padded = static_cast<long long>(in + 2 * padding);
  const auto span = padded - static_cast<long long>(k);
  if (span < 0 || span % static_cast<long long>(stride) != 0) {
    throw GeometryError(std::string("conv2d: ") + axis + " extent " + std::to_string(in) +
                        " with kernel " + std::to_string(k) + ", stride " +
                        std::to_string(stride) + ", padding " + std::to_string(padding) +
                        " does not give an integral output size");
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

namespace detail {

// Reductions with eight independent accumulators so the loops vectorize.
template <typename T>
T lane_sum(const T* p, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += p[i + l];
  T s = T(0);
  for (; i < n; ++i) s += p[i];
  for (T a : acc) s += a;
  return s;
}

// Sum of (p - mu)^2.
template <typename T>
T lane_sq_dev(const T* p, std::size_t n, T mu) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += (p[i + l] - mu) * (p[i + l] - mu);
  T s = T(0);
  for (; i < n; ++i) s += (p[i] - mu) * (p[i] - mu);
  for (T a : acc) s += a;
  return s;
}

// Sum of g * (x - mu).
template <typename T>
T lane_dot_dev(const T* g, const T* x, std::size_t n, T mu) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += g[i + l] * (x[i + l] - mu);
  T s = T(0);
  for (; i < n; ++i) s += g[i] * (x[i] - mu);
  for (T a : acc) s += a;
  return s;
}

// Output positions o in [lo, hi) whose input index o * stride + k - padding
// falls inside [0, extent).
inline constexpr std::size_t kPerSampleConvPlane = 64;

struct ValidRange {
  std::size_t lo, hi;
};

inline ValidRange valid_range(std::size_t out, std::size_t extent, std::size_t k,
                              std::size_t stride, std::size_t padding) {
  const long long off = static_cast<long long>(k) - static_cast<long long>(padding);
  const long long s = static_cast<long long>(stride);
  long long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long long hi = (static_cast<long long>(extent) - 1 - off);
  hi = hi < 0 ? 0 : hi / s + 1;
  hi = std::min<long long>(hi, static_cast<long long>(out));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Element (k, n, p) of cols lives at k * ld_k + n * ld_n + p, with
// k = (c, i, j) and p = (oy, ox). Batched layout: ld_k = N*P, ld_n = P.
// Per-sample layout: ld_k = P, ld_n = K*P.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols, std::size_t ld_k, std::size_t ld_n) {
  const std::size_t P = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      const ValidRange ry = valid_range(g.out_h, g.h, i, g.stride, g.padding);
      for (std::size_t j = 0; j < g.kw; ++j) {
        const ValidRange rx = valid_range(g.out_w, g.w, j, g.stride, g.padding);
        T* row = cols + ((c * g.kh + i) * g.kw + j) * ld_k;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* plane = x + (n * g.c + c) * g.h * g.w;
          T* dst = row + n * ld_n;
          std::fill(dst, dst + ry.lo * g.out_w, T(0));
          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            T* d = dst + oy * g.out_w;
            const T* srow = plane + (oy * g.stride + i - g.padding) * g.w + j - g.padding;
            std::fill(d, d + rx.lo, T(0));
            if (g.stride == 1) {
              std::copy(srow + rx.lo, srow + rx.hi, d + rx.lo);
            } else {
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) d[ox] = srow[ox * g.stride];
            }
            std::fill(d + rx.hi, d + g.out_w, T(0));
          }
          std::fill(dst + ry.hi * g.out_w, dst + P, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx, std::size_t ld_k, std::size_t ld_n) {
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      const ValidRange ry = valid_range(g.out_h, g.h, i, g.stride, g.padding);
      for (std::size_t j = 0; j < g.kw; ++j) {
        const ValidRange rx = valid_range(g.out_w, g.w, j, g.stride, g.padding);
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * ld_k;
        for (std::size_t n = 0; n < g.n; ++n) {
          T* plane = dx + (n * g.c + c) * g.h * g.w;
          const T* src = row + n * ld_n;
          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            T* drow = plane + (oy * g.stride + i - g.padding) * g.w + j - g.padding;
            const T* sv = src + oy * g.out_w;
            for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) drow[ox * g.stride] += sv[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation, no bias. x [N x C x H x W], w [F x C x kh x kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride,
                 std::size_t padding) {
  detail::require_rank(x, 4, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  if (x.dim(1) != w.dim(1)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " has " +
                         std::to_string(x.dim(1)) + " channels but kernel " +
                         shape_str(w.shape()) + " expects " + std::to_string(w.dim(1)));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                 stride,   padding,  0,        0};
  g.out_h = conv_out_extent(g.h, g.kh, stride, padding, "height");
  g.out_w = conv_out_extent(g.w, g.kw, stride, padding, "width");
  const std::size_t K = g.c * g.kh * g.kw;
  const std::size_t P = g.out_h * g.out_w;
  const std::size_t NP = g.n * P;
  std::vector<T> out(g.n * g.f * P);
  const T* wd = w.data().data();

  // Large output planes: im2col and GEMM one sample at a time, so the column
  // buffer stays cache-resident and the output lands in NCHW directly. The
  // backward pass rebuilds the columns. Small planes: one batched GEMM.
  if (P >= detail::kPerSampleConvPlane) {
    ConvGeometry g1 = g;
    g1.n = 1;
    const std::size_t in_plane = g.c * g.h * g.w;
    std::vector<T> cols(K * P);
    for (std::size_t n = 0; n < g.n; ++n) {
      detail::im2col(x.data().data() + n * in_plane, g1, cols.data(), P, K * P);
      gemm<T>(false, false, g.f, P, K, T(1), wd, cols.data(), T(0), out.data() + n * g.f * P);
    }
    return Tensor<T>::from_op(
        "conv2d", {g.n, g.f, g.out_h, g.out_w}, std::move(out), {x, w},
        [g1, K, P, in_plane, n_batch = g.n](detail::Node<T>& self) {
          auto& X = *self.inputs[0];
          auto& W = *self.inputs[1];
          const T* go = self.grad.data();
          std::vector<T> cols(K * P);
          T* dw = W.requires_grad ? W.grad_buffer().data() : nullptr;
          T* dx = X.requires_grad ? X.grad_buffer().data() : nullptr;
          for (std::size_t n = 0; n < n_batch; ++n) {
            const T* gn = go + n * g1.f * P;
            if (dw) {
              detail::im2col(X.value.data() + n * in_plane, g1, cols.data(), P, K * P);
              gemm<T>(false, true, g1.f, K, P, T(1), gn, cols.data(), T(1), dw);
            }
            if (dx) {
              gemm<T>(true, false, K, P, g1.f, T(1), W.value.data(), gn, T(0), cols.data());
              detail::col2im_add(cols.data(), g1, dx + n * in_plane, P, K * P);
            }
          }
        });
  }

  std::vector<T> cols(K * NP);
  detail::im2col(x.data().data(), g, cols.data(), NP, P);
  {
    std::vector<T> mat(g.f * NP);
    gemm<T>(false, false, g.f, NP, K, T(1), wd, cols.data(), T(0), mat.data());
    for (std::size_t f = 0; f < g.f; ++f)
      for (std::size_t n = 0; n < g.n; ++n)
        std::copy_n(mat.data() + f * NP + n * P, P, out.data() + (n * g.f + f) * P);
  }

  const bool keep_cols = grad_enabled() && w.requires_grad();
  return Tensor<T>::from_op(
      "conv2d", {g.n, g.f, g.out_h, g.out_w}, std::move(out), {x, w},
      [g, K, P, NP, cols = keep_cols ? std::move(cols) : std::vector<T>{}](
          detail::Node<T>& self) {
        auto& X = *self.inputs[0];
        auto& W = *self.inputs[1];
        const T* go = self.grad.data();
        std::vector<T> gmat(g.f * NP);
        for (std::size_t f = 0; f < g.f; ++f)
          for (std::size_t n = 0; n < g.n; ++n)
            std::copy_n(go + (n * g.f + f) * P, P, gmat.data() + f * NP + n * P);
        if (W.requires_grad) {
          gemm<T>(false, true, g.f, K, NP, T(1), gmat.data(), cols.data(), T(1),
                  W.grad_buffer().data());
        }
        if (X.requires_grad) {
          std::vector<T> dcols(K * NP);
          gemm<T>(true, false, K, NP, g.f, T(1), W.value.data(), gmat.data(), T(0),
                  dcols.data());
          detail::col2im_add(dcols.data(), g, X.grad_buffer().data(), NP, P);
        }
      });
}

/// 2x2 max pooling with stride 2; ties resolve to the first element.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  detail::require_rank(x, 4, "maxpool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0) {
    throw GeometryError("maxpool2d: spatial extent " + shape_str(x.shape()) +
                        " is not divisible by 2");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<T> out(n * c * oh * ow);
  std::vector<std::uint32_t> arg(out.size());
  const auto src = x.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * oy + dy) * w + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = src[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return Tensor<T>::from_op("maxpool2d", {n, c, oh, ow}, std::move(out), {x},
                            [arg = std::move(arg)](detail::Node<T>& self) {
                              auto& g = self.inputs[0]->grad_buffer();
                              for (std::size_t o = 0; o < arg.size(); ++o)
                                g[arg[o]] += self.grad[o];
                            });
}

/// Batch normalization over (N, H, W) per channel.
///
/// Training mode normalizes with the biased batch variance and folds the
/// unbiased estimate into the running statistics with the given momentum.
/// Evaluation mode uses the running statistics. Running stats are updated
/// in place and never carry gradients.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                      T momentum = T(0.1), T eps = T(1e-5)) {
  detail::require_rank(x, 4, "batchnorm2d");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::initializer_list<const Tensor<T>*> params{&gamma, &beta, &running_mean, &running_var};
  for (const Tensor<T>* p : params) {
    if (p->rank() != 1 || p->dim(0) != c) {
      throw DimensionError("batchnorm2d: parameter shape " + shape_str(p->shape()) +
                           " does not match " + std::to_string(c) + " channels");
    }
  }
  if (training && n < 2) {
    throw DimensionError("batchnorm2d: training mode needs a batch of at least 2, got " +
                         std::to_string(n));
  }
  const std::size_t count = n * hw;
  std::vector<T> mean(c), invstd(c);
  const T* src = x.data().data();
  if (training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += detail::lane_sum(src + (i * c + ch) * hw, hw);
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        ss += detail::lane_sq_dev(src + (i * c + ch) * hw, hw, static_cast<T>(mu));
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = ss / static_cast<double>(count - 1);
      rm[ch] = static_cast<T>((1.0 - momentum) * rm[ch] + momentum * mu);
      rv[ch] = static_cast<T>((1.0 - momentum) * rv[ch] + momentum * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      invstd[ch] = T(1) / std::sqrt(running_var[ch] + eps);
    }
  }
  std::vector<T> out(x.numel());
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * hw;
      const T scale = gm[ch] * invstd[ch];
      const T shift = bt[ch] - mean[ch] * scale;
      const T* xs = src + off;
      T* o = out.data() + off;
      for (std::size_t j = 0; j < hw; ++j) o[j] = xs[j] * scale + shift;
    }
  return Tensor<T>::from_op(
      "batchnorm2d", x.shape(), std::move(out), {x, gamma, beta},
      [n, c, hw, count, training, mean = std::move(mean),
       invstd = std::move(invstd)](detail::Node<T>& self) {
        auto& X = *self.inputs[0];
        auto& G = *self.inputs[1];
        auto& B = *self.inputs[2];
        const T* g = self.grad.data();
        const T* xv = X.value.data();
        // sum_gx accumulates g * xhat with xhat = (x - mean) * invstd.
        std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (i * c + ch) * hw;
            sum_g[ch] += detail::lane_sum(g + off, hw);
            sum_gx[ch] += detail::lane_dot_dev(g + off, xv + off, hw, mean[ch]) * invstd[ch];
          }
        if (G.requires_grad) {
          auto& gg = G.grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
        }
        if (B.requires_grad) {
          auto& gb = B.grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
        }
        if (X.requires_grad) {
          T* gx = X.grad_buffer().data();
          const T inv_count = T(1) / static_cast<T>(count);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t off = (i * c + ch) * hw;
              const T k = G.value[ch] * invstd[ch];
              T* d = gx + off;
              const T* gg = g + off;
              if (training) {
                // gx += k * (g - mean(g) - xhat * mean(g * xhat))
                const T a = inv_count * sum_g[ch];
                const T b = inv_count * sum_gx[ch] * invstd[ch];
                const T* xs = xv + off;
                const T mu = mean[ch];
                for (std::size_t j = 0; j < hw; ++j) d[j] += k * (gg[j] - a - (xs[j] - mu) * b);
              } else {
                for (std::size_t j = 0; j < hw; ++j) d[j] += k * gg[j];
              }
            }
        }
      });
}

}  // namespace linearconv
