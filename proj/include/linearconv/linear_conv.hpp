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

// LinearConv: a convolution whose filter bank is [W^p ; A^T W^p].
//
// Only the primary filters W^p (alpha*f of them) and the coefficient matrix A
// are learned. The remaining (1-alpha)*f secondary filters are rebuilt from
// them on every training forward pass, and materialized once by fold() for
// inference. A may be factored as A1 * A2 with inner rank r.
//
// Filters are flattened row-major over (channel, kernel row, kernel col), so
// filter i of a [f x c x kh x kw] tensor is row i of the [f x c*kh*kw] matrix.
// compose, fold, the correlation loss, and the diagnostics all rely on this.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "linearconv/errors.hpp"
#include "linearconv/ops.hpp"
#include "linearconv/tensor.hpp"

namespace linearconv {

struct FilterSplit {
  std::size_t primary;
  std::size_t secondary;
};

/// Splits f filters into alpha*f primaries and (1-alpha)*f secondaries.
/// Throws ConfigError unless both counts are positive integers.
inline FilterSplit split_filters(std::size_t filters, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
  const double exact = alpha * static_cast<double>(filters);
  const double rounded = std::round(exact);
  if (std::abs(exact - rounded) > 1e-9 * std::max(1.0, exact) || rounded < 1.0 ||
      rounded >= static_cast<double>(filters)) {
    throw ConfigError("alpha=" + std::to_string(alpha) + " splits " + std::to_string(filters) +
                      " filters into " + std::to_string(exact) +
                      " primaries; both alpha*f and (1-alpha)*f must be positive integers");
  }
  const auto p = static_cast<std::size_t>(rounded);
  return {p, filters - p};
}

enum class CoeffMode { Full, LowRank };

struct LinearConvGeometry {
  std::size_t filters = 0;
  std::size_t channels = 0;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  double alpha = 0.5;
  std::size_t stride = 1;
  std::size_t padding = 1;

  std::size_t fan_in() const { return channels * kernel_h * kernel_w; }
};

/// Checks r < min{alpha f, (1 - alpha) f}.
inline void check_rank(const FilterSplit& split, std::size_t rank) {
  const std::size_t limit = std::min(split.primary, split.secondary);
  if (rank < 1 || rank >= limit) {
    throw ConfigError("rank r=" + std::to_string(rank) + " must satisfy 1 <= r < min(" +
                      std::to_string(split.primary) + ", " + std::to_string(split.secondary) +
                      ")");
  }
}

template <typename T>
struct FullCoefficients {
  Tensor<T> a;  // [primary x secondary]
};

template <typename T>
struct LowRankCoefficients {
  Tensor<T> a1;  // [primary x r]
  Tensor<T> a2;  // [r x secondary]
};

template <typename T>
struct LinearConvParams {
  LinearConvGeometry geometry;
  FilterSplit split{0, 0};
  Tensor<T> primary;  // [primary x channels x kh x kw]
  std::variant<FullCoefficients<T>, LowRankCoefficients<T>> coefficients;

  CoeffMode mode() const {
    return std::holds_alternative<FullCoefficients<T>>(coefficients) ? CoeffMode::Full
                                                                     : CoeffMode::LowRank;
  }

  std::size_t rank() const {
    if (const auto* lr = std::get_if<LowRankCoefficients<T>>(&coefficients)) return lr->a1.dim(1);
    return 0;
  }

  /// Learnable tensors: primaries first, then coefficients.
  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out{primary};
    std::visit(
        [&](const auto& c) {
          if constexpr (std::is_same_v<std::decay_t<decltype(c)>, FullCoefficients<T>>) {
            out.push_back(c.a);
          } else {
            out.push_back(c.a1);
            out.push_back(c.a2);
          }
        },
        coefficients);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
  }
};

/// Throws if any tensor disagrees with the declared geometry.
template <typename T>
void validate(const LinearConvParams<T>& p) {
  const auto& g = p.geometry;
  const FilterSplit split = split_filters(g.filters, g.alpha);
  if (split.primary != p.split.primary || split.secondary != p.split.secondary) {
    throw DimensionError("linear conv: stored filter split disagrees with alpha");
  }
  const Shape want{split.primary, g.channels, g.kernel_h, g.kernel_w};
  if (p.primary.shape() != want) {
    throw DimensionError("linear conv: primary weights " + shape_str(p.primary.shape()) +
                         ", expected " + shape_str(want));
  }
  if (const auto* full = std::get_if<FullCoefficients<T>>(&p.coefficients)) {
    if (full->a.shape() != Shape{split.primary, split.secondary}) {
      throw DimensionError("linear conv: coefficients " + shape_str(full->a.shape()) +
                           ", expected " + shape_str({split.primary, split.secondary}));
    }
  } else {
    const auto& lr = std::get<LowRankCoefficients<T>>(p.coefficients);
    if (lr.a1.rank() != 2 || lr.a2.rank() != 2 || lr.a1.dim(0) != split.primary ||
        lr.a2.dim(1) != split.secondary || lr.a1.dim(1) != lr.a2.dim(0)) {
      throw DimensionError("linear conv: low-rank factors " + shape_str(lr.a1.shape()) + " and " +
                           shape_str(lr.a2.shape()) + " do not fit " +
                           std::to_string(split.primary) + " -> " +
                           std::to_string(split.secondary) + " filters");
    }
    check_rank(split, lr.a1.dim(1));
  }
}

/// Builds the full [f x c x kh x kw] filter bank, primaries first.
/// Differentiable in both the primaries and the coefficients.
template <typename T>
Tensor<T> compose_weights(const LinearConvParams<T>& p) {
  validate(p);
  const auto& g = p.geometry;
  const std::size_t k = g.fan_in();
  const Tensor<T> v = reshape(p.primary, {p.split.primary, k});
  Tensor<T> u = std::visit(
      [&](const auto& c) -> Tensor<T> {
        if constexpr (std::is_same_v<std::decay_t<decltype(c)>, FullCoefficients<T>>) {
          return matmul(transpose(c.a), v);
        } else {
          // Right to left so the r x k intermediate stays small.
          return matmul(transpose(c.a2), matmul(transpose(c.a1), v));
        }
      },
      p.coefficients);
  const Tensor<T> secondary =
      reshape(u, {p.split.secondary, g.channels, g.kernel_h, g.kernel_w});
  return concat0<T>({p.primary, secondary});
}

/// Training-time forward: composes the filters on the tape, then runs a
/// single convolution over x.
template <typename T>
Tensor<T> forward_train(const LinearConvParams<T>& p, const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) != p.geometry.channels) {
    throw DimensionError("linear conv: input " + shape_str(x.shape()) + " does not have " +
                         std::to_string(p.geometry.channels) + " channels");
  }
  return conv2d(x, compose_weights(p), p.geometry.stride, p.geometry.padding);
}

/// Frozen filter bank produced once from trained LinearConv parameters.
template <typename T>
struct FoldedConv {
  Tensor<T> weights;  // [f x c x kh x kw], no gradient
  std::size_t stride = 1;
  std::size_t padding = 0;

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weights, stride, padding); }
};

template <typename T>
FoldedConv<T> fold(const LinearConvParams<T>& p) {
  NoGradGuard no_grad;
  return {compose_weights(p).detach(), p.geometry.stride, p.geometry.padding};
}

/// Random initialization: Kaiming-uniform primaries (fan-in c*kh*kw), and
/// coefficients uniform in +-1/sqrt(alpha f).
template <typename T, typename Rng>
LinearConvParams<T> init_linear_conv(const LinearConvGeometry& geometry, CoeffMode mode,
                                     std::size_t rank, Rng& rng) {
  const FilterSplit split = split_filters(geometry.filters, geometry.alpha);
  if (mode == CoeffMode::LowRank) check_rank(split, rank);
  if (geometry.channels == 0 || geometry.kernel_h == 0 || geometry.kernel_w == 0) {
    throw ConfigError("linear conv: channels and kernel extents must be positive");
  }
  const T wb = static_cast<T>(std::sqrt(6.0 / static_cast<double>(geometry.fan_in())));
  const T ab = static_cast<T>(1.0 / std::sqrt(static_cast<double>(split.primary)));
  LinearConvParams<T> p;
  p.geometry = geometry;
  p.split = split;
  p.primary = Tensor<T>::uniform(
      {split.primary, geometry.channels, geometry.kernel_h, geometry.kernel_w}, -wb, wb, rng, true);
  if (mode == CoeffMode::Full) {
    p.coefficients = FullCoefficients<T>{
        Tensor<T>::uniform({split.primary, split.secondary}, -ab, ab, rng, true)};
  } else {
    auto a1 = Tensor<T>::uniform({split.primary, rank}, -ab, ab, rng, true);
    auto a2 = Tensor<T>::uniform({rank, split.secondary}, -ab, ab, rng, true);
    p.coefficients = LowRankCoefficients<T>{std::move(a1), std::move(a2)};
  }
  return p;
}

template <typename T>
LinearConvParams<T> init_linear_conv(const LinearConvGeometry& geometry, CoeffMode mode,
                                     std::size_t rank, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return init_linear_conv<T>(geometry, mode, rank, rng);
}

}  // namespace linearconv
