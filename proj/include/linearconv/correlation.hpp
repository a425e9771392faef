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

// Correlation-based regularization over primary filters, and the matching
// diagnostics (normalized Gram matrix, numerical rank, CSV/PGM export).

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "linearconv/ops.hpp"
#include "linearconv/tensor.hpp"

namespace linearconv {

/// Views a [k x ...] filter bank as a [k x rest] matrix.
template <typename T>
Tensor<T> flatten_filters(const Tensor<T>& w) {
  if (w.rank() < 1 || w.dim(0) == 0) {
    throw DimensionError("flatten_filters: need at least one filter, got " + shape_str(w.shape()));
  }
  return reshape(w, {w.dim(0), w.numel() / w.dim(0)});
}

/// Sum over layers of || N(V) N(V)^T - I ||_1, where N normalizes rows.
/// Differentiable in every input. An empty list yields a constant zero.
template <typename T>
Tensor<T> corr_loss(const std::vector<Tensor<T>>& primary_weights) {
  if (primary_weights.empty()) return Tensor<T>::scalar(T(0));
  std::vector<Tensor<T>> terms;
  terms.reserve(primary_weights.size());
  for (const auto& w : primary_weights) {
    const Tensor<T> v = row_l2_normalize(flatten_filters(w));
    const Tensor<T> gram = matmul(v, transpose(v));
    terms.push_back(l1_norm(sub(gram, Tensor<T>::identity(v.dim(0)))));
  }
  Tensor<T> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

struct CorrelationReport {
  std::string layer;
  std::size_t size = 0;           // k, number of filters
  std::vector<double> gram;       // k x k row-major
  double loss_contribution = 0;   // || gram - I ||_1
  std::size_t numerical_rank = 0; // singular values > 1e-6 * sigma_max

  double at(std::size_t i, std::size_t j) const { return gram[i * size + j]; }

  double max_off_diagonal() const {
    double m = 0;
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j)
        if (i != j) m = std::max(m, std::abs(at(i, j)));
    return m;
  }
};

/// Number of singular values of `m` above rel_tol * sigma_max.
inline std::size_t numerical_rank(const Eigen::MatrixXd& m, double rel_tol = 1e-6) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) <= 0.0) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++r;
  return r;
}

/// Gram matrix of the row-normalized filters of any [k x ...] weight tensor
/// (Conv weights, primaries, secondaries, or a composed bank).
template <typename T>
CorrelationReport correlation_report(const Tensor<T>& weights, std::string layer = {}) {
  NoGradGuard no_grad;
  const Tensor<T> v = flatten_filters(weights);
  const std::size_t k = v.dim(0), n = v.dim(1);
  Eigen::MatrixXd rows(k, n);
  for (std::size_t i = 0; i < k; ++i) {
    double ss = 0;
    for (std::size_t j = 0; j < n; ++j) ss += double(v[i * n + j]) * double(v[i * n + j]);
    const double norm = std::sqrt(ss);
    if (!(norm >= 1e-12)) {
      throw DegenerateFilterError("correlation_report: filter " + std::to_string(i) +
                                  " has l2 norm below 1e-12");
    }
    for (std::size_t j = 0; j < n; ++j) rows(i, j) = double(v[i * n + j]) / norm;
  }
  const Eigen::MatrixXd g = rows * rows.transpose();
  CorrelationReport r;
  r.layer = std::move(layer);
  r.size = k;
  r.gram.resize(k * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      r.gram[i * k + j] = g(i, j);
      r.loss_contribution += std::abs(g(i, j) - (i == j ? 1.0 : 0.0));
    }
  r.numerical_rank = numerical_rank(rows);
  return r;
}

/// One CSV row per Gram row, comma separated, no header.
inline void write_csv(const CorrelationReport& r, std::ostream& os) {
  os << std::setprecision(9);
  for (std::size_t i = 0; i < r.size; ++i) {
    for (std::size_t j = 0; j < r.size; ++j) {
      if (j) os << ',';
      os << r.at(i, j);
    }
    os << '\n';
  }
}

/// Binary (P5) 8-bit grayscale image, -1 -> 0 and +1 -> 255.
inline void write_pgm(const CorrelationReport& r, std::ostream& os) {
  os << "P5\n" << r.size << ' ' << r.size << "\n255\n";
  for (double v : r.gram) {
    const double clamped = std::clamp(v, -1.0, 1.0);
    os.put(static_cast<char>(static_cast<std::uint8_t>(std::lround((clamped + 1.0) * 127.5))));
  }
}

}  // namespace linearconv
