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

#pragma once

#include <cblas.h>

#include <Eigen/Core>
#include <cstddef>
#include <type_traits>

namespace linearconv {

namespace detail {

using RowMajorD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// OpenBLAS 0.3.20 dispatches dgemm to a Cooperlake kernel that returns wrong
// products for many shapes (e.g. 8 x 576 x 9). Double precision only backs
// gradient checks, so it goes through Eigen instead.
inline void eigen_dgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                        double alpha, const double* a, const double* b, double beta, double* c) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n),
             K = static_cast<Eigen::Index>(k);
  Eigen::Map<RowMajorD> C(c, M, N);
  if (beta == 0.0) C.setZero();
  else if (beta != 1.0) C *= beta;
  if (k == 0) return;
  const Eigen::Map<const RowMajorD> A(a, trans_a ? K : M, trans_a ? M : K);
  const Eigen::Map<const RowMajorD> B(b, trans_b ? N : K, trans_b ? K : N);
  if (trans_a && trans_b) C.noalias() += alpha * A.transpose() * B.transpose();
  else if (trans_a) C.noalias() += alpha * A.transpose() * B;
  else if (trans_b) C.noalias() += alpha * A * B.transpose();
  else C.noalias() += alpha * A * B;
}

}  // namespace detail

// Row-major C = alpha * op(A) * op(B) + beta * C.
// op(A) is m x k, op(B) is k x n, C is m x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, T alpha, const T* a, const T* b, T beta, T* c) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  if (m == 0 || n == 0) return;
  if constexpr (std::is_same_v<T, double>) {
    detail::eigen_dgemm(trans_a, trans_b, m, n, k, alpha, a, b, beta, c);
  } else {
    if (k == 0) {
      for (std::size_t i = 0; i < m * n; ++i) c[i] = beta == T(0) ? T(0) : beta * c[i];
      return;
    }
    const auto ta = trans_a ? CblasTrans : CblasNoTrans;
    const auto tb = trans_b ? CblasTrans : CblasNoTrans;
    cblas_sgemm(CblasRowMajor, ta, tb, static_cast<blasint>(m), static_cast<blasint>(n),
                static_cast<blasint>(k), alpha, a, static_cast<blasint>(trans_a ? m : k), b,
                static_cast<blasint>(trans_b ? k : n), beta, c, static_cast<blasint>(n));
  }
}

/// Pins the BLAS backend to one thread so reductions happen in a fixed order.
inline void set_deterministic_blas() { openblas_set_num_threads(1); }

}  // namespace linearconv
