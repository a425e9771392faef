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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "linearconv/errors.hpp"
#include "linearconv/tensor.hpp"

namespace linearconv {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction and no weight decay.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>> params, AdamConfig config = {})
      : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  /// One update with the gradients currently held by the parameters.
  /// Parameters that received no gradient are skipped.
  void step(double lr) {
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
    const T step_size = static_cast<T>(lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(config_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;  // no gradient reached this parameter
      const auto g = p.mutable_grad();
      detail::check_finite<T>("adam gradient", g);
      auto& m = m_[k];
      auto& v = v_[k];
      auto w = p.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
      detail::check_finite<T>("adam update", w);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamConfig config_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t steps_ = 0;
};

/// lr0 * decay^floor(epoch / period), epoch counted from 0.
inline double step_lr(double lr0, double decay, std::size_t period, std::size_t epoch) {
  if (period == 0) throw ConfigError("lr decay period must be >= 1");
  return lr0 * std::pow(decay, static_cast<double>(epoch / period));
}

}  // namespace linearconv
