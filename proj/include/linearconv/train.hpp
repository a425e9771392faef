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

// Training of the composite objective cross_entropy + lambda * L_c with Adam,
// step learning-rate decay, evaluation, and the metrics CSV.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "linearconv/correlation.hpp"
#include "linearconv/data.hpp"
#include "linearconv/model.hpp"
#include "linearconv/ops.hpp"
#include "linearconv/optim.hpp"

namespace linearconv {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double lr_decay = 0.1;
  std::size_t decay_period = 5;
  double lambda = 1e-2;
  std::uint64_t seed = 0;
  bool deterministic = false;
  bool f64 = false;
  DatasetKind dataset = DatasetKind::Mnist;
  NormStats norm;  // training-split statistics, kept for evaluation

  void validate() const {
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("batch size must be >= 2");
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
    if (!(lr_decay > 0)) throw ConfigError("lr decay factor must be positive");
    if (decay_period < 1) throw ConfigError("decay period must be >= 1");
    if (!(lambda >= 0)) throw ConfigError("lambda must be non-negative");
  }

  double lr_at(std::size_t epoch) const { return step_lr(lr, lr_decay, decay_period, epoch); }
};

namespace detail {

inline std::string join_doubles(const std::vector<double>& v) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  std::istringstream is(s);
  for (std::string tok; std::getline(is, tok, ',');)
    if (!tok.empty()) out.push_back(std::stod(tok));
  return out;
}

}  // namespace detail

/// key=value lines, one per field.
inline std::string to_text(const TrainConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epochs=" << c.epochs << '\n'
     << "batch_size=" << c.batch_size << '\n'
     << "lr=" << c.lr << '\n'
     << "lr_decay=" << c.lr_decay << '\n'
     << "decay_period=" << c.decay_period << '\n'
     << "lambda=" << c.lambda << '\n'
     << "seed=" << c.seed << '\n'
     << "deterministic=" << (c.deterministic ? 1 : 0) << '\n'
     << "f64=" << (c.f64 ? 1 : 0) << '\n'
     << "dataset=" << dataset_kind_name(c.dataset) << '\n'
     << "norm_mean=" << detail::join_doubles(c.norm.mean) << '\n'
     << "norm_std=" << detail::join_doubles(c.norm.stddev) << '\n';
  return os.str();
}

inline TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("train config: malformed line '" + line + "'");
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    try {
      if (k == "epochs") c.epochs = std::stoull(v);
      else if (k == "batch_size") c.batch_size = std::stoull(v);
      else if (k == "lr") c.lr = std::stod(v);
      else if (k == "lr_decay") c.lr_decay = std::stod(v);
      else if (k == "decay_period") c.decay_period = std::stoull(v);
      else if (k == "lambda") c.lambda = std::stod(v);
      else if (k == "seed") c.seed = std::stoull(v);
      else if (k == "deterministic") c.deterministic = v == "1";
      else if (k == "f64") c.f64 = v == "1";
      else if (k == "dataset") c.dataset = parse_dataset_kind(v);
      else if (k == "norm_mean") c.norm.mean = detail::split_doubles(v);
      else if (k == "norm_std") c.norm.stddev = detail::split_doubles(v);
      else throw ConfigError("train config: unknown key '" + k + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("train config: bad value for '" + k + "': '" + v + "'");
    }
  }
  return c;
}

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;  // mean task (cross-entropy) loss
  double train_acc = 0;
  double test_acc = std::numeric_limits<double>::quiet_NaN();
  double corr_loss = 0;   // mean L_c over steps
  double lr = 0;
  double seconds = 0;
};

struct StepResult {
  double task_loss = 0;
  double corr_loss = 0;
  std::size_t correct = 0;
};

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    correct += static_cast<int>(best) == labels[i];
  }
  return correct;
}

/// Builds the composite loss for one batch. L_c is always measured; it
/// enters the objective only for regularized models with lambda > 0.
template <typename T>
Tensor<T> composite_loss(Model<T>& model, const Tensor<T>& logits, std::span<const int> labels,
                         double lambda, StepResult* info = nullptr) {
  Tensor<T> loss = softmax_cross_entropy(logits, labels);
  if (info) info->task_loss = static_cast<double>(loss.item());
  const auto primaries = model.primary_weights();
  if (primaries.empty()) {
    if (info) info->corr_loss = 0;
    return loss;
  }
  const Tensor<T> lc = corr_loss(primaries);
  if (info) info->corr_loss = static_cast<double>(lc.item());
  if (model.spec().regularized && lambda > 0) loss = add(loss, scale(lc, static_cast<T>(lambda)));
  return loss;
}

/// Forward, composite loss, backward, Adam update on one batch.
template <typename T>
StepResult train_step(Model<T>& model, Adam<T>& adam, const Tensor<T>& images,
                      std::span<const int> labels, double lambda, double lr) {
  StepResult r;
  adam.zero_grad();
  const Tensor<T> logits = model.forward(images, true);
  r.correct = count_correct(logits, labels);
  const Tensor<T> loss = composite_loss(model, logits, labels, lambda, &r);
  backward(loss);
  adam.step(lr);
  return r;
}

/// One pass over the shuffled training split. `epoch` is 0-based; the
/// returned metrics number epochs from 1. test_acc is left NaN.
template <typename T>
EpochMetrics train_epoch(Model<T>& model, const LabeledDataset& data, const TrainConfig& config,
                         Adam<T>& adam, std::mt19937_64& rng, std::size_t epoch) {
  const auto start = std::chrono::steady_clock::now();
  EpochMetrics m;
  m.epoch = epoch + 1;
  m.lr = config.lr_at(epoch);
  const auto batches = epoch_batches(data.size(), config.batch_size, rng);
  double loss_sum = 0, corr_sum = 0;
  std::size_t correct = 0, seen = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& idx = batches[b];
    const Tensor<T> x = augment(data.images<T>(idx), data.kind, Split::Train, rng);
    const std::vector<int> y = data.labels_at(idx);
    StepResult r;
    try {
      r = train_step(model, adam, x, y, config.lambda, m.lr);
    } catch (const NumericalError& e) {
      throw NumericalError("epoch " + std::to_string(m.epoch) + " step " + std::to_string(b + 1) +
                           ": " + e.what());
    }
    loss_sum += r.task_loss * static_cast<double>(idx.size());
    corr_sum += r.corr_loss;
    correct += r.correct;
    seen += idx.size();
  }
  m.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
  m.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
  m.corr_loss = batches.empty() ? 0.0 : corr_sum / static_cast<double>(batches.size());
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

struct EvalResult {
  double accuracy = 0;
  double mean_loss = 0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

/// Top-1 accuracy and mean cross-entropy over the full split, in evaluation
/// mode (running batchnorm statistics, no augmentation, no tape).
template <typename T>
EvalResult evaluate(Model<T>& model, const LabeledDataset& data, std::size_t batch_size = 500,
                    std::vector<int>* predictions = nullptr) {
  NoGradGuard no_grad;
  EvalResult r;
  double loss_sum = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<T> logits = model.forward(data.images<T>(idx), false);
    const std::vector<int> y = data.labels_at(idx);
    loss_sum += static_cast<double>(softmax_cross_entropy(logits, y).item()) *
                static_cast<double>(idx.size());
    r.correct += count_correct(logits, y);
    r.count += idx.size();
    if (predictions) {
      const std::size_t k = logits.dim(1);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
          if (logits[i * k + j] > logits[i * k + best]) best = j;
        predictions->push_back(static_cast<int>(best));
      }
    }
  }
  if (r.count) {
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.count);
    r.mean_loss = loss_sum / static_cast<double>(r.count);
  }
  return r;
}

inline constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,test_acc,L_c,lr,seconds";

/// One CSV row. With `timing` false the seconds column is written as 0 so
/// that deterministic runs produce byte-identical files.
inline std::string metrics_row(const EpochMetrics& m, bool timing = true) {
  std::ostringstream os;
  os << std::setprecision(9) << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ','
     << m.test_acc << ',' << m.corr_loss << ',' << m.lr << ',';
  if (timing) os << std::setprecision(4) << m.seconds;
  else os << 0;
  return os.str();
}

}  // namespace linearconv
