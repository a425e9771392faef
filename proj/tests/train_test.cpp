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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

#include "linearconv/train.hpp"

namespace linearconv {
namespace {

using TD = Tensor<double>;
using TF = Tensor<float>;

bool have_mnist() {
  return std::filesystem::exists(std::string(LINEARCONV_TEST_DATA_DIR) +
                                 "/train-images-idx3-ubyte");
}

const DatasetPair& mnist() {
  static const DatasetPair d = load_dataset_dir(DatasetKind::Mnist, LINEARCONV_TEST_DATA_DIR);
  return d;
}

LabeledDataset head(const LabeledDataset& d, std::size_t begin, std::size_t end) {
  LabeledDataset s = d;
  s.labels.assign(d.labels.begin() + begin, d.labels.begin() + end);
  s.pixels.assign(d.pixels.begin() + begin * d.image_numel(),
                  d.pixels.begin() + end * d.image_numel());
  return s;
}

#define REQUIRE_MNIST() \
  if (!have_mnist()) GTEST_SKIP() << "MNIST not found in " << LINEARCONV_TEST_DATA_DIR

ArchSpec tiny_arch() {
  return parse_arch_text(
      "name tiny\n"
      "input channels=1 height=8 width=8\n"
      "conv filters=8 kernel=3x3 padding=1\n"
      "maxpool\n"
      "conv filters=8 kernel=3x3 padding=1\n"
      "maxpool\n"
      "flatten\n"
      "fc out=3\n");
}

TEST(Schedule, StepDecayIsExact) {
  TrainConfig c;
  for (std::size_t e = 0; e < 12; ++e) {
    EXPECT_EQ(c.lr_at(e), 1e-3 * std::pow(0.1, double(e / 5))) << e;
  }
  EXPECT_EQ(c.lr_at(4), 1e-3);
  EXPECT_EQ(c.lr_at(5), 1e-3 * 0.1);
  EXPECT_THROW(step_lr(1e-3, 0.1, 0, 1), ConfigError);
  c.decay_period = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, TextRoundTripAndErrors) {
  TrainConfig c;
  c.epochs = 3;
  c.lr = 1e-4;
  c.lambda = 0.25;
  c.seed = 42;
  c.deterministic = true;
  c.dataset = DatasetKind::Cifar10;
  c.norm = {{0.1, 0.2, 0.3}, {0.4, 0.5, 0.6}};
  const TrainConfig r = parse_train_config(to_text(c));
  EXPECT_EQ(to_text(r), to_text(c));
  EXPECT_EQ(r.norm.stddev, c.norm.stddev);
  EXPECT_THROW(parse_train_config("colour=red\n"), ConfigError);
  EXPECT_THROW(parse_train_config("lr=fast\n"), ConfigError);
  EXPECT_THROW(parse_train_config("epochs\n"), ConfigError);
  TrainConfig bad;
  bad.lr = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::mt19937_64 rng(1);
  TF a = TF::uniform({5, 4}, -1, 1, rng, true), b = TF::uniform({3}, -1, 1, rng, true);
  const std::vector<float> a0(a.data().begin(), a.data().end());
  const std::vector<float> b0(b.data().begin(), b.data().end());
  Adam<float> adam({a, b});
  for (int i = 0; i < 3; ++i) {
    std::ranges::fill(a.mutable_grad(), 0.0f);  // explicit zero gradient
    adam.step(1e-3);                             // b has no gradient at all
  }
  EXPECT_TRUE(std::ranges::equal(a.data(), a0));
  EXPECT_TRUE(std::ranges::equal(b.data(), b0));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  TD w({3}, {1, 2, 3}, true);
  Adam<double> adam({w});
  auto g = w.mutable_grad();
  g[0] = 0.5;
  g[1] = -2;
  g[2] = 1e-3;
  adam.step(0.01);
  // Bias-corrected m/sqrt(v) is sign(g) on the first step.
  EXPECT_NEAR(w[0], 1 - 0.01, 1e-9);
  EXPECT_NEAR(w[1], 2 + 0.01, 1e-9);
  EXPECT_NEAR(w[2], 3 - 0.01, 1e-7);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, NonFiniteGradientNamed) {
  TF w({2}, {1, 2}, true);
  Adam<float> adam({w});
  w.mutable_grad()[1] = std::numeric_limits<float>::infinity();
  try {
    adam.step(1e-3);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("adam gradient"), std::string::npos) << e.what();
  }
}

// Gradient of task + lambda * L_c equals task gradient + lambda * regularizer
// gradient, parameter by parameter.
TEST(CompositeLoss, GradientIsLinearInLambda) {
  ArchSpec arch = tiny_arch();
  arch.variant = Variant::linear(0.5);
  auto model = Model<double>::build(arch, 3);
  std::mt19937_64 rng(4);
  const TD x = TD::uniform({4, 1, 8, 8}, -1, 1, rng);
  const std::vector<int> y{0, 2, 1, 2};
  const auto params = model.parameters();
  auto grads = [&](auto&& make_loss) {
    for (auto p : params) p.tensor.zero_grad();
    backward(make_loss());
    std::vector<std::vector<double>> out;
    for (const auto& p : params) out.push_back(p.tensor.grad());
    return out;
  };
  const auto task = grads([&] { return composite_loss(model, model.forward(x, true), y, 0.0); });
  const auto reg = grads([&] { return corr_loss(model.primary_weights()); });
  for (double lambda : {0.0, 1e-2, 1.0}) {
    StepResult info;
    const auto total = grads([&] {
      return composite_loss(model, model.forward(x, true), y, lambda, &info);
    });
    EXPECT_GT(info.corr_loss, 0.0);
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < total[k].size(); ++i)
        ASSERT_NEAR(total[k][i], task[k][i] + lambda * reg[k][i], 1e-10)
            << params[k].name << " lambda " << lambda;
  }
}

TEST(CompositeLoss, ConvVariantReportsZeroCorrelation) {
  auto model = Model<double>::build(tiny_arch(), 3);
  std::mt19937_64 rng(5);
  StepResult info;
  const TD logits = model.forward(TD::uniform({2, 1, 8, 8}, -1, 1, rng), true);
  const std::vector<int> y{0, 1};
  const TD loss = composite_loss(model, logits, y, 1e-2, &info);
  EXPECT_EQ(info.corr_loss, 0.0);
  EXPECT_EQ(loss.item(), info.task_loss);
}

TEST(CompositeLoss, UnregularizedModelMeasuresButIgnoresLc) {
  ArchSpec arch = tiny_arch();
  arch.variant = Variant::linear(0.5);
  arch.regularized = false;
  auto model = Model<double>::build(arch, 3);
  std::mt19937_64 rng(6);
  StepResult info;
  const TD logits = model.forward(TD::uniform({2, 1, 8, 8}, -1, 1, rng), true);
  const std::vector<int> y{0, 1};
  const TD loss = composite_loss(model, logits, y, 1.0, &info);
  EXPECT_GT(info.corr_loss, 0.0);
  EXPECT_EQ(loss.item(), info.task_loss);
}

TEST(Metrics, CsvRowFormat) {
  EpochMetrics m;
  m.epoch = 2;
  m.train_loss = 0.5;
  m.train_acc = 0.75;
  m.test_acc = 0.875;
  m.corr_loss = 12.5;
  m.lr = 1e-3;
  m.seconds = 3.25;
  EXPECT_EQ(metrics_row(m), "2,0.5,0.75,0.875,12.5,0.001,3.25");
  EXPECT_EQ(metrics_row(m, false), "2,0.5,0.75,0.875,12.5,0.001,0");
  EXPECT_EQ(std::string(kMetricsHeader), "epoch,train_loss,train_acc,test_acc,L_c,lr,seconds");
}

TEST(Training, NonFiniteLossNamesTheStep) {
  REQUIRE_MNIST();
  const auto data = head(mnist().train, 0, 256);
  auto model = Model<float>::build(base_arch(1, Variant::linear(0.5)), 0);
  for (auto& p : model.parameters())
    if (p.name == "fc1.weight") std::ranges::fill(p.tensor.mutable_data(), 3e38f);
  std::vector<TF> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  Adam<float> adam(params);
  TrainConfig c;
  std::mt19937_64 rng(0);
  try {
    train_epoch(model, data, c, adam, rng, 0);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1 step 1:"), std::string::npos) << e.what();
  }
}

std::vector<TF> param_list(const Model<float>& m) {
  std::vector<TF> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor);
  return out;
}

TEST(Training, OverfitsOneBatchWithin200Steps) {
  REQUIRE_MNIST();
  set_deterministic_blas();
  const auto& train = mnist().train;
  std::vector<std::size_t> idx(64);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const TF x = train.images<float>(idx);
  const std::vector<int> y = train.labels_at(idx);
  auto model = Model<float>::build(base_arch(1, Variant::linear(0.5)), 0);
  Adam<float> adam(param_list(model));
  int steps = 0;
  std::size_t correct = 0;
  for (; steps < 200 && correct < 64; ++steps) correct = train_step(model, adam, x, y, 1e-2, 1e-3).correct;
  EXPECT_EQ(correct, 64u) << "after " << steps << " steps";
}

TEST(Evaluate, UntrainedModelIsAtChance) {
  REQUIRE_MNIST();
  auto model = Model<float>::build(base_arch(1, Variant::linear(0.5)), 1);
  const auto r = evaluate(model, mnist().test);
  EXPECT_EQ(r.count, 10000u);
  EXPECT_NEAR(r.accuracy, 0.1, 0.02);
}

TEST(Evaluate, SubsetAccuracyIsWeightedMean) {
  REQUIRE_MNIST();
  auto model = Model<float>::build(base_arch(1, Variant::linear(0.5)), 2);
  const auto& test = mnist().test;
  const auto whole = evaluate(model, head(test, 0, 1500), 200);
  const auto a = evaluate(model, head(test, 0, 700), 300);
  const auto b = evaluate(model, head(test, 700, 1500), 300);
  EXPECT_EQ(a.correct + b.correct, whole.correct);
  EXPECT_NEAR(whole.accuracy, (a.accuracy * 700 + b.accuracy * 800) / 1500, 1e-12);
}

class TrainedSubset : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    if (!have_mnist()) return;
    set_deterministic_blas();
    config_.deterministic = true;
    model_.emplace(Model<float>::build(base_arch(1, Variant::linear(0.5)), 0));
    Adam<float> adam(param_list(*model_));
    std::mt19937_64 rng(config_.seed);
    const auto data = head(mnist().train, 0, 1024);
    for (std::size_t e = 0; e < 3; ++e) rows_.push_back(train_epoch(*model_, data, config_, adam, rng, e));
  }
  static void TearDownTestSuite() { model_.reset(); }

  static inline TrainConfig config_;
  static inline std::optional<Model<float>> model_;
  static inline std::vector<EpochMetrics> rows_;
};

TEST_F(TrainedSubset, CorrelationLossDecreases) {
  REQUIRE_MNIST();
  ASSERT_EQ(rows_.size(), 3u);
  EXPECT_LT(rows_[2].corr_loss, rows_[0].corr_loss);
  EXPECT_GT(rows_[2].train_acc, rows_[0].train_acc);
  EXPECT_TRUE(std::isnan(rows_[0].test_acc));
  EXPECT_EQ(rows_[1].epoch, 2u);
}

TEST_F(TrainedSubset, FoldKeepsEveryPrediction) {
  REQUIRE_MNIST();
  const auto test = head(mnist().test, 0, 2000);
  std::vector<int> p_train, p_fold;
  const auto a = evaluate(*model_, test, 500, &p_train);
  auto folded = model_->fold_layers();
  const auto b = evaluate(folded, test, 500, &p_fold);
  EXPECT_EQ(p_train, p_fold);
  EXPECT_EQ(a.correct, b.correct);
}

TEST(Training, DeterministicEpochRowsMatch) {
  REQUIRE_MNIST();
  set_deterministic_blas();
  const auto data = head(mnist().train, 0, 512);
  TrainConfig c;
  c.deterministic = true;
  c.seed = 9;
  std::vector<std::string> rows;
  for (int run = 0; run < 2; ++run) {
    auto model = Model<float>::build(base_arch(1, Variant::low_rank(0.5, 10)), c.seed);
    Adam<float> adam(param_list(model));
    std::mt19937_64 rng(c.seed);
    rows.push_back(metrics_row(train_epoch(model, data, c, adam, rng, 0), false));
  }
  EXPECT_EQ(rows[0], rows[1]);
}

}  // namespace
}  // namespace linearconv
