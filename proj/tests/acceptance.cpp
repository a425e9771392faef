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

// Acceptance suite. Prints one PASS/FAIL line per criterion, followed by
// indented detail lines.
//
//   acceptance [--criteria 1,2,...] [--data-dir DIR] [--work-dir DIR]
//
// The exit status is nonzero when a criterion fails that is not listed in
// kKnownDeviations. Known deviations still print FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "linearconv/linearconv.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace linearconv;

namespace {

using TD = Tensor<double>;
using TF = Tensor<float>;
using Clock = std::chrono::steady_clock;

// Tolerances.
constexpr double kSweepRelTol = 0.01;          // criterion 2
constexpr double kOverheadRelTol = 0.05;       // criterion 3
constexpr double kOverheadTarget = 0.043e9;    // criterion 3, 0.060B - 0.017B
constexpr double kFoldTol = 1e-5;              // criterion 4, 32-bit
constexpr double kGradRelTol = 1e-4;           // criterion 5, 64-bit
constexpr std::size_t kGradCoords = 10;        // criterion 5
constexpr double kFdStep = 1e-6;               // criterion 5
constexpr double kOrthoLoss = 1e-2;            // criterion 6
constexpr double kOrthoOffDiag = 0.05;         // criterion 6
constexpr int kOrthoSteps = 5000;              // criterion 6
constexpr double kOrthoStep0 = 0.1;            // criterion 6
constexpr double kOrthoFinalRatio = 1e-3;      // criterion 6
constexpr double kMinAccuracy = 0.985;         // criterion 7
constexpr double kMaxGap = 0.007;              // criterion 7

// Runtime budgets in seconds.
const std::map<int, double> kBudget{{1, 1}, {2, 1}, {4, 60}, {5, 300}, {6, 60}, {7, 3600}};

// Sub-checks that fail on the arithmetic itself. Each one is explained in
// README.md under "Acceptance results".
const std::set<std::string> kKnownDeviations{"8b"};

struct Check {
  std::string id;
  std::string what;
  bool pass = false;
  std::string detail;
};

struct Outcome {
  std::vector<Check> checks;
  std::vector<std::string> info;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. parameter totals at two-decimal million rounding

Outcome criterion1() {
  Outcome o;
  struct Row {
    const char* label;
    ArchSpec spec;
    const char* expected;
  };
  const std::vector<Row> rows{
      {"Base Conv", base_arch(3, Variant::conv()), "0.40"},
      {"Base LinearConv", base_arch(3, Variant::linear(0.5)), "0.23"},
      {"Base LowRank r=10", base_arch(3, Variant::low_rank(0.5, 10)), "0.21"},
      {"VGG11 Conv", vgg11_arch(3, Variant::conv()), "9.23"},
      {"VGG11 LinearConv", vgg11_arch(3, Variant::linear(0.5)), "4.92"},
      {"VGG11 LowRank r=10", vgg11_arch(3, Variant::low_rank(0.5, 10)), "4.65"},
  };
  for (const auto& r : rows) {
    const count_t n = cost_report(r.spec).total_params;
    o.checks.push_back({"1", r.label, millions(n) == r.expected,
                        std::to_string(n) + " = " + millions(n) + "M, expected " + r.expected + "M"});
  }
  return o;
}

// ---------------------------------------------------------------------------
// 2. VGG11 alpha sweep

Outcome criterion2() {
  Outcome o;
  const std::vector<double> grid{0.125, 0.25, 0.5, 0.75, 0.875, 1.0};
  const std::vector<double> expected_m{1.30, 2.54, 4.92, 7.15, 8.21, 9.23};
  const auto points = alpha_sweep(vgg11_arch(3), grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double got = static_cast<double>(points[i].params) / 1e6;
    const double rel = std::abs(got - expected_m[i]) / expected_m[i];
    o.checks.push_back({"2", "alpha=" + fmt(grid[i]), rel <= kSweepRelTol,
                        fmt(got, 4) + "M vs " + fmt(expected_m[i], 3) + "M, rel " + sci(rel)});
  }
  return o;
}

// ---------------------------------------------------------------------------
// 3. composition overhead

Outcome criterion3() {
  Outcome o;
  const ArchSpec spec = base_arch(3, Variant::linear(0.5));
  const count_t overhead = cost_report(spec).total_training_overhead_flops;
  const double rel = std::abs(static_cast<double>(overhead) - kOverheadTarget) / kOverheadTarget;
  o.checks.push_back({"3", "Base LinearConv overhead vs 0.043B", rel <= kOverheadRelTol,
                      std::to_string(overhead) + " FLOPs = " + billions(overhead) + "B, rel " +
                          sci(rel)});
  // Independent tally: 2 FLOPs per MAC of the (1-a)f x af x hwc product.
  count_t tally = 0;
  for (const auto& [f, c] : std::vector<std::pair<count_t, count_t>>{
           {32, 3}, {64, 32}, {128, 64}, {256, 128}}) {
    tally += 2 * (f / 2) * (f / 2) * (9 * c);
  }
  o.checks.push_back({"3", "overhead equals per-layer tally", overhead == tally,
                      std::to_string(overhead) + " vs " + std::to_string(tally)});

  ArchSpec keep_first = spec;
  for (auto& l : keep_first.layers)
    if (auto* c = std::get_if<ConvLayerSpec>(&l)) {
      c->replace = false;
      break;
    }
  o.info.push_back("the quoted 43,057,152 is the total without the first layer's term; with "
                   "conv1 kept as a plain conv the overhead is " +
                   std::to_string(cost_report(keep_first).total_training_overhead_flops));

  const std::vector<double> grid{0.125, 0.25, 0.5, 0.75, 0.875};
  const auto points = alpha_sweep(vgg11_arch(3), grid);
  std::size_t best = 0;
  std::ostringstream os;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].overhead_flops > points[best].overhead_flops) best = i;
    os << (i ? ", " : "") << grid[i] << ":" << billions(points[i].overhead_flops);
  }
  o.checks.push_back({"3", "VGG11 overhead is maximal at alpha=0.5", grid[best] == 0.5, os.str()});
  return o;
}

// ---------------------------------------------------------------------------
// 4. fold equivalence

struct LayerShape {
  std::size_t filters, channels, extent;
};

std::vector<LayerShape> layer_shapes() {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::vector<LayerShape> out;
  for (const ArchSpec& spec : {base_arch(1), base_arch(3), vgg11_arch(3)}) {
    for (const auto& r : resolve_shapes(spec)) {
      if (!r.conv_index) continue;
      const std::size_t f = r.output[0], c = r.input[0];
      if (!seen.insert({f, c}).second) continue;
      // Small planes keep the wide layers within budget; 6x6 still has a
      // padded border on every side.
      out.push_back({f, c, c >= 128 ? 6u : 10u});
    }
  }
  return out;
}

Outcome criterion4() {
  Outcome o;
  constexpr int kDraws = 10, kInputs = 100;
  std::mt19937_64 rng(404);
  double worst_lib = 0, worst_f64 = 0;
  std::size_t cases = 0;
  for (const LayerShape& s : layer_shapes()) {
    for (CoeffMode mode : {CoeffMode::Full, CoeffMode::LowRank}) {
      const LinearConvGeometry g{s.filters, s.channels, 3, 3, 0.5, 1, 1};
      for (int d = 0; d < kDraws; ++d) {
        const auto p = init_linear_conv<float>(g, mode, 10, rng);
        const TF x = TF::uniform({kInputs, s.channels, s.extent, s.extent}, -1, 1, rng);
        const TF train = forward_train(p, x);
        const TF lib = fold(p).forward(x);

        // Deployment path: compose in 64-bit, store as 32-bit.
        LinearConvParams<double> pd;
        pd.geometry = p.geometry;
        pd.split = p.split;
        auto to_d = [](const TF& t) {
          return TD(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
        };
        pd.primary = to_d(p.primary);
        if (const auto* full = std::get_if<FullCoefficients<float>>(&p.coefficients)) {
          pd.coefficients = FullCoefficients<double>{to_d(full->a)};
        } else {
          const auto& lr = std::get<LowRankCoefficients<float>>(p.coefficients);
          pd.coefficients = LowRankCoefficients<double>{to_d(lr.a1), to_d(lr.a2)};
        }
        const TD wd = fold(pd).weights;
        const TF wf(wd.shape(), std::vector<float>(wd.data().begin(), wd.data().end()));
        const TF dep = conv2d(x, wf, 1, 1);

        for (std::size_t i = 0; i < train.numel(); ++i) {
          worst_lib = std::max(worst_lib, double(std::abs(train[i] - lib[i])));
          worst_f64 = std::max(worst_f64, double(std::abs(train[i] - dep[i])));
        }
        cases += kInputs;
      }
    }
  }
  const std::string n = std::to_string(layer_shapes().size()) + " layer shapes x 2 modes x " +
                        std::to_string(kDraws) + " draws x " + std::to_string(kInputs) + " inputs";
  o.checks.push_back({"4", "32-bit fold vs train path", worst_lib <= kFoldTol,
                      n + ", max |diff| " + sci(worst_lib)});
  o.checks.push_back({"4", "64-bit composed fold stored as 32-bit vs train path",
                      worst_f64 <= kFoldTol, "max |diff| " + sci(worst_f64)});
  return o;
}

// ---------------------------------------------------------------------------
// 5. gradient suite

Outcome criterion5() {
  Outcome o;
  std::mt19937_64 rng(505);
  auto param = [&](Shape s) { return TD::uniform(std::move(s), -1, 1, rng, true); };
  auto constant = [&](Shape s) { return TD::uniform(std::move(s), -1, 1, rng, false); };
  // A fixed random weighting turns any output into a scalar whose gradient
  // is not uniform across elements.
  auto weighted = [&](Shape s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    const TD w = constant({n, 1});
    return [w, n](const TD& y) { return sum(matmul(reshape(y, {1, n}), w)); };
  };

  struct Case {
    std::string name;
    std::function<TD()> loss;
    std::vector<TD> params;
  };
  std::vector<Case> cases;

  {
    TD a = param({4, 5}), b = param({5, 3});
    auto red = weighted({4, 3});
    cases.push_back({"matmul", [=] { return red(matmul(a, b)); }, {a, b}});
  }
  {
    TD a = param({4, 5});
    auto red = weighted({5, 4});
    cases.push_back({"transpose", [=] { return red(transpose(a)); }, {a}});
  }
  {
    TD x = param({3, 6}), w = param({10, 6}), b = param({10});
    auto red = weighted({3, 10});
    cases.push_back({"linear", [=] { return red(linear(x, w, b)); }, {x, w, b}});
  }
  {
    TD a = param({3, 5}), b = param({3, 5});
    auto red = weighted({3, 5});
    cases.push_back({"add", [=] { return red(add(a, b)); }, {a, b}});
    cases.push_back({"sub", [=] { return red(sub(a, b)); }, {a, b}});
    cases.push_back({"scale", [=] { return red(scale(a, 1.7)); }, {a}});
    cases.push_back({"relu", [=] { return red(relu(a)); }, {a}});
    cases.push_back({"row_l2_normalize", [=] { return red(row_l2_normalize(a)); }, {a}});
    cases.push_back({"reshape", [=] { return red(reshape(a, {5, 3})); }, {a}});
    cases.push_back({"sum", [=] { return scale(sum(a), 0.3); }, {a}});
    cases.push_back({"l1_norm", [=] { return l1_norm(a); }, {a}});
  }
  {
    TD a = param({2, 3, 2, 2});
    auto red = weighted({2, 12});
    cases.push_back({"flatten", [=] { return red(flatten(a)); }, {a}});
  }
  {
    TD a = param({2, 6}), b = param({3, 6});
    auto red = weighted({5, 6});
    cases.push_back({"concat0", [=] { return red(concat0(std::vector<TD>{a, b})); }, {a, b}});
  }
  {
    TD logits = param({4, 10});
    const std::vector<int> labels{3, 0, 9, 5};
    cases.push_back(
        {"softmax_cross_entropy", [=] { return softmax_cross_entropy(logits, labels); }, {logits}});
  }
  {
    TD x = param({2, 3, 7, 7}), w = param({4, 3, 3, 3});
    auto red1 = weighted({2, 4, 7, 7});
    auto red2 = weighted({2, 4, 3, 3});
    cases.push_back({"conv2d stride 1 pad 1", [=] { return red1(conv2d(x, w, 1, 1)); }, {x, w}});
    cases.push_back({"conv2d stride 2 pad 0", [=] { return red2(conv2d(x, w, 2, 0)); }, {x, w}});
  }
  {
    TD x = param({2, 3, 6, 6});
    auto red = weighted({2, 3, 3, 3});
    cases.push_back({"maxpool2d", [=] { return red(maxpool2d(x)); }, {x}});
  }
  {
    TD x = param({4, 10, 3, 3}), gamma = param({10}), beta = param({10});
    auto red = weighted({4, 10, 3, 3});
    auto stats = std::make_shared<std::pair<TD, TD>>(TD::zeros({10}), TD::full({10}, 1.0));
    cases.push_back({"batchnorm2d (training)",
                     [=] { return red(batchnorm2d(x, gamma, beta, stats->first, stats->second, true)); },
                     {x, gamma, beta}});
  }
  for (CoeffMode mode : {CoeffMode::Full, CoeffMode::LowRank}) {
    const LinearConvGeometry g{16, 3, 3, 3, 0.5, 1, 1};
    const auto p = init_linear_conv<double>(g, mode, 3, rng);
    const TD x = constant({2, 3, 6, 6});
    auto red = weighted({2, 16, 6, 6});
    cases.push_back({std::string("LinearConv forward (") +
                         (mode == CoeffMode::Full ? "full" : "low-rank") + ")",
                     [=] { return red(forward_train(p, x)); }, p.parameters()});
  }
  {
    TD w1 = param({6, 2, 3, 3}), w2 = param({4, 12});
    cases.push_back({"corr_loss", [=] { return corr_loss(std::vector<TD>{w1, w2}); }, {w1, w2}});
  }

  for (const Case& c : cases) {
    double worst = 0;
    std::size_t min_checked = SIZE_MAX;
    for (const TD& p : c.params) {
      const auto r = oracle::finite_difference(c.loss, p, kGradCoords, rng, kFdStep);
      worst = std::max(worst, r.max_rel_error);
      min_checked = std::min(min_checked, r.checked);
    }
    o.checks.push_back({"5", c.name, worst < kGradRelTol && min_checked >= kGradCoords,
                        "max rel error " + sci(worst) + " over " + std::to_string(c.params.size()) +
                            " input(s), >= " + std::to_string(min_checked) + " coords each"});
  }
  return o;
}

// ---------------------------------------------------------------------------
// 6. orthogonalization by gradient descent on corr_loss

struct Descent {
  int steps = 0;
  double lc = 0;
};

Descent descend(TD& w, double step0, double final_ratio, int max_steps) {
  Descent d;
  for (; d.steps < max_steps; ++d.steps) {
    w.zero_grad();
    TD loss = corr_loss(std::vector<TD>{w});
    d.lc = loss.item();
    if (d.lc < kOrthoLoss) break;
    backward(loss);
    const double step = step0 * std::pow(final_ratio, double(d.steps) / max_steps);
    const auto g = w.grad();
    auto v = w.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= step * g[i];
  }
  if (d.steps == max_steps) d.lc = corr_loss(std::vector<TD>{w}).item();
  return d;
}

Outcome criterion6() {
  Outcome o;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    TD w = TD::normal({16, 27}, 0, 1, rng, true);
    const double lc0 = corr_loss(std::vector<TD>{w}).item();
    const Descent d = descend(w, kOrthoStep0, kOrthoFinalRatio, kOrthoSteps);
    const CorrelationReport r = correlation_report(w);
    const bool pass = d.lc < kOrthoLoss && r.max_off_diagonal() < kOrthoOffDiag &&
                      r.numerical_rank == 16;
    o.checks.push_back({"6", "seed " + std::to_string(seed), pass,
                        "L_c " + fmt(lc0, 4) + " -> " + sci(d.lc) + " in " +
                            std::to_string(d.steps) + " steps, max off-diagonal " +
                            sci(r.max_off_diagonal()) + ", rank " +
                            std::to_string(r.numerical_rank)});
  }
  std::mt19937_64 rng(1);
  TD w = TD::normal({16, 27}, 0, 1, rng, true);
  const Descent c = descend(w, kOrthoStep0, 1.0, kOrthoSteps);
  o.info.push_back("step " + fmt(kOrthoStep0) + " decayed x" + fmt(kOrthoFinalRatio) +
                   " over the budget; a constant step " + fmt(kOrthoStep0) + " ends at L_c " +
                   fmt(c.lc, 3) + " (seed 1) because the l1 subgradient keeps oscillating");
  return o;
}

// ---------------------------------------------------------------------------
// 7 and 9: training through the command-line tool

struct Opts {
  std::string data_dir;
  std::string work_dir;
};

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream is(p);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split_csv(const std::string& row) {
  std::vector<std::string> out;
  std::istringstream is(row);
  for (std::string f; std::getline(is, f, ',');) out.push_back(f);
  return out;
}

// Runs `linearconv train` and returns the metrics rows, header excluded.
std::vector<std::string> train_run(const Opts& opts, const std::string& name,
                                   const std::string& flags, int& code) {
  const fs::path out = fs::path(opts.work_dir) / name;
  fs::remove_all(out);
  fs::create_directories(out);
  const std::string cmd = std::string(LINEARCONV_CLI) + " train --dataset mnist --data-dir '" +
                          opts.data_dir + "' --out '" + out.string() + "' " + flags + " > '" +
                          (out / "log.txt").string() + "' 2>&1";
  code = shell(cmd);
  auto lines = read_lines(out / "metrics.csv");
  if (!lines.empty()) lines.erase(lines.begin());
  return lines;
}

bool have_data(const Opts& opts, Outcome& o, const std::string& id) {
  if (fs::exists(fs::path(opts.data_dir) / "train-images-idx3-ubyte")) return true;
  o.checks.push_back({id, "MNIST available", false, "no MNIST at '" + opts.data_dir + "'"});
  return false;
}

Outcome criterion7(const Opts& opts) {
  Outcome o;
  if (!have_data(opts, o, "7")) return o;
  const std::string common = "--epochs 10 --batch-size 64 --lr 1e-3 --lr-decay 0.1 "
                             "--decay-period 5 --seed 0";
  struct Run {
    const char* label;
    std::string flags;
    double acc = -1;
    std::vector<std::string> rows;
  };
  std::vector<Run> runs{{"Base-Lr (LinearConv alpha=0.5, lambda=1e-2)",
                         "--arch base --variant linear --alpha 0.5 --lambda 1e-2 " + common, -1, {}},
                        {"Base (Conv)", "--arch base --variant conv " + common, -1, {}}};
  for (Run& r : runs) {
    const auto start = Clock::now();
    int code = 0;
    r.rows = train_run(opts, r.flags.find("conv ") != std::string::npos ? "base" : "base_lr",
                       r.flags, code);
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    if (code == 0 && r.rows.size() == 10) r.acc = std::stod(split_csv(r.rows.back())[3]);
    o.checks.push_back({"7", std::string(r.label) + " test accuracy >= 98.5%",
                        r.acc >= kMinAccuracy,
                        "exit " + std::to_string(code) + ", " + std::to_string(r.rows.size()) +
                            " epochs, accuracy " + fmt(100 * r.acc, 4) + "%, " +
                            fmt(secs, 4) + " s"});
  }
  const double gap = std::abs(runs[0].acc - runs[1].acc);
  o.checks.push_back({"7", "|acc(Base) - acc(Base-Lr)| <= 0.7%",
                      runs[0].acc >= 0 && runs[1].acc >= 0 && gap <= kMaxGap,
                      "gap " + fmt(100 * gap, 3) + "%"});
  if (!runs[0].rows.empty()) {
    std::ostringstream os;
    os << "Base-Lr L_c by epoch:";
    for (const auto& row : runs[0].rows) os << ' ' << fmt(std::stod(split_csv(row)[4]), 4);
    o.info.push_back(os.str());
  }
  return o;
}

Outcome criterion9(const Opts& opts) {
  Outcome o;
  if (!have_data(opts, o, "9")) return o;
  const std::string flags = "--arch base --variant linear --alpha 0.5 --lambda 1e-2 --seed 0 "
                            "--epochs 1 --deterministic";
  int c1 = 0, c2 = 0;
  const auto a = train_run(opts, "determinism_a", flags, c1);
  const auto b = train_run(opts, "determinism_b", flags, c2);
  const bool pass = c1 == 0 && c2 == 0 && a.size() == 1 && a == b;
  o.checks.push_back({"9", "first-epoch metrics rows byte-identical", pass,
                      a.empty() ? "no rows" : "row: " + a.front() + (pass ? "" : " vs " + (b.empty() ? std::string("none") : b.front()))});
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LinearConv acceptance suite"};
  std::string criteria = "1,2,3,4,5,6,7,8,9";
  Opts opts;
  if (const char* env = std::getenv("DATA_DIR")) opts.data_dir = env;
  opts.work_dir = (fs::temp_directory_path() / "linearconv_acceptance").string();
  app.add_option("--criteria", criteria, "comma-separated criterion numbers")->capture_default_str();
  app.add_option("--data-dir", opts.data_dir, "MNIST directory (default: $DATA_DIR)");
  app.add_option("--work-dir", opts.work_dir, "scratch directory for training runs")
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  std::set<int> wanted;
  {
    std::istringstream is(criteria);
    for (std::string tok; std::getline(is, tok, ',');) {
      const int n = std::atoi(tok.c_str());
      if (n < 1 || n > 9) {
        std::cerr << "unknown criterion '" << tok << "'\n";
        return 2;
      }
      wanted.insert(n);
    }
  }

  const std::map<int, std::pair<const char*, std::function<Outcome()>>> suite{
      {1, {"parameter totals at 2-decimal million rounding", criterion1}},
      {2, {"VGG11 alpha sweep within 1%", criterion2}},
      {3, {"composition overhead and its alpha profile", criterion3}},
      {4, {"fold equivalence, 32-bit, 1e-5", criterion4}},
      {5, {"finite-difference gradients, 64-bit, rel < 1e-4", criterion5}},
      {6, {"orthogonalization of 16x27 primaries", criterion6}},
      {7, {"MNIST training, 10 epochs", [&] { return criterion7(opts); }}},
      {8, {"reduction condition", [] {
             Outcome o;
             const auto dw = reduction_condition(96, 3, 3, 96, 0.5, 96);
             o.checks.push_back({"8a", "depthwise f=c=96, g=f, alpha=0.5 inflates", !dw.reduces,
                                 "conv " + std::to_string(dw.conv) + " vs LinearConv " +
                                     std::to_string(dw.linear) + " (x" +
                                     fmt(double(dw.linear) / double(dw.conv), 3) + ")"});
             for (const ArchSpec& spec : {base_arch(1), base_arch(3), vgg11_arch(3)}) {
               std::vector<std::string> bad;
               std::size_t layers = 0;
               for (const auto& r : resolve_shapes(spec)) {
                 if (!r.conv_index) continue;
                 ++layers;
                 const auto rc = reduction_condition(r.output[0], 3, 3, r.input[0], 0.5);
                 if (!rc.reduces) {
                   bad.push_back("conv" + std::to_string(r.conv_index) + " (f=" +
                                 std::to_string(r.output[0]) + ", c=" + std::to_string(r.input[0]) +
                                 "): conv " + std::to_string(rc.conv) + " < LinearConv " +
                                 std::to_string(rc.linear));
                 }
               }
               std::string detail = std::to_string(layers - bad.size()) + "/" +
                                    std::to_string(layers) + " layers reduce";
               for (const auto& b : bad) detail += "; " + b;
               o.checks.push_back({"8b", spec.name + " (" + std::to_string(spec.input_channels) +
                                             "-ch) every layer reduces at alpha=0.5",
                                   bad.empty(), detail});
             }
             return o;
           }}},
      {9, {"deterministic first epoch", [&] { return criterion9(opts); }}},
  };

  int unexpected = 0, failed = 0;
  for (int n : wanted) {
    const auto& [title, fn] = suite.at(n);
    const auto start = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.checks.push_back({std::to_string(n), "completed", false, std::string("threw: ") + e.what()});
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    if (kBudget.count(n)) {
      o.checks.push_back({std::to_string(n), "runtime", secs < kBudget.at(n),
                          fmt(secs, 4) + " s (budget " + fmt(kBudget.at(n)) + " s)"});
    }
    bool pass = true, only_known = true;
    for (const auto& c : o.checks) {
      if (c.pass) continue;
      pass = false;
      if (!kKnownDeviations.count(c.id)) only_known = false;
    }
    std::cout << "criterion " << n << ": " << (pass ? "PASS" : "FAIL") << "  " << title;
    if (!pass && only_known) std::cout << "  [known deviation]";
    std::cout << "  (" << fmt(secs, 3) << " s)\n";
    for (const auto& c : o.checks) {
      std::cout << "    " << (c.pass ? "ok  " : "FAIL") << "  " << c.what << ": " << c.detail
                << '\n';
    }
    for (const auto& i : o.info) std::cout << "    info  " << i << '\n';
    std::cout << std::flush;
    failed += !pass;
    unexpected += !pass && !only_known;
  }
  std::cout << "summary: " << wanted.size() - failed << "/" << wanted.size() << " criteria pass";
  if (failed) std::cout << ", " << failed - unexpected << " failure(s) are known deviations";
  std::cout << '\n';
  return unexpected ? 1 : 0;
}
