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

// linearconv: train, eval, fold, report, sweep-alpha, inspect-corr.
//
// Exit codes: 0 success, 2 invalid flags or configuration, 3 malformed
// input file, 4 numerical failure (NaN/Inf, degenerate filter).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "linearconv/linearconv.hpp"

namespace fs = std::filesystem;
using namespace linearconv;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitFormat = 3;
constexpr int kExitNumerical = 4;

struct ArchFlags {
  std::string arch = "base";
  std::string variant = "linear";
  double alpha = 0.5;
  std::size_t rank = 10;
  std::size_t input_channels = 3;
  CLI::Option* variant_opt = nullptr;
  CLI::Option* alpha_opt = nullptr;
  CLI::Option* rank_opt = nullptr;
  CLI::Option* channels_opt = nullptr;

  void add(CLI::App* app, const std::string& default_variant) {
    variant = default_variant;
    app->add_option("--arch", arch, "base, vgg11 or file:PATH")->capture_default_str();
    variant_opt = app->add_option("--variant", variant, "conv, linear or linear-lowrank")
                      ->check(CLI::IsMember({"conv", "linear", "linear-lowrank"}))
                      ->capture_default_str();
    alpha_opt = app->add_option("--alpha", alpha, "fraction of primary filters")
                    ->capture_default_str();
    rank_opt = app->add_option("--rank", rank, "rank of the low-rank coefficients")
                   ->capture_default_str();
  }

  Variant make_variant() const {
    switch (parse_variant_name(variant)) {
      case VariantKind::Conv: return Variant::conv();
      case VariantKind::LinearConvFull: return Variant::linear(alpha);
      case VariantKind::LinearConvLowRank: return Variant::low_rank(alpha, rank);
    }
    return Variant::conv();
  }

  /// Builtin architectures take channels and variant from the flags. An
  /// architecture file is used as written unless a flag was given explicitly.
  ArchSpec resolve(std::size_t channels) const {
    ArchSpec spec;
    if (arch == "base") {
      spec = base_arch(channels, make_variant());
    } else if (arch == "vgg11") {
      spec = vgg11_arch(channels, make_variant());
    } else if (arch.rfind("file:", 0) == 0) {
      spec = load_arch_file(arch.substr(5));
      if (variant_opt->count() || alpha_opt->count() || rank_opt->count()) {
        Variant v = spec.variant;
        if (variant_opt->count()) v.kind = parse_variant_name(variant);
        if (alpha_opt->count()) v.alpha = alpha;
        if (rank_opt->count()) v.rank = rank;
        spec.variant = v;
      }
      if (channels_opt && channels_opt->count()) spec.input_channels = channels;
    } else {
      throw ConfigError("--arch must be base, vgg11 or file:PATH, got '" + arch + "'");
    }
    validate_arch(spec);
    return spec;
  }
};

std::size_t dataset_channels(DatasetKind k) { return k == DatasetKind::Cifar10 ? 3 : 1; }

std::string resolve_data_dir(const std::string& flag) {
  std::string dir = flag;
  if (dir.empty())
    if (const char* env = std::getenv("DATA_DIR")) dir = env;
  if (dir.empty()) throw ConfigError("no dataset directory: pass --data-dir or set DATA_DIR");
  if (!fs::is_directory(dir)) throw ConfigError("dataset directory '" + dir + "' does not exist");
  return dir;
}

LabeledDataset take(const LabeledDataset& d, std::size_t limit) {
  if (limit == 0 || limit >= d.size()) return d;
  LabeledDataset s = d;
  s.labels.resize(limit);
  s.pixels.resize(limit * d.image_numel());
  return s;
}

LabeledDataset load_test_split(DatasetKind kind, const std::string& dir, const NormStats& stats) {
  const std::string root = dir.back() == '/' ? dir : dir + "/";
  std::optional<NormStats> st;
  if (!stats.mean.empty()) st = stats;
  if (kind == DatasetKind::Cifar10) {
    if (!st) return load_dataset_dir(kind, dir).test;
    return load_cifar10({root + "test_batch.bin"}, Split::Test, st);
  }
  if (!st) return load_dataset_dir(kind, dir).test;
  return load_idx(root + "t10k-images-idx3-ubyte", root + "t10k-labels-idx1-ubyte", Split::Test,
                  kind, st);
}

template <typename T>
std::vector<Tensor<T>> param_tensors(const Model<T>& m) {
  std::vector<Tensor<T>> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor);
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainFlags {
  ArchFlags arch;
  std::string dataset = "mnist";
  std::string data_dir;
  std::string out;
  TrainConfig config;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
};

template <typename T>
int run_train(const TrainFlags& f, const ArchSpec& spec, TrainConfig config) {
  const DatasetPair data = load_dataset_dir(config.dataset, resolve_data_dir(f.data_dir));
  const LabeledDataset train = take(data.train, f.train_limit);
  const LabeledDataset test = take(data.test, f.test_limit);
  config.norm = data.train.stats;
  if (config.deterministic) set_deterministic_blas();

  fs::create_directories(f.out);
  nlohmann::ordered_json j;
  j["arch"] = f.arch.arch;
  j["arch_name"] = spec.name;
  j["variant"] = variant_name(spec.variant.kind);
  j["alpha"] = spec.variant.alpha;
  j["rank"] = spec.variant.rank;
  j["regularized"] = spec.regularized;
  j["input_channels"] = spec.input_channels;
  j["dataset"] = dataset_kind_name(config.dataset);
  j["epochs"] = config.epochs;
  j["batch_size"] = config.batch_size;
  j["lr"] = config.lr;
  j["lr_decay"] = config.lr_decay;
  j["decay_period"] = config.decay_period;
  j["lambda"] = config.lambda;
  j["seed"] = config.seed;
  j["deterministic"] = config.deterministic;
  j["f64"] = config.f64;
  j["train_limit"] = f.train_limit;
  j["test_limit"] = f.test_limit;
  j["train_samples"] = train.size();
  j["test_samples"] = test.size();
  j["norm_mean"] = config.norm.mean;
  j["norm_std"] = config.norm.stddev;
  std::ofstream(fs::path(f.out) / "config.json") << j.dump(2) << '\n';

  Model<T> model = Model<T>::build(spec, config.seed);
  Adam<T> adam(param_tensors(model));
  std::mt19937_64 rng(config.seed);
  std::ofstream csv(fs::path(f.out) / "metrics.csv");
  csv << kMetricsHeader << '\n' << std::flush;
  std::cout << spec.name << " " << variant_name(spec.variant.kind) << ": "
            << model.parameter_count() << " parameters, " << train.size() << " train / "
            << test.size() << " test samples\n";

  double test_acc = 0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochMetrics m = train_epoch(model, train, config, adam, rng, e);
    test_acc = evaluate(model, test).accuracy;
    m.test_acc = test_acc;
    csv << metrics_row(m, !config.deterministic) << '\n' << std::flush;
    std::cout << "epoch " << m.epoch << "/" << config.epochs << std::fixed << std::setprecision(4)
              << "  loss " << m.train_loss << "  train_acc " << m.train_acc << "  test_acc "
              << m.test_acc << "  L_c " << m.corr_loss << "  lr " << std::defaultfloat << m.lr
              << std::fixed << std::setprecision(1) << "  " << m.seconds << "s\n"
              << std::defaultfloat << std::flush;
    save_checkpoint(make_checkpoint(model, config, e + 1, &adam, &rng),
                    (fs::path(f.out) / ("epoch_" + std::to_string(e + 1) + ".ckpt")).string());
  }
  fs::copy_file(fs::path(f.out) / ("epoch_" + std::to_string(config.epochs) + ".ckpt"),
                fs::path(f.out) / "final.ckpt", fs::copy_options::overwrite_existing);
  std::cout << "final test accuracy: " << std::fixed << std::setprecision(4) << test_acc << '\n';
  return 0;
}

int cmd_train(const TrainFlags& f) {
  TrainConfig config = f.config;
  config.dataset = parse_dataset_kind(f.dataset);
  config.validate();
  if (f.out.empty()) throw ConfigError("--out is required");
  const std::size_t channels = dataset_channels(config.dataset);
  const ArchSpec spec = f.arch.resolve(channels);
  if (spec.input_channels != channels || spec.input_height != kImageSize ||
      spec.input_width != kImageSize) {
    throw ConfigError("architecture expects " + std::to_string(spec.input_channels) + "x" +
                      std::to_string(spec.input_height) + "x" + std::to_string(spec.input_width) +
                      " inputs; dataset " + f.dataset + " provides " + std::to_string(channels) +
                      "x32x32");
  }
  resolve_data_dir(f.data_dir);
  return config.f64 ? run_train<double>(f, spec, config) : run_train<float>(f, spec, config);
}

// ---------------------------------------------------------------------------
// eval / fold / inspect-corr

struct CheckpointFlags {
  std::string checkpoint;
  std::string dataset;
  std::string data_dir;
  std::string out;
  std::size_t layer = 1;
  std::string which = "primary";
  std::size_t limit = 0;
};

template <typename T>
int run_eval(const Checkpoint& ck, const LabeledDataset& test) {
  Model<T> model = restore_model<T>(ck);
  const EvalResult r = evaluate(model, test);
  std::cout << "accuracy " << std::fixed << std::setprecision(4) << r.accuracy << " (" << r.correct
            << "/" << r.count << ")  mean loss " << std::setprecision(6) << r.mean_loss << '\n';
  return 0;
}

int cmd_eval(const CheckpointFlags& f) {
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const DatasetKind kind = f.dataset.empty() ? ck.config.dataset : parse_dataset_kind(f.dataset);
  if (dataset_channels(kind) != ck.arch.input_channels) {
    throw ConfigError("checkpoint expects " + std::to_string(ck.arch.input_channels) +
                      "-channel inputs, dataset " + dataset_kind_name(kind) + " has " +
                      std::to_string(dataset_channels(kind)));
  }
  const LabeledDataset test =
      take(load_test_split(kind, resolve_data_dir(f.data_dir), ck.config.norm), f.limit);
  return ck.config.f64 ? run_eval<double>(ck, test) : run_eval<float>(ck, test);
}

int cmd_fold(const CheckpointFlags& f) {
  if (f.out.empty()) throw ConfigError("--out is required");
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  bool any_linear = false;
  for (const auto& l : ck.arch.layers)
    if (const auto* c = std::get_if<ConvLayerSpec>(&l)) any_linear = any_linear || ck.arch.replaces(*c);
  if (ck.folded || !any_linear) {
    std::cerr << "warning: " << (ck.folded ? "checkpoint is already folded" : "checkpoint has no LinearConv layers")
              << "; writing it unchanged\n";
    save_checkpoint(ck, f.out);
    return 0;
  }
  // Compose in double, store as float like every checkpoint.
  const Model<double> folded = restore_model<double>(ck).fold_layers();
  save_checkpoint(make_checkpoint(folded, ck.config, ck.epoch), f.out);
  std::cout << "folded " << ck.arch.conv_layer_count() << " conv layers: "
            << folded.parameter_count() << " parameters\n";
  return 0;
}

int cmd_inspect_corr(const CheckpointFlags& f) {
  const fs::path out(f.out);
  const std::string ext = out.extension().string();
  if (ext != ".csv" && ext != ".pgm") throw ConfigError("--out must end in .csv or .pgm");
  if (f.which != "primary" && f.which != "secondary" && f.which != "composed") {
    throw ConfigError("--which must be primary, secondary or composed");
  }
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  Model<double> model = restore_model<double>(ck);
  const ConvBlock<double>& block = model.conv_layer(f.layer);
  Tensor<double> weights;
  if (f.which == "composed") {
    weights = block.weights();
  } else {
    const auto* lc = std::get_if<LinearConvParams<double>>(&block.conv);
    if (!lc) {
      throw ConfigError("conv layer " + std::to_string(f.layer) +
                        " is not a trainable LinearConv layer; only --which composed applies");
    }
    if (f.which == "primary") {
      weights = lc->primary;
    } else {
      const Tensor<double> all = compose_weights(*lc);
      const std::size_t per = all.numel() / all.dim(0);
      const auto data = all.data();
      weights = Tensor<double>({lc->split.secondary, per},
                               std::vector<double>(data.begin() + lc->split.primary * per, data.end()));
    }
  }
  const CorrelationReport r =
      correlation_report(weights, "conv" + std::to_string(f.layer) + "." + f.which);
  std::ofstream os(out, std::ios::binary);
  if (!os) throw ConfigError("cannot open '" + f.out + "' for writing");
  if (ext == ".csv") write_csv(r, os);
  else write_pgm(r, os);
  std::cout << r.layer << ": " << r.size << " filters, max |off-diagonal| " << r.max_off_diagonal()
            << ", L1 distance to identity " << r.loss_contribution << ", numerical rank "
            << r.numerical_rank << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// report / sweep-alpha

struct ReportFlags {
  ArchFlags arch;
  std::string csv;
  std::string grid = "0.125,0.25,0.5,0.75,0.875";
};

int cmd_report(const ReportFlags& f) {
  const ArchSpec spec = f.arch.resolve(f.arch.input_channels);
  const CostReport r = cost_report(spec);
  write_text(r, std::cout);
  if (!f.csv.empty()) {
    std::ofstream os(f.csv);
    if (!os) throw ConfigError("cannot open '" + f.csv + "' for writing");
    write_csv(r, os);
  }
  return 0;
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  std::istringstream is(s);
  for (std::string tok; std::getline(is, tok, ',');) {
    try {
      std::size_t pos = 0;
      const double a = std::stod(tok, &pos);
      if (pos != tok.size() || !(a > 0) || a > 1) throw std::invalid_argument(tok);
      out.push_back(a);
    } catch (const std::exception&) {
      throw ConfigError("--grid entry '" + tok + "' is not a number in (0, 1]");
    }
  }
  if (out.empty()) throw ConfigError("--grid is empty");
  return out;
}

int cmd_sweep(const ReportFlags& f) {
  const std::vector<double> grid = parse_grid(f.grid);
  ArchFlags conv_flags = f.arch;
  conv_flags.variant = "conv";
  const ArchSpec spec = conv_flags.resolve(f.arch.input_channels);
  const CoeffSpec coeff =
      f.arch.variant == "linear-lowrank" ? CoeffSpec::low_rank(f.arch.rank) : CoeffSpec::full();
  const auto points = alpha_sweep(spec, grid, coeff);
  std::cout << "alpha,params,params_M,training_flops,overhead_flops\n";
  for (const auto& p : points) {
    std::cout << p.alpha << ',' << p.params << ',' << millions(p.params) << ',' << p.training_flops
              << ',' << p.overhead_flops << '\n';
  }
  return 0;
}

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DegenerateFilterError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LinearConv training, folding and cost accounting"};
  app.require_subcommand(1);

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "train a model and write checkpoints and metrics.csv");
  tf.arch.add(train, "linear");
  train->add_option("--dataset", tf.dataset, "mnist, fashion or cifar10")
      ->check(CLI::IsMember({"mnist", "fashion", "cifar10"}))
      ->capture_default_str();
  train->add_option("--data-dir", tf.data_dir, "dataset directory (default: $DATA_DIR)");
  train->add_option("--out", tf.out, "output directory")->required();
  train->add_option("--epochs", tf.config.epochs)->capture_default_str();
  train->add_option("--batch-size", tf.config.batch_size)->capture_default_str();
  train->add_option("--lr", tf.config.lr, "initial learning rate")->capture_default_str();
  train->add_option("--lr-decay", tf.config.lr_decay)->capture_default_str();
  train->add_option("--decay-period", tf.config.decay_period, "epochs between decays")
      ->capture_default_str();
  train->add_option("--lambda", tf.config.lambda, "correlation penalty weight")
      ->capture_default_str();
  train->add_option("--seed", tf.config.seed)->capture_default_str();
  train->add_flag("--deterministic", tf.config.deterministic,
                  "single-threaded BLAS, seconds column written as 0");
  train->add_flag("--f64", tf.config.f64, "train in 64-bit precision");
  train->add_option("--train-limit", tf.train_limit, "use only the first N training samples");
  train->add_option("--test-limit", tf.test_limit, "use only the first N test samples");

  CheckpointFlags cf;
  auto* eval = app.add_subcommand("eval", "test accuracy of a checkpoint");
  eval->add_option("--checkpoint", cf.checkpoint)->required();
  eval->add_option("--dataset", cf.dataset, "default: the checkpoint's training dataset")
      ->check(CLI::IsMember({"mnist", "fashion", "cifar10"}));
  eval->add_option("--data-dir", cf.data_dir, "dataset directory (default: $DATA_DIR)");
  eval->add_option("--limit", cf.limit, "use only the first N test samples");

  auto* fold = app.add_subcommand("fold", "compose LinearConv filters into plain banks");
  fold->add_option("--checkpoint", cf.checkpoint)->required();
  fold->add_option("--out", cf.out)->required();

  auto* inspect = app.add_subcommand("inspect-corr", "export a layer's filter Gram matrix");
  inspect->add_option("--checkpoint", cf.checkpoint)->required();
  inspect->add_option("--layer", cf.layer, "1-based conv layer index")->capture_default_str();
  inspect->add_option("--which", cf.which, "primary, secondary or composed")->capture_default_str();
  inspect->add_option("--out", cf.out, "output .csv or .pgm")->required();

  ReportFlags rf;
  auto* report = app.add_subcommand("report", "parameter and FLOP accounting");
  rf.arch.add(report, "conv");
  rf.arch.channels_opt =
      report->add_option("--input-channels", rf.arch.input_channels)->capture_default_str();
  report->add_option("--csv", rf.csv, "also write the per-layer table as CSV");

  ReportFlags sf;
  sf.arch.arch = "vgg11";
  auto* sweep = app.add_subcommand("sweep-alpha", "parameter totals over an alpha grid");
  sf.arch.add(sweep, "linear");
  sf.arch.channels_opt =
      sweep->add_option("--input-channels", sf.arch.input_channels)->capture_default_str();
  sweep->add_option("--grid", sf.grid, "comma-separated alphas")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (train->parsed()) return guarded([&] { return cmd_train(tf); });
  if (eval->parsed()) return guarded([&] { return cmd_eval(cf); });
  if (fold->parsed()) return guarded([&] { return cmd_fold(cf); });
  if (inspect->parsed()) return guarded([&] { return cmd_inspect_corr(cf); });
  if (report->parsed()) return guarded([&] { return cmd_report(rf); });
  if (sweep->parsed()) return guarded([&] { return cmd_sweep(sf); });
  return kExitConfig;
}
