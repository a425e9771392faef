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

// Closed-form parameter and FLOP accounting for Conv and LinearConv layers.
//
// Conventions: convolutions carry no bias, batchnorm contributes 2f learnable
// parameters, fully connected layers keep their bias. One multiply-accumulate
// is 2 FLOPs. LinearConv training adds the weight-composition product once
// per forward pass; inference adds nothing because the bank is folded once.
// All counts are exact 64-bit integers.

#pragma once

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "linearconv/arch.hpp"
#include "linearconv/errors.hpp"
#include "linearconv/linear_conv.hpp"

namespace linearconv {

using count_t = std::uint64_t;

struct CoeffSpec {
  CoeffMode mode = CoeffMode::Full;
  std::size_t rank = 0;

  static CoeffSpec full() { return {CoeffMode::Full, 0}; }
  static CoeffSpec low_rank(std::size_t r) { return {CoeffMode::LowRank, r}; }
};

/// f * h * w * (c / g).
inline count_t conv_params(count_t f, count_t h, count_t w, count_t c, count_t groups = 1) {
  if (groups == 0 || c % groups || f % groups) {
    throw ConfigError("conv_params: groups=" + std::to_string(groups) + " must divide c=" +
                      std::to_string(c) + " and f=" + std::to_string(f));
  }
  return f * h * w * (c / groups);
}

/// alpha f * h * w * (c / g) + [alpha f * (1 - alpha) f | r * f].
inline count_t linearconv_params(count_t f, count_t h, count_t w, count_t c, double alpha,
                                 CoeffSpec coeff = CoeffSpec::full(), count_t groups = 1) {
  conv_params(f, h, w, c, groups);  // validates groups
  const FilterSplit split = split_filters(f, alpha);
  count_t coefficients = 0;
  if (coeff.mode == CoeffMode::Full) {
    coefficients = count_t(split.primary) * count_t(split.secondary);
  } else {
    check_rank(split, coeff.rank);
    coefficients = count_t(coeff.rank) * (count_t(split.primary) + count_t(split.secondary));
  }
  return count_t(split.primary) * h * w * (c / groups) + coefficients;
}

struct ReductionCheck {
  bool reduces = false;      // p_LC <= p_C
  std::int64_t margin = 0;   // p_C - p_LC
  count_t conv = 0;
  count_t linear = 0;
};

inline ReductionCheck reduction_condition(count_t f, count_t h, count_t w, count_t c, double alpha,
                                          count_t groups = 1,
                                          CoeffSpec coeff = CoeffSpec::full()) {
  ReductionCheck r;
  r.conv = conv_params(f, h, w, c, groups);
  r.linear = linearconv_params(f, h, w, c, alpha, coeff, groups);
  r.margin = static_cast<std::int64_t>(r.conv) - static_cast<std::int64_t>(r.linear);
  r.reduces = r.linear <= r.conv;
  return r;
}

/// 2 * (alpha f) * ((1 - alpha) f) * hwc for Full, 2 * r * f * hwc for LowRank.
inline count_t composition_flops(count_t f, count_t h, count_t w, count_t c, double alpha,
                                 CoeffSpec coeff = CoeffSpec::full(), count_t groups = 1) {
  const FilterSplit split = split_filters(f, alpha);
  const count_t k = h * w * (c / groups);
  if (coeff.mode == CoeffMode::Full) return 2 * count_t(split.primary) * count_t(split.secondary) * k;
  check_rank(split, coeff.rank);
  return 2 * count_t(coeff.rank) * (count_t(split.primary) + count_t(split.secondary)) * k;
}

enum class LayerKind { Conv, LinearConvFull, LinearConvLowRank, BatchNorm, FullyConnected };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "Conv";
    case LayerKind::LinearConvFull: return "LinearConvFull";
    case LayerKind::LinearConvLowRank: return "LinearConvLowRank";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::FullyConnected: return "FullyConnected";
  }
  return "?";
}

struct LayerCost {
  std::string layer;
  LayerKind kind = LayerKind::Conv;
  count_t params = 0;
  count_t inference_flops = 0;
  count_t training_overhead_flops = 0;
};

struct CostReport {
  std::string arch;
  std::vector<LayerCost> layers;
  count_t total_params = 0;
  count_t total_inference_flops = 0;
  count_t total_training_overhead_flops = 0;

  /// Per-sample FLOPs of one training forward pass (inference + composition).
  count_t total_training_flops() const {
    return total_inference_flops + total_training_overhead_flops;
  }
};

/// Per-layer costs for the spec's variant. Per-sample FLOPs, forward pass.
inline CostReport cost_report(const ArchSpec& spec) {
  validate_arch(spec);
  CostReport rep;
  rep.arch = spec.name;
  std::size_t fc_idx = 0;
  for (const auto& r : resolve_shapes(spec)) {
    const auto& layer = spec.layers[r.index];
    if (const auto* c = std::get_if<ConvLayerSpec>(&layer)) {
      const count_t ch = r.input[0];
      const count_t spatial = count_t(r.output[1]) * r.output[2];
      const std::string id = "conv" + std::to_string(r.conv_index);
      LayerCost lc;
      lc.layer = id;
      lc.inference_flops =
          2 * spatial * conv_params(c->filters, c->kernel_h, c->kernel_w, ch, c->groups);
      if (spec.replaces(*c)) {
        const double alpha = spec.alpha_for(*c);
        const CoeffSpec coeff = spec.variant.kind == VariantKind::LinearConvLowRank
                                    ? CoeffSpec::low_rank(spec.variant.rank)
                                    : CoeffSpec::full();
        lc.kind = coeff.mode == CoeffMode::Full ? LayerKind::LinearConvFull
                                                : LayerKind::LinearConvLowRank;
        lc.params =
            linearconv_params(c->filters, c->kernel_h, c->kernel_w, ch, alpha, coeff, c->groups);
        lc.training_overhead_flops = composition_flops(c->filters, c->kernel_h, c->kernel_w, ch,
                                                       alpha, coeff, c->groups);
      } else {
        lc.kind = LayerKind::Conv;
        lc.params = conv_params(c->filters, c->kernel_h, c->kernel_w, ch, c->groups);
      }
      rep.layers.push_back(lc);
      if (c->batchnorm) {
        LayerCost bn;
        bn.layer = id + ".bn";
        bn.kind = LayerKind::BatchNorm;
        bn.params = 2 * count_t(c->filters);
        bn.inference_flops = 2 * spatial * c->filters;
        rep.layers.push_back(bn);
      }
    } else if (const auto* fc = std::get_if<FullyConnectedSpec>(&layer)) {
      LayerCost lc;
      lc.layer = "fc" + std::to_string(++fc_idx);
      lc.kind = LayerKind::FullyConnected;
      lc.params = count_t(r.input[0]) * fc->out + fc->out;
      lc.inference_flops = 2 * count_t(r.input[0]) * fc->out;
      rep.layers.push_back(lc);
    }
  }
  for (const auto& l : rep.layers) {
    rep.total_params += l.params;
    rep.total_inference_flops += l.inference_flops;
    rep.total_training_overhead_flops += l.training_overhead_flops;
  }
  return rep;
}

inline CostReport cost_report(ArchSpec spec, const Variant& variant) {
  spec.variant = variant;
  return cost_report(spec);
}

enum class FlopMode { Inference, Training };

/// Per-sample forward FLOPs. Training includes the composition overhead.
inline count_t flops(const ArchSpec& spec, FlopMode mode) {
  const CostReport r = cost_report(spec);
  return mode == FlopMode::Inference ? r.total_inference_flops : r.total_training_flops();
}

struct AlphaPoint {
  double alpha = 0;
  count_t params = 0;
  count_t training_flops = 0;
  count_t overhead_flops = 0;
};

/// Sweeps a global alpha over a LinearConvFull model. alpha = 1 is the
/// unregularized Conv model. Errors name the first infeasible layer.
inline std::vector<AlphaPoint> alpha_sweep(const ArchSpec& arch, const std::vector<double>& grid,
                                           CoeffSpec coeff = CoeffSpec::full()) {
  std::vector<AlphaPoint> out;
  for (double alpha : grid) {
    ArchSpec spec = arch;
    if (alpha == 1.0) {
      spec.variant = Variant::conv();
    } else if (coeff.mode == CoeffMode::Full) {
      spec.variant = Variant::linear(alpha);
    } else {
      spec.variant = Variant::low_rank(alpha, coeff.rank);
    }
    const CostReport r = cost_report(spec);
    out.push_back({alpha, r.total_params, r.total_training_flops(),
                   r.total_training_overhead_flops});
  }
  return out;
}

/// Count rounded to two decimals in millions, e.g. "0.40".
inline std::string millions(count_t n, int decimals = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << static_cast<double>(n) / 1e6;
  return os.str();
}

inline std::string billions(count_t n, int decimals = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << static_cast<double>(n) / 1e9;
  return os.str();
}

inline void write_text(const CostReport& r, std::ostream& os) {
  os << std::left << std::setw(12) << "layer" << std::setw(20) << "kind" << std::right
     << std::setw(12) << "params" << std::setw(16) << "inf_flops" << std::setw(16)
     << "train_flops" << '\n';
  for (const auto& l : r.layers) {
    os << std::left << std::setw(12) << l.layer << std::setw(20) << layer_kind_name(l.kind)
       << std::right << std::setw(12) << l.params << std::setw(16) << l.inference_flops
       << std::setw(16) << l.training_overhead_flops << '\n';
  }
  os << std::left << std::setw(32) << "total" << std::right << std::setw(12) << r.total_params
     << std::setw(16) << r.total_inference_flops << std::setw(16)
     << r.total_training_overhead_flops << '\n';
  os << "params " << millions(r.total_params) << "M, inference " << billions(r.total_inference_flops)
     << "B FLOPs, training " << billions(r.total_training_flops()) << "B FLOPs\n";
}

/// CSV columns: layer,kind,params,inf_flops,train_flops. train_flops is the
/// per-layer composition overhead; the last row carries the totals.
inline void write_csv(const CostReport& r, std::ostream& os) {
  os << "layer,kind,params,inf_flops,train_flops\n";
  for (const auto& l : r.layers) {
    os << l.layer << ',' << layer_kind_name(l.kind) << ',' << l.params << ',' << l.inference_flops
       << ',' << l.training_overhead_flops << '\n';
  }
  os << "total,," << r.total_params << ',' << r.total_inference_flops << ','
     << r.total_training_overhead_flops << '\n';
}

}  // namespace linearconv
