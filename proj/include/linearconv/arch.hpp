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

// Declarative network descriptions shared by the model builder and the
// cost accounting, plus a line-oriented text format for them:
//
//   name base
//   input channels=3 height=32 width=32
//   variant linear alpha=0.5            (conv | linear | linear-lowrank)
//   regularized true
//   conv filters=32 kernel=3x3 stride=1 padding=1 batchnorm=true
//   maxpool
//   flatten
//   fc out=10
//
// Optional conv keys: groups=G (accounting only), alpha=R (per-layer
// override), replace=false (keep a plain convolution under LinearConv
// variants). Blank lines and text after '#' are ignored.

#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "linearconv/errors.hpp"
#include "linearconv/linear_conv.hpp"

namespace linearconv {

enum class VariantKind { Conv, LinearConvFull, LinearConvLowRank };

struct Variant {
  VariantKind kind = VariantKind::Conv;
  double alpha = 0.5;
  std::size_t rank = 10;

  static Variant conv() { return {}; }
  static Variant linear(double alpha) { return {VariantKind::LinearConvFull, alpha, 10}; }
  static Variant low_rank(double alpha, std::size_t rank) {
    return {VariantKind::LinearConvLowRank, alpha, rank};
  }

  bool operator==(const Variant&) const = default;
};

inline std::string variant_name(VariantKind k) {
  switch (k) {
    case VariantKind::Conv: return "conv";
    case VariantKind::LinearConvFull: return "linear";
    case VariantKind::LinearConvLowRank: return "linear-lowrank";
  }
  return "conv";
}

inline VariantKind parse_variant_name(const std::string& s) {
  if (s == "conv") return VariantKind::Conv;
  if (s == "linear") return VariantKind::LinearConvFull;
  if (s == "linear-lowrank") return VariantKind::LinearConvLowRank;
  throw ConfigError("unknown variant '" + s + "' (expected conv, linear or linear-lowrank)");
}

struct ConvLayerSpec {
  std::size_t filters = 0;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool batchnorm = true;
  std::size_t groups = 1;
  std::optional<double> alpha;  // per-layer override of the variant's alpha
  bool replace = true;          // false keeps a plain Conv under LinearConv variants

  bool operator==(const ConvLayerSpec&) const = default;
};

struct MaxPoolSpec {
  bool operator==(const MaxPoolSpec&) const = default;
};
struct FlattenSpec {
  bool operator==(const FlattenSpec&) const = default;
};
struct FullyConnectedSpec {
  std::size_t out = 0;

  bool operator==(const FullyConnectedSpec&) const = default;
};

using LayerSpec = std::variant<ConvLayerSpec, MaxPoolSpec, FlattenSpec, FullyConnectedSpec>;

struct ArchSpec {
  std::string name = "custom";
  std::size_t input_channels = 3;
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  std::vector<LayerSpec> layers;
  Variant variant;
  bool regularized = true;

  bool replaces(const ConvLayerSpec& c) const {
    return variant.kind != VariantKind::Conv && c.replace;
  }
  double alpha_for(const ConvLayerSpec& c) const { return c.alpha.value_or(variant.alpha); }

  std::size_t conv_layer_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += std::holds_alternative<ConvLayerSpec>(l);
    return n;
  }

  bool operator==(const ArchSpec&) const = default;
};

namespace detail {

inline ConvLayerSpec conv3x3(std::size_t f) {
  ConvLayerSpec c;
  c.filters = f;
  return c;
}

}  // namespace detail

/// Four conv(3x3)+BN+ReLU+maxpool stages (32, 64, 128, 256) and a 10-way fc.
inline ArchSpec base_arch(std::size_t input_channels = 3, Variant variant = {}) {
  ArchSpec a;
  a.name = "base";
  a.input_channels = input_channels;
  a.variant = variant;
  for (std::size_t f : {32u, 64u, 128u, 256u}) {
    a.layers.emplace_back(detail::conv3x3(f));
    a.layers.emplace_back(MaxPoolSpec{});
  }
  a.layers.emplace_back(FlattenSpec{});
  a.layers.emplace_back(FullyConnectedSpec{10});
  return a;
}

/// VGG11 for 32x32 inputs: 64 M 128 M 256 256 M 512 512 M 512 512 M, fc 10.
inline ArchSpec vgg11_arch(std::size_t input_channels = 3, Variant variant = {}) {
  ArchSpec a;
  a.name = "vgg11";
  a.input_channels = input_channels;
  a.variant = variant;
  const std::vector<int> plan{64, -1, 128, -1, 256, 256, -1, 512, 512, -1, 512, 512, -1};
  for (int f : plan) {
    if (f < 0) a.layers.emplace_back(MaxPoolSpec{});
    else a.layers.emplace_back(detail::conv3x3(static_cast<std::size_t>(f)));
  }
  a.layers.emplace_back(FlattenSpec{});
  a.layers.emplace_back(FullyConnectedSpec{10});
  return a;
}

/// Per-layer geometry resolved by shape propagation.
struct ResolvedLayer {
  std::size_t index = 0;       // position in ArchSpec::layers
  std::size_t conv_index = 0;  // 1-based among conv layers, 0 otherwise
  Shape input;                 // [C, H, W] or [features]
  Shape output;
};

/// Propagates [C, H, W] through the layer list. Throws GeometryError when an
/// extent stops being a positive integer, ConfigError for inconsistent
/// layer ordering.
inline std::vector<ResolvedLayer> resolve_shapes(const ArchSpec& spec) {
  std::vector<ResolvedLayer> out;
  Shape cur{spec.input_channels, spec.input_height, spec.input_width};
  if (spec.input_channels == 0 || spec.input_height == 0 || spec.input_width == 0) {
    throw GeometryError("architecture input extents must be positive");
  }
  std::size_t conv_idx = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    ResolvedLayer r;
    r.index = i;
    r.input = cur;
    const auto& layer = spec.layers[i];
    if (const auto* c = std::get_if<ConvLayerSpec>(&layer)) {
      if (cur.size() != 3) throw ConfigError("layer " + std::to_string(i) + ": conv after flatten");
      if (c->filters == 0) throw ConfigError("layer " + std::to_string(i) + ": conv with 0 filters");
      r.conv_index = ++conv_idx;
      const std::size_t oh = conv_out_extent(cur[1], c->kernel_h, c->stride, c->padding, "height");
      const std::size_t ow = conv_out_extent(cur[2], c->kernel_w, c->stride, c->padding, "width");
      cur = {c->filters, oh, ow};
    } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
      if (cur.size() != 3 || cur[1] % 2 || cur[2] % 2) {
        throw GeometryError("layer " + std::to_string(i) + ": maxpool on extent " +
                            shape_str(cur) + " not divisible by 2");
      }
      cur = {cur[0], cur[1] / 2, cur[2] / 2};
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      cur = {shape_numel(cur)};
    } else {
      const auto& fc = std::get<FullyConnectedSpec>(layer);
      if (cur.size() != 1) {
        throw ConfigError("layer " + std::to_string(i) + ": fc needs a flatten before it");
      }
      if (fc.out == 0) throw ConfigError("layer " + std::to_string(i) + ": fc with 0 outputs");
      cur = {fc.out};
    }
    r.output = cur;
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string conv_layer_label(const ResolvedLayer& r, const ConvLayerSpec& c) {
  return "conv layer " + std::to_string(r.conv_index) + " (" + std::to_string(c.filters) +
         " filters)";
}

/// Full validation: geometry, alpha integrality and rank limits on every
/// replaced layer, group divisibility. Errors name the offending layer.
inline void validate_arch(const ArchSpec& spec) {
  const auto resolved = resolve_shapes(spec);
  for (const auto& r : resolved) {
    const auto* c = std::get_if<ConvLayerSpec>(&spec.layers[r.index]);
    if (!c) continue;
    const std::size_t channels = r.input[0];
    if (c->groups == 0 || channels % c->groups || c->filters % c->groups) {
      throw ConfigError(conv_layer_label(r, *c) + ": groups=" + std::to_string(c->groups) +
                        " must divide both " + std::to_string(channels) + " channels and " +
                        std::to_string(c->filters) + " filters");
    }
    if (!spec.replaces(*c)) continue;
    try {
      const FilterSplit split = split_filters(c->filters, spec.alpha_for(*c));
      if (spec.variant.kind == VariantKind::LinearConvLowRank) check_rank(split, spec.variant.rank);
    } catch (const ConfigError& e) {
      throw ConfigError(conv_layer_label(r, *c) + ": " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Text format

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(where + ": expected boolean, got '" + v + "'");
}

inline std::size_t parse_size(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected non-negative integer, got '" + v + "'");
  }
}

inline double parse_real(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected number, got '" + v + "'");
  }
}

}  // namespace detail

inline std::string to_text(const ArchSpec& a) {
  std::ostringstream os;
  os << "name " << a.name << '\n';
  os << "input channels=" << a.input_channels << " height=" << a.input_height
     << " width=" << a.input_width << '\n';
  os << "variant " << variant_name(a.variant.kind);
  if (a.variant.kind != VariantKind::Conv) os << " alpha=" << detail::format_double(a.variant.alpha);
  if (a.variant.kind == VariantKind::LinearConvLowRank) os << " rank=" << a.variant.rank;
  os << '\n';
  os << "regularized " << (a.regularized ? "true" : "false") << '\n';
  for (const auto& l : a.layers) {
    if (const auto* c = std::get_if<ConvLayerSpec>(&l)) {
      os << "conv filters=" << c->filters << " kernel=" << c->kernel_h << 'x' << c->kernel_w
         << " stride=" << c->stride << " padding=" << c->padding
         << " batchnorm=" << (c->batchnorm ? "true" : "false");
      if (c->groups != 1) os << " groups=" << c->groups;
      if (c->alpha) os << " alpha=" << detail::format_double(*c->alpha);
      if (!c->replace) os << " replace=false";
      os << '\n';
    } else if (std::holds_alternative<MaxPoolSpec>(l)) {
      os << "maxpool\n";
    } else if (std::holds_alternative<FlattenSpec>(l)) {
      os << "flatten\n";
    } else {
      os << "fc out=" << std::get<FullyConnectedSpec>(l).out << '\n';
    }
  }
  return os.str();
}

inline ArchSpec parse_arch_text(const std::string& text) {
  ArchSpec a;
  a.layers.clear();
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string head;
    if (!(ls >> head)) continue;
    const std::string where = "arch line " + std::to_string(lineno);
    std::vector<std::string> words;
    std::map<std::string, std::string> kv;
    for (std::string tok; ls >> tok;) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) {
        words.push_back(tok);
      } else {
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
      }
    }
    auto take = [&](const std::string& key) -> std::optional<std::string> {
      auto it = kv.find(key);
      if (it == kv.end()) return std::nullopt;
      std::string v = it->second;
      kv.erase(it);
      return v;
    };
    auto finish = [&] {
      if (!kv.empty()) throw ConfigError(where + ": unknown key '" + kv.begin()->first + "'");
    };

    if (head == "name") {
      if (words.size() != 1) throw ConfigError(where + ": name takes one word");
      a.name = words[0];
    } else if (head == "input") {
      if (auto v = take("channels")) a.input_channels = detail::parse_size(*v, where);
      if (auto v = take("height")) a.input_height = detail::parse_size(*v, where);
      if (auto v = take("width")) a.input_width = detail::parse_size(*v, where);
      finish();
    } else if (head == "variant") {
      if (words.size() != 1) throw ConfigError(where + ": variant takes one kind");
      a.variant.kind = parse_variant_name(words[0]);
      if (auto v = take("alpha")) a.variant.alpha = detail::parse_real(*v, where);
      if (auto v = take("rank")) a.variant.rank = detail::parse_size(*v, where);
      finish();
    } else if (head == "regularized") {
      if (words.size() != 1) throw ConfigError(where + ": regularized takes true/false");
      a.regularized = detail::parse_bool(words[0], where);
    } else if (head == "conv") {
      ConvLayerSpec c;
      auto f = take("filters");
      if (!f) throw ConfigError(where + ": conv needs filters=");
      c.filters = detail::parse_size(*f, where);
      if (auto v = take("kernel")) {
        const auto x = v->find('x');
        if (x == std::string::npos) {
          c.kernel_h = c.kernel_w = detail::parse_size(*v, where);
        } else {
          c.kernel_h = detail::parse_size(v->substr(0, x), where);
          c.kernel_w = detail::parse_size(v->substr(x + 1), where);
        }
      }
      if (auto v = take("stride")) c.stride = detail::parse_size(*v, where);
      if (auto v = take("padding")) c.padding = detail::parse_size(*v, where);
      if (auto v = take("batchnorm")) c.batchnorm = detail::parse_bool(*v, where);
      if (auto v = take("groups")) c.groups = detail::parse_size(*v, where);
      if (auto v = take("alpha")) c.alpha = detail::parse_real(*v, where);
      if (auto v = take("replace")) c.replace = detail::parse_bool(*v, where);
      finish();
      a.layers.emplace_back(c);
    } else if (head == "maxpool") {
      finish();
      a.layers.emplace_back(MaxPoolSpec{});
    } else if (head == "flatten") {
      finish();
      a.layers.emplace_back(FlattenSpec{});
    } else if (head == "fc") {
      auto v = take("out");
      if (!v) throw ConfigError(where + ": fc needs out=");
      finish();
      a.layers.emplace_back(FullyConnectedSpec{detail::parse_size(*v, where)});
    } else {
      throw ConfigError(where + ": unknown directive '" + head + "'");
    }
  }
  return a;
}

inline ArchSpec load_arch_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open architecture file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_arch_text(ss.str());
}

}  // namespace linearconv
