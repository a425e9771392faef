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
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "linearconv/arch.hpp"
#include "linearconv/errors.hpp"
#include "linearconv/linear_conv.hpp"
#include "linearconv/ops.hpp"
#include "linearconv/tensor.hpp"

namespace linearconv {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct PlainConv {
  Tensor<T> weight;  // [f x c x kh x kw]
  std::size_t stride = 1;
  std::size_t padding = 1;
};

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

template <typename T>
struct ConvBlock {
  std::size_t conv_index = 0;  // 1-based
  std::variant<PlainConv<T>, LinearConvParams<T>, FoldedConv<T>> conv;
  std::optional<BatchNormState<T>> bn;

  bool is_linear() const { return std::holds_alternative<LinearConvParams<T>>(conv); }

  /// The filter bank the block convolves with (composed for LinearConv).
  Tensor<T> weights() const {
    return std::visit(
        [](const auto& c) -> Tensor<T> {
          using C = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<C, PlainConv<T>>) return c.weight;
          else if constexpr (std::is_same_v<C, FoldedConv<T>>) return c.weights;
          else return compose_weights(c);
        },
        conv);
  }
};

template <typename T>
struct FcBlock {
  Tensor<T> weight;  // [out x in]
  Tensor<T> bias;    // [out]
};

struct PoolBlock {};
struct FlattenBlock {};

/// A network built from an ArchSpec. Conv layers become LinearConv layers
/// under LinearConv variants; everything else is untouched.
template <typename T>
class Model {
 public:
  using Block = std::variant<ConvBlock<T>, PoolBlock, FlattenBlock, FcBlock<T>>;

  static Model build(const ArchSpec& spec, std::uint64_t seed) {
    validate_arch(spec);
    std::mt19937_64 rng(seed);
    Model m;
    m.spec_ = spec;
    std::size_t fc_idx = 0;
    for (const auto& r : resolve_shapes(spec)) {
      const auto& layer = spec.layers[r.index];
      if (const auto* c = std::get_if<ConvLayerSpec>(&layer)) {
        if (c->groups != 1) {
          throw ConfigError(conv_layer_label(r, *c) +
                            ": grouped convolution is supported by accounting only");
        }
        ConvBlock<T> block;
        block.conv_index = r.conv_index;
        const std::size_t ch = r.input[0];
        if (spec.replaces(*c)) {
          LinearConvGeometry g{c->filters, ch,        c->kernel_h, c->kernel_w,
                               spec.alpha_for(*c), c->stride, c->padding};
          const CoeffMode mode = spec.variant.kind == VariantKind::LinearConvLowRank
                                     ? CoeffMode::LowRank
                                     : CoeffMode::Full;
          try {
            block.conv = init_linear_conv<T>(g, mode, spec.variant.rank, rng);
          } catch (const ConfigError& e) {
            throw ConfigError(conv_layer_label(r, *c) + ": " + e.what());
          }
        } else {
          const T bound = static_cast<T>(std::sqrt(6.0 / double(ch * c->kernel_h * c->kernel_w)));
          block.conv = PlainConv<T>{
              Tensor<T>::uniform({c->filters, ch, c->kernel_h, c->kernel_w}, -bound, bound, rng,
                                 true),
              c->stride, c->padding};
        }
        if (c->batchnorm) {
          block.bn = BatchNormState<T>{Tensor<T>::full({c->filters}, T(1), true),
                                       Tensor<T>::zeros({c->filters}, true),
                                       Tensor<T>::zeros({c->filters}),
                                       Tensor<T>::full({c->filters}, T(1))};
        }
        m.blocks_.emplace_back(std::move(block));
      } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
        m.blocks_.emplace_back(PoolBlock{});
      } else if (std::holds_alternative<FlattenSpec>(layer)) {
        m.blocks_.emplace_back(FlattenBlock{});
      } else {
        const auto& fc = std::get<FullyConnectedSpec>(layer);
        const std::size_t in = r.input[0];
        const T bound = static_cast<T>(1.0 / std::sqrt(double(in)));
        ++fc_idx;
        m.blocks_.emplace_back(
            FcBlock<T>{Tensor<T>::uniform({fc.out, in}, -bound, bound, rng, true),
                       Tensor<T>::uniform({fc.out}, -bound, bound, rng, true)});
      }
    }
    return m;
  }

  const ArchSpec& spec() const { return spec_; }
  bool folded() const { return folded_; }

  /// Maps [N x C x H x W] to [N x classes] logits. Training mode uses batch
  /// statistics in batchnorm and updates the running averages.
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    if (x.rank() != 4 || x.dim(1) != spec_.input_channels) {
      throw DimensionError("model expects [N x " + std::to_string(spec_.input_channels) +
                           " x H x W] input, got " + shape_str(x.shape()));
    }
    Tensor<T> h = x;
    for (auto& block : blocks_) {
      if (auto* c = std::get_if<ConvBlock<T>>(&block)) {
        h = std::visit(
            [&](const auto& conv) -> Tensor<T> {
              using C = std::decay_t<decltype(conv)>;
              if constexpr (std::is_same_v<C, PlainConv<T>>)
                return conv2d(h, conv.weight, conv.stride, conv.padding);
              else if constexpr (std::is_same_v<C, FoldedConv<T>>)
                return conv.forward(h);
              else
                return forward_train(conv, h);
            },
            c->conv);
        if (c->bn) {
          auto& bn = *c->bn;
          h = batchnorm2d(h, bn.gamma, bn.beta, bn.running_mean, bn.running_var, training);
        }
        h = relu(h);
      } else if (std::holds_alternative<PoolBlock>(block)) {
        h = maxpool2d(h);
      } else if (std::holds_alternative<FlattenBlock>(block)) {
        h = flatten(h);
      } else {
        const auto& fc = std::get<FcBlock<T>>(block);
        h = linear(h, fc.weight, fc.bias);
      }
    }
    return h;
  }

  /// Learnable tensors with stable names, in layer order.
  std::vector<NamedTensor<T>> parameters() const {
    std::vector<NamedTensor<T>> out;
    std::size_t fc_idx = 0;
    for (const auto& block : blocks_) {
      if (const auto* c = std::get_if<ConvBlock<T>>(&block)) {
        const std::string p = "conv" + std::to_string(c->conv_index);
        if (const auto* pc = std::get_if<PlainConv<T>>(&c->conv)) {
          out.push_back({p + ".weight", pc->weight});
        } else if (const auto* lc = std::get_if<LinearConvParams<T>>(&c->conv)) {
          out.push_back({p + ".primary", lc->primary});
          if (const auto* full = std::get_if<FullCoefficients<T>>(&lc->coefficients)) {
            out.push_back({p + ".coeff", full->a});
          } else {
            const auto& lr = std::get<LowRankCoefficients<T>>(lc->coefficients);
            out.push_back({p + ".coeff1", lr.a1});
            out.push_back({p + ".coeff2", lr.a2});
          }
        } else {
          out.push_back({p + ".weight", std::get<FoldedConv<T>>(c->conv).weights});
        }
        if (c->bn) {
          out.push_back({p + ".bn.gamma", c->bn->gamma});
          out.push_back({p + ".bn.beta", c->bn->beta});
        }
      } else if (const auto* fc = std::get_if<FcBlock<T>>(&block)) {
        const std::string p = "fc" + std::to_string(++fc_idx);
        out.push_back({p + ".weight", fc->weight});
        out.push_back({p + ".bias", fc->bias});
      }
    }
    return out;
  }

  /// Non-learnable state (batchnorm running statistics).
  std::vector<NamedTensor<T>> buffers() const {
    std::vector<NamedTensor<T>> out;
    for (const auto& block : blocks_) {
      if (const auto* c = std::get_if<ConvBlock<T>>(&block); c && c->bn) {
        const std::string p = "conv" + std::to_string(c->conv_index);
        out.push_back({p + ".bn.running_mean", c->bn->running_mean});
        out.push_back({p + ".bn.running_var", c->bn->running_var});
      }
    }
    return out;
  }

  std::vector<NamedTensor<T>> state() const {
    auto out = parameters();
    for (auto& b : buffers()) out.push_back(std::move(b));
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  /// Primary filter banks of every LinearConv layer, for the regularizer.
  std::vector<Tensor<T>> primary_weights() const {
    std::vector<Tensor<T>> out;
    for (const auto& block : blocks_)
      if (const auto* c = std::get_if<ConvBlock<T>>(&block))
        if (const auto* lc = std::get_if<LinearConvParams<T>>(&c->conv)) out.push_back(lc->primary);
    return out;
  }

  std::size_t conv_layer_count() const {
    std::size_t n = 0;
    for (const auto& block : blocks_) n += std::holds_alternative<ConvBlock<T>>(block);
    return n;
  }

  /// 1-based conv layer access.
  ConvBlock<T>& conv_layer(std::size_t index) {
    for (auto& block : blocks_)
      if (auto* c = std::get_if<ConvBlock<T>>(&block); c && c->conv_index == index) return *c;
    throw ConfigError("conv layer " + std::to_string(index) + " out of range (model has " +
                      std::to_string(conv_layer_count()) + ")");
  }
  const ConvBlock<T>& conv_layer(std::size_t index) const {
    return const_cast<Model*>(this)->conv_layer(index);
  }

  /// Copy with every LinearConv layer replaced by its folded filter bank.
  /// Plain convolutions, batchnorm, and fc tensors are deep-copied.
  Model fold_layers() const {
    Model m;
    m.spec_ = spec_;
    m.folded_ = true;
    for (const auto& block : blocks_) {
      if (const auto* c = std::get_if<ConvBlock<T>>(&block)) {
        ConvBlock<T> nb;
        nb.conv_index = c->conv_index;
        if (const auto* lc = std::get_if<LinearConvParams<T>>(&c->conv)) {
          nb.conv = fold(*lc);
        } else if (const auto* pc = std::get_if<PlainConv<T>>(&c->conv)) {
          nb.conv = PlainConv<T>{pc->weight.clone(false), pc->stride, pc->padding};
        } else {
          const auto& fc = std::get<FoldedConv<T>>(c->conv);
          nb.conv = FoldedConv<T>{fc.weights.clone(false), fc.stride, fc.padding};
        }
        if (c->bn) {
          nb.bn = BatchNormState<T>{c->bn->gamma.clone(false), c->bn->beta.clone(false),
                                    c->bn->running_mean.clone(false),
                                    c->bn->running_var.clone(false)};
        }
        m.blocks_.emplace_back(std::move(nb));
      } else if (const auto* fc = std::get_if<FcBlock<T>>(&block)) {
        m.blocks_.emplace_back(FcBlock<T>{fc->weight.clone(false), fc->bias.clone(false)});
      } else {
        m.blocks_.push_back(block);
      }
    }
    return m;
  }

  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  Model() = default;

  ArchSpec spec_;
  bool folded_ = false;
  std::vector<Block> blocks_;
};

/// Number of parameters the folded model would hold: f*c*kh*kw per conv.
inline std::size_t folded_parameter_count(const ArchSpec& spec) {
  ArchSpec s = spec;
  s.variant = Variant::conv();
  std::size_t n = 0;
  for (const auto& r : resolve_shapes(s)) {
    if (const auto* c = std::get_if<ConvLayerSpec>(&s.layers[r.index])) {
      n += c->filters * r.input[0] * c->kernel_h * c->kernel_w + (c->batchnorm ? 2 * c->filters : 0);
    } else if (const auto* fc = std::get_if<FullyConnectedSpec>(&s.layers[r.index])) {
      n += r.input[0] * fc->out + fc->out;
    }
  }
  return n;
}

}  // namespace linearconv
