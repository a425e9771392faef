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

// Checkpoint binary format. All integers and payloads are little-endian.
//
//   "LCONVCKP"               8 bytes magic
//   u32 version              currently 1
//   u32 flags                bit 0: model is folded
//   u64 epoch                completed epochs
//   u64 adam_step
//   str arch                 ArchSpec text (u64 length + bytes)
//   str config               TrainConfig text
//   str rng                  mt19937_64 state text, may be empty
//   u32 tensor_count
//   tensor_count times:
//     str name
//     u32 ndim, ndim x u64 dims
//     numel x f32 payload
//
// Model tensors use the names of Model::state(); Adam moments are stored as
// "adam.m/<param>" and "adam.v/<param>".

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "linearconv/arch.hpp"
#include "linearconv/data.hpp"
#include "linearconv/errors.hpp"
#include "linearconv/model.hpp"
#include "linearconv/optim.hpp"
#include "linearconv/train.hpp"

namespace linearconv {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

inline constexpr char kCheckpointMagic[8] = {'L', 'C', 'O', 'N', 'V', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  bool folded = false;
  std::uint64_t epoch = 0;
  std::uint64_t adam_step = 0;
  ArchSpec arch;
  TrainConfig config;
  std::string rng_state;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <typename T>
StoredTensor store(const std::string& name, const Shape& shape, std::span<const T> values) {
  StoredTensor s{name, shape, std::vector<float>(values.size())};
  for (std::size_t i = 0; i < values.size(); ++i) s.values[i] = static_cast<float>(values[i]);
  return s;
}

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& os) : os_(os) {}
  template <typename U>
  void pod(U v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(U));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void floats(const std::vector<float>& v) {
    os_.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
  }

 private:
  std::ostream& os_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  template <typename U>
  U pod(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string str(const char* what) {
    const auto n = pod<std::uint64_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats(std::size_t n, const char* what) {
    if (n > (bytes_.size() - pos_) / sizeof(float)) truncated(what);
    std::vector<float> v(n);
    std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return v;
  }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::uint64_t n, const char* what) {
    if (n > bytes_.size() - pos_) truncated(what);
  }
  [[noreturn]] void truncated(const char* what) const {
    throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace detail

/// Snapshot of a model, its training config, and optionally the optimizer
/// and data-order RNG.
template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, const TrainConfig& config, std::uint64_t epoch,
                           const Adam<T>* adam = nullptr, const std::mt19937_64* rng = nullptr) {
  Checkpoint ck;
  ck.folded = model.folded();
  ck.epoch = epoch;
  ck.arch = model.spec();
  ck.config = config;
  if (rng) ck.rng_state = detail::rng_text(*rng);
  for (const auto& nt : model.state())
    ck.tensors.push_back(detail::store<T>(nt.name, nt.tensor.shape(), nt.tensor.data()));
  if (adam) {
    ck.adam_step = adam->steps();
    const auto params = model.parameters();
    if (params.size() != adam->params().size())
      throw ConfigError("optimizer does not match model parameters");
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Shape& shape = params[k].tensor.shape();
      ck.tensors.push_back(detail::store<T>("adam.m/" + params[k].name, shape,
                                            adam->first_moments()[k]));
      ck.tensors.push_back(detail::store<T>("adam.v/" + params[k].name, shape,
                                            adam->second_moments()[k]));
    }
  }
  return ck;
}

inline void write_checkpoint(const Checkpoint& ck, std::ostream& os) {
  detail::ByteWriter w(os);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.pod<std::uint32_t>(ck.version);
  w.pod<std::uint32_t>(ck.folded ? 1u : 0u);
  w.pod<std::uint64_t>(ck.epoch);
  w.pod<std::uint64_t>(ck.adam_step);
  w.str(to_text(ck.arch));
  w.str(to_text(ck.config));
  w.str(ck.rng_state);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    w.str(t.name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.pod<std::uint64_t>(d);
    w.floats(t.values);
  }
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  write_checkpoint(ck, os);
  if (!os) throw ConfigError("write to '" + path + "' failed");
}

inline Checkpoint read_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < sizeof(kCheckpointMagic))
    throw FormatError("checkpoint truncated while reading magic", 0);
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw FormatError("not a checkpoint (bad magic)", 0);
  for (std::size_t i = 0; i < sizeof(kCheckpointMagic); ++i) r.pod<char>("magic");
  Checkpoint ck;
  const std::size_t version_at = r.offset();
  ck.version = r.pod<std::uint32_t>("version");
  if (ck.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(ck.version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")",
                      version_at);
  }
  ck.folded = (r.pod<std::uint32_t>("flags") & 1u) != 0;
  ck.epoch = r.pod<std::uint64_t>("epoch");
  ck.adam_step = r.pod<std::uint64_t>("adam step");
  const std::size_t arch_at = r.offset();
  try {
    ck.arch = parse_arch_text(r.str("arch"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint arch block: ") + e.what(), arch_at);
  }
  const std::size_t config_at = r.offset();
  try {
    ck.config = parse_train_config(r.str("config"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config block: ") + e.what(), config_at);
  }
  ck.rng_state = r.str("rng state");
  const auto count = r.pod<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.str("tensor name");
    const auto ndim = r.pod<std::uint32_t>("tensor rank");
    if (ndim > 8) throw FormatError("tensor '" + t.name + "' has implausible rank", r.offset());
    for (std::uint32_t d = 0; d < ndim; ++d) t.shape.push_back(r.pod<std::uint64_t>("tensor dims"));
    t.values = r.floats(shape_numel(t.shape), "tensor payload");
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = detail::read_file(path);
  return read_checkpoint(bytes);
}

namespace detail {

template <typename T>
void assign(Tensor<T>& dst, const StoredTensor& src) {
  if (dst.shape() != src.shape) {
    throw ConfigError("checkpoint tensor '" + src.name + "' has shape " + shape_str(src.shape) +
                      ", model expects " + shape_str(dst.shape()));
  }
  auto out = dst.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(src.values[i]);
}

}  // namespace detail

/// Rebuilds the model stored in `ck`. When `expected` is given, the stored
/// ArchSpec must equal it.
template <typename T>
Model<T> restore_model(const Checkpoint& ck, const std::optional<ArchSpec>& expected = {}) {
  if (expected && !(*expected == ck.arch)) {
    throw ConfigError("checkpoint architecture '" + ck.arch.name +
                      "' does not match the requested architecture '" + expected->name + "'");
  }
  Model<T> model = Model<T>::build(ck.arch, 0);
  if (ck.folded) model = model.fold_layers();
  for (auto& nt : model.state()) {
    const StoredTensor* src = ck.find(nt.name);
    if (!src) throw ConfigError("checkpoint is missing tensor '" + nt.name + "'");
    detail::assign(nt.tensor, *src);
  }
  return model;
}

/// Restores Adam moments and step count for `model`'s parameters.
template <typename T>
void restore_optimizer(const Checkpoint& ck, const Model<T>& model, Adam<T>& adam) {
  const auto params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (auto [prefix, moments] : {std::pair{"adam.m/", &adam.first_moments()},
                                   std::pair{"adam.v/", &adam.second_moments()}}) {
      const std::string name = prefix + params[k].name;
      const StoredTensor* src = ck.find(name);
      if (!src) throw ConfigError("checkpoint is missing tensor '" + name + "'");
      if (src->shape != params[k].tensor.shape())
        throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(src->shape));
      auto& m = (*moments)[k];
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(src->values[i]);
    }
  }
  adam.set_steps(ck.adam_step);
}

inline void restore_rng(const Checkpoint& ck, std::mt19937_64& rng) {
  if (ck.rng_state.empty()) return;
  std::istringstream is(ck.rng_state);
  is >> rng;
  if (!is) throw FormatError("checkpoint rng state is malformed", 0);
}

}  // namespace linearconv
