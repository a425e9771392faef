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

// Dataset ingestion: IDX (MNIST, Fashion-MNIST) and CIFAR-10 binary batches.
// Every image is stored as 8-bit pixels at 32x32 and normalized per channel
// on the way out, with statistics taken from the training split.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "linearconv/errors.hpp"
#include "linearconv/tensor.hpp"

namespace linearconv {

enum class DatasetKind { Mnist, Fashion, Cifar10 };
enum class Split { Train, Test };

inline DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "mnist") return DatasetKind::Mnist;
  if (s == "fashion") return DatasetKind::Fashion;
  if (s == "cifar10") return DatasetKind::Cifar10;
  throw ConfigError("unknown dataset '" + s + "' (expected mnist, fashion or cifar10)");
}

inline std::string dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::Mnist: return "mnist";
    case DatasetKind::Fashion: return "fashion";
    case DatasetKind::Cifar10: return "cifar10";
  }
  return "mnist";
}

struct NormStats {
  std::vector<double> mean;  // per channel, on the [0, 1] pixel scale
  std::vector<double> stddev;
};

constexpr std::size_t kImageSize = 32;
constexpr std::size_t kNumClasses = 10;

struct LabeledDataset {
  DatasetKind kind = DatasetKind::Mnist;
  Split split = Split::Train;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;  // N x C x 32 x 32
  std::vector<int> labels;
  NormStats stats;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return channels * kImageSize * kImageSize; }

  /// Normalized images for the given indices as [B x C x 32 x 32].
  template <typename T>
  Tensor<T> images(std::span<const std::size_t> indices) const {
    const std::size_t per = image_numel();
    const std::size_t plane = kImageSize * kImageSize;
    std::vector<T> out(indices.size() * per);
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const std::uint8_t* src = pixels.data() + indices[b] * per;
      T* dst = out.data() + b * per;
      for (std::size_t c = 0; c < channels; ++c) {
        const double m = stats.mean[c];
        const double inv = 1.0 / stats.stddev[c];
        for (std::size_t i = 0; i < plane; ++i)
          dst[c * plane + i] = static_cast<T>((src[c * plane + i] / 255.0 - m) * inv);
      }
    }
    return Tensor<T>({indices.size(), channels, kImageSize, kImageSize}, std::move(out));
  }

  std::vector<int> labels_at(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels[i]);
    return out;
  }
};

/// Per-channel mean and population std of pixel/255 over the whole set.
inline NormStats compute_stats(const LabeledDataset& d) {
  NormStats s;
  const std::size_t plane = kImageSize * kImageSize;
  for (std::size_t c = 0; c < d.channels; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t n = 0; n < d.size(); ++n) {
      const std::uint8_t* p = d.pixels.data() + (n * d.channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = p[i] / 255.0;
        sum += v;
        sq += v * v;
      }
    }
    const double count = static_cast<double>(d.size() * plane);
    const double mean = count > 0 ? sum / count : 0.0;
    const double var = count > 0 ? std::max(sq / count - mean * mean, 0.0) : 0.0;
    s.mean.push_back(mean);
    s.stddev.push_back(var > 0 ? std::sqrt(var) : 1.0);
  }
  return s;
}

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'", 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset,
                               const std::string& what) {
  if (offset + 4 > bytes.size()) throw FormatError(what + ": truncated header", bytes.size());
  return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
         (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

}  // namespace detail

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::span<const std::uint8_t> payload;
};

/// Parses a big-endian IDX3 image file held in memory.
inline IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = detail::read_be32(bytes, 0, "IDX images");
  if (magic != kIdxImageMagic) {
    throw FormatError("IDX images: bad magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }() + ", expected 0x00000803", 0);
  }
  IdxImages im;
  im.count = detail::read_be32(bytes, 4, "IDX images");
  im.rows = detail::read_be32(bytes, 8, "IDX images");
  im.cols = detail::read_be32(bytes, 12, "IDX images");
  if (im.rows == 0 || im.cols == 0 || im.rows > kImageSize || im.cols > kImageSize) {
    throw FormatError("IDX images: unsupported image size " + std::to_string(im.rows) + "x" +
                          std::to_string(im.cols),
                      8);
  }
  const std::size_t need = 16 + im.count * im.rows * im.cols;
  if (bytes.size() < need) {
    throw FormatError("IDX images: payload truncated, expected " + std::to_string(need) +
                          " bytes, file has " + std::to_string(bytes.size()),
                      bytes.size());
  }
  im.payload = bytes.subspan(16, im.count * im.rows * im.cols);
  return im;
}

inline std::span<const std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = detail::read_be32(bytes, 0, "IDX labels");
  if (magic != kIdxLabelMagic) {
    throw FormatError("IDX labels: bad magic, expected 0x00000801", 0);
  }
  const std::size_t count = detail::read_be32(bytes, 4, "IDX labels");
  if (bytes.size() < 8 + count) {
    throw FormatError("IDX labels: payload truncated, expected " + std::to_string(8 + count) +
                          " bytes, file has " + std::to_string(bytes.size()),
                      bytes.size());
  }
  return bytes.subspan(8, count);
}

/// Builds a single-channel dataset from in-memory IDX image/label files,
/// zero-padding each image to 32x32 (centered). Statistics come from this
/// set unless `stats` is given (use the train split's for the test split).
inline LabeledDataset make_idx_dataset(std::span<const std::uint8_t> image_bytes,
                                       std::span<const std::uint8_t> label_bytes, Split split,
                                       DatasetKind kind = DatasetKind::Mnist,
                                       std::optional<NormStats> stats = std::nullopt) {
  const IdxImages im = parse_idx_images(image_bytes);
  const auto labels = parse_idx_labels(label_bytes);
  if (labels.size() != im.count) {
    throw FormatError("IDX: " + std::to_string(im.count) + " images but " +
                          std::to_string(labels.size()) + " labels",
                      4);
  }
  LabeledDataset d;
  d.kind = kind;
  d.split = split;
  d.channels = 1;
  d.pixels.assign(im.count * kImageSize * kImageSize, 0);
  const std::size_t top = (kImageSize - im.rows) / 2, left = (kImageSize - im.cols) / 2;
  for (std::size_t n = 0; n < im.count; ++n) {
    const std::uint8_t* src = im.payload.data() + n * im.rows * im.cols;
    std::uint8_t* dst = d.pixels.data() + n * kImageSize * kImageSize;
    for (std::size_t r = 0; r < im.rows; ++r)
      std::copy_n(src + r * im.cols, im.cols, dst + (top + r) * kImageSize + left);
  }
  d.labels.reserve(im.count);
  for (std::size_t n = 0; n < im.count; ++n) {
    if (labels[n] >= kNumClasses) {
      throw FormatError("IDX labels: class " + std::to_string(labels[n]) + " out of range",
                        8 + n);
    }
    d.labels.push_back(labels[n]);
  }
  d.stats = stats ? *stats : compute_stats(d);
  return d;
}

inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                               Split split, DatasetKind kind = DatasetKind::Mnist,
                               std::optional<NormStats> stats = std::nullopt) {
  const auto images = detail::read_file(images_path);
  const auto labels = detail::read_file(labels_path);
  return make_idx_dataset(images, labels, split, kind, std::move(stats));
}

constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

/// Appends CIFAR-10 binary records (label byte + R, G, B planes) to `d`.
inline void append_cifar10(LabeledDataset& d, std::span<const std::uint8_t> bytes,
                           std::uint64_t base_offset = 0) {
  if (bytes.size() % kCifarRecord != 0) {
    throw FormatError("CIFAR-10: length " + std::to_string(bytes.size()) +
                          " is not a multiple of 3073",
                      base_offset + bytes.size() - bytes.size() % kCifarRecord);
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] >= kNumClasses) {
      throw FormatError("CIFAR-10: label " + std::to_string(rec[0]) + " out of range 0-9",
                        base_offset + i * kCifarRecord);
    }
    d.labels.push_back(rec[0]);
    d.pixels.insert(d.pixels.end(), rec + 1, rec + kCifarRecord);
  }
}

inline LabeledDataset make_cifar10_dataset(const std::vector<std::span<const std::uint8_t>>& files,
                                           Split split,
                                           std::optional<NormStats> stats = std::nullopt) {
  LabeledDataset d;
  d.kind = DatasetKind::Cifar10;
  d.split = split;
  d.channels = 3;
  for (const auto& f : files) append_cifar10(d, f);
  d.stats = stats ? *stats : compute_stats(d);
  return d;
}

inline LabeledDataset load_cifar10(const std::vector<std::string>& paths, Split split,
                                   std::optional<NormStats> stats = std::nullopt) {
  std::vector<std::vector<std::uint8_t>> blobs;
  for (const auto& p : paths) blobs.push_back(detail::read_file(p));
  std::vector<std::span<const std::uint8_t>> views(blobs.begin(), blobs.end());
  return make_cifar10_dataset(views, split, std::move(stats));
}

/// Train and test splits of a dataset directory with the standard file names.
struct DatasetPair {
  LabeledDataset train;
  LabeledDataset test;
};

inline DatasetPair load_dataset_dir(DatasetKind kind, const std::string& dir) {
  const std::string root = dir.empty() || dir.back() == '/' ? dir : dir + "/";
  if (kind == DatasetKind::Cifar10) {
    std::vector<std::string> train_files;
    for (int i = 1; i <= 5; ++i) train_files.push_back(root + "data_batch_" + std::to_string(i) + ".bin");
    auto train = load_cifar10(train_files, Split::Train);
    auto test = load_cifar10({root + "test_batch.bin"}, Split::Test, train.stats);
    return {std::move(train), std::move(test)};
  }
  auto train = load_idx(root + "train-images-idx3-ubyte", root + "train-labels-idx1-ubyte",
                        Split::Train, kind);
  auto test = load_idx(root + "t10k-images-idx3-ubyte", root + "t10k-labels-idx1-ubyte",
                       Split::Test, kind, train.stats);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Augmentation

constexpr std::size_t kCropPad = 4;

struct CropFlip {
  std::size_t offset_y = kCropPad;  // in [0, 2 * pad]
  std::size_t offset_x = kCropPad;
  bool flip = false;
};

/// Pads one [C x 32 x 32] image by kCropPad zeros (in normalized space),
/// crops 32x32 at the given offset, then optionally mirrors horizontally.
template <typename T>
void crop_flip_image(const T* src, std::size_t channels, const CropFlip& t, T* dst) {
  const long long n = static_cast<long long>(kImageSize);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* s = src + c * kImageSize * kImageSize;
    T* d = dst + c * kImageSize * kImageSize;
    for (long long y = 0; y < n; ++y) {
      const long long sy = y + static_cast<long long>(t.offset_y) - static_cast<long long>(kCropPad);
      for (long long x = 0; x < n; ++x) {
        const long long xx = t.flip ? n - 1 - x : x;
        const long long sx =
            xx + static_cast<long long>(t.offset_x) - static_cast<long long>(kCropPad);
        d[y * n + x] = (sy < 0 || sy >= n || sx < 0 || sx >= n) ? T(0) : s[sy * n + sx];
      }
    }
  }
}

/// Random pad-and-crop for every dataset, plus horizontal flips with
/// probability 0.5 for CIFAR-10. The test split passes through unchanged.
template <typename T, typename Rng>
Tensor<T> augment(const Tensor<T>& batch, DatasetKind kind, Split split, Rng& rng) {
  if (split == Split::Test) return batch;
  if (batch.rank() != 4 || batch.dim(2) != kImageSize || batch.dim(3) != kImageSize) {
    throw DimensionError("augment: expected [B x C x 32 x 32], got " + shape_str(batch.shape()));
  }
  const std::size_t b = batch.dim(0), c = batch.dim(1), per = c * kImageSize * kImageSize;
  std::uniform_int_distribution<std::size_t> off(0, 2 * kCropPad);
  std::bernoulli_distribution coin(0.5);
  std::vector<T> out(batch.numel());
  for (std::size_t i = 0; i < b; ++i) {
    CropFlip t;
    t.offset_y = off(rng);
    t.offset_x = off(rng);
    t.flip = kind == DatasetKind::Cifar10 && coin(rng);
    crop_flip_image(batch.data().data() + i * per, c, t, out.data() + i * per);
  }
  return Tensor<T>(batch.shape(), std::move(out));
}

/// Shuffled mini-batches covering every index exactly once. A trailing
/// batch of one sample is merged into the previous batch (batchnorm needs
/// at least two samples in training mode).
template <typename Rng>
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    Rng& rng, bool shuffle = true) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

}  // namespace linearconv
