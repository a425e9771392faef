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

#include <cstdint>
#include <stdexcept>
#include <string>

namespace linearconv {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Convolution/pooling geometry does not produce integral output extents.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Invalid model or training configuration (alpha split, rank, flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf was produced; the message names the producing op.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A filter with (near) zero l2 norm cannot be normalized.
class DegenerateFilterError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary input. Carries the byte offset at which parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace linearconv
