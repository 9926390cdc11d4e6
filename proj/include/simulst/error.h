// Copyright 2026 The simulst Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace simulst {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or size contract violated.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside its documented domain.
class ValueError : public Error {
 public:
  using Error::Error;
};

// No CTC path can produce the requested label sequence.
class InfeasibleAlignmentError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (features, manifest, trace, checkpoint).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Unknown keys, bad values, or incompatible fingerprints.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN or infinite loss during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace simulst
