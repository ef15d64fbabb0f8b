// Copyright 2026 The EDIC Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace edic {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched shapes, bad hyper-parameters, missing weights.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Invalid probability model parameters.
class ModelError : public Error {
 public:
  using Error::Error;
};

// Symbol outside the coder's alphabet.
class CoderError : public Error {
 public:
  using Error::Error;
};

// Truncated or inconsistent coded data.
class DecodeError : public Error {
 public:
  using Error::Error;
};

// Container-level problems: bad magic, truncation, checksum mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace edic
