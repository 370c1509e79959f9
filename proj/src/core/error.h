// Copyright (c) 2026 Accentfuse Authors
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

namespace af {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes/dimensions do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad configuration value (chunk size out of range, probe layer, stride...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API precondition violated (non-scalar loss, empty target...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Degenerate or invalid input data (too-short waveform, bad label).
class InputError : public Error {
 public:
  using Error::Error;
};

// Checkpoint container is not parseable (magic/version/truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Checkpoint parses but entries do not match the expected schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// CTC target cannot be aligned within the available frames.
class InfeasibleTargetError : public Error {
 public:
  using Error::Error;
};

}  // namespace af
