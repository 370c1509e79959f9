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

#include <cstdint>
#include <map>
#include <string>

#include "core/error.h"

namespace af {

// Flat `section.key = value` config with '#' comments. Every key must be in
// the built-in registry; unknown keys are hard errors so experiment typos
// fail loudly instead of silently using defaults.
class Config {
 public:
  static Config defaults();
  static Config from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  int64_t geti(const std::string& key) const;
  double getf(const std::string& key) const;
  bool getb(const std::string& key) const;
  const std::string& gets(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace af
