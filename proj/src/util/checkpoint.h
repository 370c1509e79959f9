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
#include <string>
#include <vector>

#include "core/error.h"
#include "core/tensor.h"

namespace af {

// Named-tensor container, also used for CMVN stats.
//
// Layout (all integers little-endian unsigned 32-bit):
//   magic "QFN1" | version=1 | entry count |
//   per entry: name length | UTF-8 name | rank | extents... |
//              values as little-endian IEEE-754 binary32.
struct ContainerEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void save_container(const std::string& path,
                    const std::vector<ContainerEntry>& entries);

// Throws FormatError on magic/version/truncation problems; never returns a
// partially-read container.
std::vector<ContainerEntry> load_container(const std::string& path);

}  // namespace af
