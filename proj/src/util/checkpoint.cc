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

#include "util/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

namespace af {

namespace {

constexpr char kMagic[4] = {'Q', 'F', 'N', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError(std::string("checkpoint: truncated while reading ") + what);
  }
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  put_u32(os, std::bit_cast<uint32_t>(v));
}

float get_f32(std::istream& is, const char* what) {
  return std::bit_cast<float>(get_u32(is, what));
}

}  // namespace

void save_container(const std::string& path,
                    const std::vector<ContainerEntry>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(os, static_cast<uint32_t>(e.shape.size()));
    int64_t numel = 1;
    for (int64_t ext : e.shape) {
      put_u32(os, static_cast<uint32_t>(ext));
      numel *= ext;
    }
    if (numel != static_cast<int64_t>(e.values.size())) {
      throw ContractError("checkpoint: entry `" + e.name +
                          "` has inconsistent shape/value sizes");
    }
    for (float v : e.values) put_f32(os, v);
  }
  if (!os) throw FormatError("checkpoint: write failed for " + path);
}

std::vector<ContainerEntry> load_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic in " + path +
                      " (expected \"QFN1\")");
  }
  uint32_t version = get_u32(is, "version");
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " +
                      std::to_string(version) + " in " + path);
  }
  uint32_t count = get_u32(is, "entry count");
  std::vector<ContainerEntry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    ContainerEntry e;
    uint32_t name_len = get_u32(is, "name length");
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len)) {
      throw FormatError("checkpoint: truncated entry name in " + path);
    }
    uint32_t rank = get_u32(is, "rank");
    int64_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      uint32_t ext = get_u32(is, "extent");
      if (ext == 0) {
        throw FormatError("checkpoint: zero extent in entry `" + e.name + "`");
      }
      e.shape.push_back(static_cast<int64_t>(ext));
      numel *= ext;
    }
    e.values.resize(static_cast<size_t>(numel));
    for (int64_t v = 0; v < numel; ++v) e.values[v] = get_f32(is, "values");
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace af
