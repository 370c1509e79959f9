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

#include "core/tensor.h"

namespace af {

// Chunk-structured attention mask at encoder resolution: row i may attend to
// column j iff j < (floor(i/C) + 1) * C, i.e. everything up to the end of its
// own chunk. C = T' (or full_context) gives the all-true matrix.
struct ChunkMask {
  int64_t t_len = 0;
  int64_t size = 0;  // C, frames per chunk at encoder resolution
  bool full_context = false;
  AttnMaskPtr matrix;

  static ChunkMask build(int64_t t_len, int64_t chunk, bool full_context);

  // The same chunk boundaries at `factor`-times finer temporal resolution
  // (pre-subsampling encoder blocks run at 2x the output resolution).
  AttnMaskPtr scaled(int64_t fine_len, int64_t factor) const;

  int64_t chunk_of(int64_t frame) const {
    return full_context ? 0 : frame / size;
  }
};

inline ChunkMask ChunkMask::build(int64_t t_len, int64_t chunk,
                                  bool full_context) {
  if (t_len < 1) throw ConfigError("chunk mask: empty time axis");
  if (full_context) chunk = t_len;
  if (chunk < 1 || chunk > t_len) {
    throw ConfigError("chunk mask: chunk size " + std::to_string(chunk) +
                      " out of [1, " + std::to_string(t_len) + "]");
  }
  ChunkMask m;
  m.t_len = t_len;
  m.size = chunk;
  m.full_context = full_context || chunk == t_len;
  auto mask = std::make_shared<AttnMask>();
  mask->rows = t_len;
  mask->cols = t_len;
  mask->allow.assign(t_len * t_len, 0);
  for (int64_t i = 0; i < t_len; ++i) {
    const int64_t hi = std::min((i / chunk + 1) * chunk, t_len);
    for (int64_t j = 0; j < hi; ++j) mask->allow[i * t_len + j] = 1;
  }
  m.matrix = mask;
  return m;
}

inline AttnMaskPtr ChunkMask::scaled(int64_t fine_len, int64_t factor) const {
  auto mask = std::make_shared<AttnMask>();
  mask->rows = fine_len;
  mask->cols = fine_len;
  mask->allow.assign(fine_len * fine_len, 0);
  const int64_t chunk = full_context ? fine_len : size * factor;
  for (int64_t i = 0; i < fine_len; ++i) {
    const int64_t hi = std::min((i / chunk + 1) * chunk, fine_len);
    for (int64_t j = 0; j < hi; ++j) mask->allow[i * fine_len + j] = 1;
  }
  return mask;
}

}  // namespace af
