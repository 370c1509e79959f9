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
#include <vector>

#include "core/tensor.h"

namespace af {

// Blank symbol index in the CTC class space; token i maps to class i + 1.
inline constexpr int64_t kCtcBlank = 0;

// Minimum frames needed to align `target`: one per token plus one separating
// blank per adjacent repeat.
int64_t ctc_min_frames(const std::vector<int64_t>& target);

// Negative log of the total probability over all blank-augmented alignments,
// log-space forward algorithm; differentiable w.r.t. log_probs [T x (V+1)].
// Throws InfeasibleTargetError when T < ctc_min_frames(target).
template <typename S>
Tensor<S> ctc_loss(const Tensor<S>& log_probs,
                   const std::vector<int64_t>& target);

// Per-frame argmax, collapse consecutive repeats, drop blanks.
template <typename S>
std::vector<int64_t> greedy_ctc_decode(const Tensor<S>& log_probs);

// Greedy path score: sum of the per-frame max log-probs.
template <typename S>
double greedy_ctc_score(const Tensor<S>& log_probs);

struct CtcBeamEntry {
  std::vector<int64_t> tokens;
  double score = 0.0;  // log P_ctc(tokens | x)
};

// CTC prefix beam search; returns up to beam_size entries, best first.
template <typename S>
std::vector<CtcBeamEntry> ctc_beam_search(const Tensor<S>& log_probs,
                                          int64_t beam_size);

}  // namespace af
