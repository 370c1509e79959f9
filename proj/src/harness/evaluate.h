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

#include <ostream>

#include "harness/metrics.h"
#include "model/model.h"
#include "runtime/stream.h"

namespace af {

struct EvalOptions {
  bool stream = false;
  int64_t chunk = 0;  // encoder-resolution chunk size in stream mode
  bool cmvn_per_utterance = false;
  int64_t sample_rate = 16000;
};

// Decodes every utterance greedily (streaming or full-context), aggregates
// CER overall and per accent, and scores AID via the utterance posterior.
// Unreadable utterances are skipped with a warning and counted.
template <typename S>
EvalReport evaluate(const std::vector<ManifestEntry>& entries,
                    const Model<S>& model, const CmvnStats& cmvn,
                    const SynthConfig& synth, const EvalOptions& opts,
                    std::ostream* warn = nullptr);

// Shared helper: normalized features for one utterance under the eval CMVN
// policy.
void normalize_features(FeatureMatrix& feat, const CmvnStats& global,
                        bool per_utterance);

// Greedy full-context decode of one utterance.
template <typename S>
Hypothesis decode_utterance(const Model<S>& model, const FeatureMatrix& feat);

}  // namespace af
