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

#include <string>
#include <vector>

#include "model/common.h"
#include "model/encoder.h"

namespace af {

enum class LafMode { kConcat, kWeightedSum, kProbe };

struct LafConfig {
  LafMode mode = LafMode::kConcat;
  int64_t probe_layer = 8;  // block index when mode == kProbe
  int64_t channels = 4;     // conv stack width
  int64_t taps = 7;
  int64_t tap_lo = 6;  // block index of the first tap
  int64_t d = 32;
  int64_t accents = 4;
};

// Frame-level accent posteriors and the embedding feeding the fusion query.
template <typename S>
struct AccentResult {
  Tensor<S> embedding;             // H^AC [T' x d], input of the discriminator
  Tensor<S> frame_logits;          // [T' x A]
  Tensor<S> utterance_posterior;   // [1 x A], softmax of the temporal mean
};

// Layer-adapted fusion: learnable per-tap weights, a two-layer causal 2-D
// conv stack over the (time x feature) map, and the accent-identification
// head (causal 1-D conv + linear discriminator).
template <typename S>
class LafModule {
 public:
  LafModule(ParamRegistry<S>& reg, const LafConfig& cfg, Rng& rng);

  // Combines taps per mode: weighted sum -> [1 x T' x d] channel map,
  // concat -> [taps x T' x d], probe(k) -> tap k alone, weights unused.
  Tensor<S> layer_adapt(const EncoderTaps<S>& taps) const;

  AccentResult<S> aid_decode(const Tensor<S>& fused) const;

  // Streaming state: time tails of each causal conv input.
  struct Cache {
    Tensor<S> conv1_tail, conv2_tail, cls_tail;  // [C x t x d] / [t x d]
  };
  AccentResult<S> aid_decode_step(const Tensor<S>& fused_new, Cache& cache) const;

  const LafConfig& config() const { return cfg_; }
  Tensor<S> weights() const { return w_; }

 private:
  Tensor<S> conv_in_channels() const;

  LafConfig cfg_;
  Tensor<S> w_;  // [taps x 1] learnable layer weights
  Tensor<S> conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  Linear<S> proj_;
  Tensor<S> cls_conv_w_, cls_conv_b_;
  Linear<S> cls_lin_;
};

}  // namespace af
