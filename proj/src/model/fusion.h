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

#include "model/common.h"
#include "model/mask.h"

namespace af {

enum class FusionMode { kCross, kSelf, kOff };

struct FusionConfig {
  FusionMode mode = FusionMode::kCross;
  int64_t d = 32;
  int64_t heads = 1;
  bool residual = false;
};

// Two-stage cross-attention: accent embedding queries against acoustic
// keys/values, the stage-1 output re-queries the SAME keys/values, Relu after
// each stage. Biasless d x d projections.
template <typename S>
class CrossAttentionFusion {
 public:
  CrossAttentionFusion(ParamRegistry<S>& reg, const FusionConfig& cfg, Rng& rng);

  struct Out {
    Tensor<S> o_att;  // [T' x d], non-negative
    Tensor<S> q_att;  // stage-1 output, exposed for tests
  };

  // `h_ac` is the query source (ignored in self mode, where h_ga queries
  // itself); `h_ga` provides keys and values. Chunk-masked when `mask` is set.
  Out forward(const Tensor<S>& h_ac, const Tensor<S>& h_ga,
              AttnMaskPtr mask) const;

  // Streaming: new queries against the accumulated key/value history.
  struct Cache {
    Tensor<S> k, v;
  };
  Out forward_step(const Tensor<S>& h_ac_new, const Tensor<S>& h_ga_new,
                   Cache& cache) const;

  // Projection applications during the last forward (stage-2 must reuse
  // stage-1's K/V, so these read 1 after any forward).
  int64_t last_k_projections() const { return k_proj_count_; }
  int64_t last_v_projections() const { return v_proj_count_; }

  const FusionConfig& config() const { return cfg_; }

 private:
  Tensor<S> attend(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                   AttnMaskPtr mask) const;

  FusionConfig cfg_;
  Tensor<S> wq_, wk_, wv_;
  mutable int64_t k_proj_count_ = 0, v_proj_count_ = 0;
};

}  // namespace af
