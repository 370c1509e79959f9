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
#include "model/ctc.h"

namespace af {

// Decoded sequence with streaming provenance.
struct Hypothesis {
  std::vector<int64_t> tokens;
  double score = 0.0;
  std::vector<int64_t> emitted_at;  // per-token chunk index, non-decreasing
};

// Linear + log-softmax over fine vocab plus blank (class 0).
template <typename S>
class CtcHead {
 public:
  CtcHead() = default;
  CtcHead(ParamRegistry<S>& reg, int64_t d, int64_t vocab, Rng& rng)
      : lin_(reg, "decoder.ctc", d, vocab + 1, rng) {}

  Tensor<S> log_probs(const Tensor<S>& o_att) const {
    return log_softmax_rows(lin_(o_att));
  }

 private:
  Linear<S> lin_;
};

enum class Direction { kL2R, kR2L };

struct DecoderConfig {
  int64_t d = 32;
  int64_t heads = 4;
  int64_t layers = 3;
  int64_t vocab = 16;
  int64_t ffn_expansion = 4;
  int64_t max_len = 256;
};

// Transformer decoder shared by both directions. Direction is encoded by the
// start sentinel: L2R consumes [sos, y...], R2L consumes [eos, reverse(y)...].
// Output classes are exactly the coarse vocab (no end-symbol class); row j of
// the returned logits predicts element j of the direction-ordered sequence.
template <typename S>
class AttentionDecoder {
 public:
  AttentionDecoder(ParamRegistry<S>& reg, const DecoderConfig& cfg, Rng& rng);

  Tensor<S> forward(const Tensor<S>& o_att,
                    const std::vector<int64_t>& target, Direction dir) const;

  // Per-token mean cross entropy under teacher forcing.
  Tensor<S> teacher_ce(const Tensor<S>& o_att,
                       const std::vector<int64_t>& target, Direction dir) const;

  // Sum over positions of log p(y_j); used for rescoring.
  double log_likelihood(const Tensor<S>& o_att,
                        const std::vector<int64_t>& target, Direction dir) const;

  const DecoderConfig& config() const { return cfg_; }

 private:
  struct Layer {
    LayerNormP<S> self_ln;
    MultiHeadAttention<S> self_attn;
    LayerNormP<S> cross_ln;
    MultiHeadAttention<S> cross_attn;
    LayerNormP<S> ffn_ln;
    Linear<S> ffn_w1, ffn_w2;
  };

  DecoderConfig cfg_;
  Tensor<S> emb_;  // [(vocab + 2) x d]; ids vocab=sos, vocab+1=eos
  Tensor<S> pos_;
  std::vector<Layer> layers_;
  LayerNormP<S> out_ln_;
  Linear<S> out_;
};

// Attention rescoring: ctc_weight * ctc_score + (1 - ctc_weight) * average of
// the two directions' attention log-likelihoods. Ties break to the shorter
// hypothesis, then lexicographic token order. Returns an element of `nbest`.
template <typename S>
Hypothesis rescore(const std::vector<Hypothesis>& nbest, const Tensor<S>& o_att,
                   const AttentionDecoder<S>& decoder, double ctc_weight);

}  // namespace af
