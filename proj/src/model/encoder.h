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
#include "model/mask.h"

namespace af {

struct EncoderConfig {
  int64_t feat_dim = 80;
  int64_t d = 32;
  int64_t heads = 4;
  int64_t blocks = 12;
  int64_t sub2_after = 3;  // second subsample after this many blocks
  int64_t taps = 7;        // taps are the last `taps` blocks
  int64_t conv_kernel = 15;
  int64_t ffn_expansion = 4;
  int64_t max_len = 1024;  // positional table extent at the post-frontend rate

  // 1-based index of the first tapped block.
  int64_t tap_lo() const { return blocks - taps + 1; }
  void validate() const;
};

// Per-layer outputs at the shared post-subsampling resolution.
template <typename S>
struct EncoderTaps {
  std::vector<Tensor<S>> taps;  // tap_lo .. blocks, all [T' x d]
  Tensor<S> final;              // aliases taps.back()
  int64_t subsample_factor = 4;
};

// Conformer block: half-step FFN, masked MHSA, causal conv module, half-step
// FFN, final layer norm. All temporal mixing is causal or mask-limited.
template <typename S>
class ConformerBlock {
 public:
  ConformerBlock(ParamRegistry<S>& reg, const std::string& prefix,
                 int64_t d, int64_t heads, int64_t expansion, int64_t kernel,
                 Rng& rng);

  Tensor<S> forward(const Tensor<S>& x, AttnMaskPtr mask) const;

  // Streaming state: attention key/value history plus the depthwise-conv
  // left context (last kernel-1 rows of the gated conv input).
  struct Cache {
    Tensor<S> k, v, conv_tail;
  };
  Tensor<S> forward_step(const Tensor<S>& x_new, Cache& cache) const;

 private:
  struct Ffn {
    LayerNormP<S> ln;
    Linear<S> w1, w2;
    Tensor<S> run(const Tensor<S>& x) const { return w2(silu(w1(ln(x)))); }
  };

  Tensor<S> conv_module(const Tensor<S>& x) const;
  Tensor<S> conv_post(const Tensor<S>& dw_out) const;

  Ffn ffn1_, ffn2_;
  LayerNormP<S> attn_ln_;
  MultiHeadAttention<S> attn_;
  LayerNormP<S> conv_ln_;
  Linear<S> conv_pw1_;
  Tensor<S> conv_dw_w_, conv_dw_b_;
  LayerNormP<S> conv_norm_;
  Linear<S> conv_pw2_;
  LayerNormP<S> out_ln_;
  int64_t d_ = 0, kernel_ = 0;
};

// Strided causal conv frontend stage (x2 temporal reduction).
template <typename S>
struct Subsample {
  Tensor<S> w, b;
  static constexpr int64_t kKernel = 3;

  Subsample() = default;
  Subsample(ParamRegistry<S>& reg, const std::string& prefix, int64_t in,
            int64_t out, Rng& rng) {
    w = reg.add(prefix + ".w", init_weight<S>(rng, {out, in, kKernel},
                                              in * kKernel));
    b = reg.add(prefix + ".b", Tensor<S>::zeros({out}, true));
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return silu(causal_conv1d(x, w, b, 2));
  }
};

template <typename S>
class Encoder {
 public:
  Encoder(ParamRegistry<S>& reg, const EncoderConfig& cfg, Rng& rng);

  // `features` must be CMVN-normalized, [T x feat_dim]; the chunk mask is
  // built at T' = floor(T/4) and rescaled internally for the pre-subsampling
  // blocks. Throws InputError when T < 4.
  EncoderTaps<S> encode(const Tensor<S>& features, const ChunkMask& mask) const;

  static int64_t out_len(int64_t frames) { return frames / 2 / 2; }
  const EncoderConfig& config() const { return cfg_; }

  // Streaming access.
  const Subsample<S>& sub1() const { return sub1_; }
  const Subsample<S>& sub2() const { return sub2_; }
  const std::vector<ConformerBlock<S>>& blocks() const { return blocks_; }
  Tensor<S> positional(int64_t offset, int64_t len) const;

 private:
  EncoderConfig cfg_;
  Subsample<S> sub1_, sub2_;
  Tensor<S> pos_;
  std::vector<ConformerBlock<S>> blocks_;
};

}  // namespace af
