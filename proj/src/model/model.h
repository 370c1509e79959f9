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

#include <memory>
#include <string>

#include "frontend/features.h"
#include "model/decoder.h"
#include "model/encoder.h"
#include "model/fusion.h"
#include "model/laf.h"
#include "util/config.h"

namespace af {

struct ModelConfig {
  EncoderConfig encoder;
  bool laf_enabled = true;
  LafMode laf_mode = LafMode::kConcat;
  int64_t probe_layer = 8;
  int64_t laf_channels = 4;
  FusionMode fusion = FusionMode::kCross;
  int64_t fusion_heads = 1;
  bool fusion_residual = false;
  int64_t dec_layers = 3;
  int64_t dec_heads = 4;
  int64_t dec_max_len = 256;
  int64_t vocab = 16;
  int64_t accents = 4;

  static ModelConfig from_config(const Config& c);
  void validate() const;

  LafConfig laf_config() const;
  FusionConfig fusion_config() const;
  DecoderConfig decoder_config() const;

  std::vector<float> to_hparams() const;
  static ModelConfig from_hparams(const std::vector<float>& h);
};

// The full multi-accent recognizer: conformer encoder with taps, optional
// layer-adapted AID branch, cross-attention fusion, CTC head, and the
// bidirectional attention decoder.
template <typename S>
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t init_seed);

  struct Outputs {
    EncoderTaps<S> taps;
    bool has_accent = false;
    AccentResult<S> accent;
    Tensor<S> o_att;          // fusion output, or h12 when fusion is off
    Tensor<S> ctc_log_probs;  // [T' x (vocab + 1)]
  };

  Outputs forward(const Tensor<S>& features, const ChunkMask& mask) const;

  // CMVN-normalized features to a constant input tensor.
  Tensor<S> input_tensor(const FeatureMatrix& feat) const;

  const ModelConfig& config() const { return cfg_; }
  std::vector<NamedParam<S>>& params() { return reg_.all(); }
  const std::vector<NamedParam<S>>& params() const { return reg_.all(); }

  const Encoder<S>& encoder() const { return *encoder_; }
  const LafModule<S>& laf() const { return *laf_; }
  bool has_laf() const { return laf_ != nullptr; }
  const CrossAttentionFusion<S>& fusion() const { return *fusion_; }
  bool has_fusion() const { return fusion_ != nullptr; }
  const CtcHead<S>& ctc_head() const { return ctc_head_; }
  const AttentionDecoder<S>& attention_decoder() const { return *decoder_; }

  // Checkpoints are self-contained: parameters plus CMVN stats and the
  // synthesis profile (so `eval --ckpt` can realize synth manifests alone).
  void save(const std::string& path, const CmvnStats& cmvn,
            const SynthConfig& synth) const;

  struct Loaded {
    std::unique_ptr<Model> model;
    CmvnStats cmvn;
    SynthConfig synth;
  };
  static Loaded load(const std::string& path);

 private:
  ModelConfig cfg_;
  ParamRegistry<S> reg_;
  std::unique_ptr<Encoder<S>> encoder_;
  std::unique_ptr<LafModule<S>> laf_;
  std::unique_ptr<CrossAttentionFusion<S>> fusion_;
  CtcHead<S> ctc_head_;
  std::unique_ptr<AttentionDecoder<S>> decoder_;
};

void save_cmvn(const std::string& path, const CmvnStats& stats);
CmvnStats load_cmvn(const std::string& path);

}  // namespace af
