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

#include "model/model.h"

#include <algorithm>
#include <set>

#include "util/checkpoint.h"

namespace af {

namespace {

LafMode parse_laf_mode(const std::string& s) {
  if (s == "concat") return LafMode::kConcat;
  if (s == "sum") return LafMode::kWeightedSum;
  if (s == "probe") return LafMode::kProbe;
  throw ConfigError("model.laf_mode: expected concat|sum|probe, got " + s);
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "cross") return FusionMode::kCross;
  if (s == "self") return FusionMode::kSelf;
  if (s == "off") return FusionMode::kOff;
  throw ConfigError("model.fusion: expected cross|self|off, got " + s);
}

}  // namespace

ModelConfig ModelConfig::from_config(const Config& c) {
  ModelConfig m;
  m.encoder.feat_dim = c.geti("data.feat_dim");
  m.encoder.d = c.geti("model.d");
  m.encoder.heads = c.geti("model.heads");
  m.encoder.blocks = c.geti("model.blocks");
  m.encoder.sub2_after = c.geti("model.sub2_after");
  m.encoder.taps = c.geti("model.taps");
  m.encoder.conv_kernel = c.geti("model.conv_kernel");
  m.encoder.ffn_expansion = c.geti("model.ffn_expansion");
  m.encoder.max_len = c.geti("model.max_len");
  m.laf_enabled = c.getb("model.laf_enabled");
  m.laf_mode = parse_laf_mode(c.gets("model.laf_mode"));
  m.probe_layer = c.geti("model.probe_layer");
  m.laf_channels = c.geti("model.laf_channels");
  m.fusion = parse_fusion_mode(c.gets("model.fusion"));
  m.fusion_heads = c.geti("model.fusion_heads");
  m.fusion_residual = c.getb("model.fusion_residual");
  m.dec_layers = c.geti("model.dec_layers");
  m.dec_heads = c.geti("model.dec_heads");
  m.vocab = c.geti("data.vocab_size");
  m.accents = c.geti("data.accents");
  m.validate();
  return m;
}

void ModelConfig::validate() const {
  encoder.validate();
  if (!laf_enabled && fusion == FusionMode::kCross) {
    throw ConfigError(
        "model: cross-attention fusion needs the LAF branch enabled");
  }
  if (vocab < 1 || vocab > 26) {
    throw ConfigError("model: vocab must be in [1, 26] for character units");
  }
  if (accents < 1) throw ConfigError("model: accents must be positive");
}

LafConfig ModelConfig::laf_config() const {
  LafConfig l;
  l.mode = laf_mode;
  l.probe_layer = probe_layer;
  l.channels = laf_channels;
  l.taps = encoder.taps;
  l.tap_lo = encoder.tap_lo();
  l.d = encoder.d;
  l.accents = accents;
  return l;
}

FusionConfig ModelConfig::fusion_config() const {
  FusionConfig f;
  f.mode = fusion;
  f.d = encoder.d;
  f.heads = fusion_heads;
  f.residual = fusion_residual;
  return f;
}

DecoderConfig ModelConfig::decoder_config() const {
  DecoderConfig d;
  d.d = encoder.d;
  d.heads = dec_heads;
  d.layers = dec_layers;
  d.vocab = vocab;
  d.max_len = dec_max_len;
  return d;
}

std::vector<float> ModelConfig::to_hparams() const {
  return {1.0f,
          float(encoder.feat_dim),
          float(encoder.d),
          float(encoder.heads),
          float(encoder.blocks),
          float(encoder.sub2_after),
          float(encoder.taps),
          float(encoder.conv_kernel),
          float(encoder.ffn_expansion),
          float(encoder.max_len),
          laf_enabled ? 1.0f : 0.0f,
          float(static_cast<int>(laf_mode)),
          float(probe_layer),
          float(laf_channels),
          float(static_cast<int>(fusion)),
          float(fusion_heads),
          fusion_residual ? 1.0f : 0.0f,
          float(dec_layers),
          float(dec_heads),
          float(vocab),
          float(accents),
          float(dec_max_len)};
}

ModelConfig ModelConfig::from_hparams(const std::vector<float>& h) {
  if (h.size() != 22 || h[0] != 1.0f) {
    throw SchemaError("checkpoint: meta.hparams has unexpected layout");
  }
  ModelConfig m;
  auto geti = [&](size_t i) { return static_cast<int64_t>(h[i]); };
  m.encoder.feat_dim = geti(1);
  m.encoder.d = geti(2);
  m.encoder.heads = geti(3);
  m.encoder.blocks = geti(4);
  m.encoder.sub2_after = geti(5);
  m.encoder.taps = geti(6);
  m.encoder.conv_kernel = geti(7);
  m.encoder.ffn_expansion = geti(8);
  m.encoder.max_len = geti(9);
  m.laf_enabled = h[10] != 0.0f;
  m.laf_mode = static_cast<LafMode>(geti(11));
  m.probe_layer = geti(12);
  m.laf_channels = geti(13);
  m.fusion = static_cast<FusionMode>(geti(14));
  m.fusion_heads = geti(15);
  m.fusion_residual = h[16] != 0.0f;
  m.dec_layers = geti(17);
  m.dec_heads = geti(18);
  m.vocab = geti(19);
  m.accents = geti(20);
  m.dec_max_len = geti(21);
  m.validate();
  return m;
}

template <typename S>
Model<S>::Model(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  encoder_ = std::make_unique<Encoder<S>>(reg_, cfg_.encoder, rng);
  if (cfg_.laf_enabled) {
    laf_ = std::make_unique<LafModule<S>>(reg_, cfg_.laf_config(), rng);
  }
  if (cfg_.fusion != FusionMode::kOff) {
    fusion_ = std::make_unique<CrossAttentionFusion<S>>(reg_,
                                                        cfg_.fusion_config(),
                                                        rng);
  }
  ctc_head_ = CtcHead<S>(reg_, cfg_.encoder.d, cfg_.vocab, rng);
  decoder_ = std::make_unique<AttentionDecoder<S>>(reg_, cfg_.decoder_config(),
                                                   rng);
}

template <typename S>
Tensor<S> Model<S>::input_tensor(const FeatureMatrix& feat) const {
  std::vector<S> data(feat.data.size());
  for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<S>(feat.data[i]);
  return Tensor<S>::from({feat.frames, feat.dim}, std::move(data));
}

template <typename S>
typename Model<S>::Outputs Model<S>::forward(const Tensor<S>& features,
                                             const ChunkMask& mask) const {
  Outputs out;
  out.taps = encoder_->encode(features, mask);
  if (laf_) {
    out.accent = laf_->aid_decode(laf_->layer_adapt(out.taps));
    out.has_accent = true;
  }
  if (fusion_) {
    out.o_att = fusion_
                    ->forward(out.has_accent ? out.accent.embedding
                                             : out.taps.final,
                              out.taps.final, mask.matrix)
                    .o_att;
  } else {
    out.o_att = out.taps.final;
  }
  out.ctc_log_probs = ctc_head_.log_probs(out.o_att);
  return out;
}

namespace {

std::vector<float> synth_to_meta(const SynthConfig& s) {
  // The 64-bit template seed is split into exact 32-bit halves.
  const uint32_t hi = static_cast<uint32_t>(s.template_seed >> 32);
  const uint32_t lo = static_cast<uint32_t>(s.template_seed & 0xffffffffull);
  return {float(s.frames_per_token), float(s.len_min), float(s.len_max),
          float(s.noise_std),        float(s.accent_offset),
          float(s.template_amp),     float(s.accent_band),
          float(s.token_band),       s.accent_token_coupling ? 1.0f : 0.0f,
          float(static_cast<int>(s.accent_code)),
          float(hi),                 float(lo)};
}

SynthConfig synth_from_meta(const std::vector<float>& m, int64_t vocab,
                            int64_t accents, int64_t feat_dim) {
  if (m.size() != 12) {
    throw SchemaError("checkpoint: meta.synth has unexpected layout");
  }
  SynthConfig s;
  s.vocab = vocab;
  s.accents = accents;
  s.feat_dim = feat_dim;
  s.frames_per_token = static_cast<int64_t>(m[0]);
  s.len_min = static_cast<int64_t>(m[1]);
  s.len_max = static_cast<int64_t>(m[2]);
  s.noise_std = m[3];
  s.accent_offset = m[4];
  s.template_amp = m[5];
  s.accent_band = static_cast<int64_t>(m[6]);
  s.token_band = static_cast<int64_t>(m[7]);
  s.accent_token_coupling = m[8] != 0.0f;
  s.accent_code = static_cast<AccentCode>(static_cast<int>(m[9]));
  s.template_seed = (static_cast<uint64_t>(static_cast<uint32_t>(m[10])) << 32) |
                    static_cast<uint64_t>(static_cast<uint32_t>(m[11]));
  return s;
}

}  // namespace

template <typename S>
void Model<S>::save(const std::string& path, const CmvnStats& cmvn,
                    const SynthConfig& synth) const {
  std::vector<ContainerEntry> entries;
  entries.push_back({"meta.hparams",
                     {static_cast<int64_t>(cfg_.to_hparams().size())},
                     cfg_.to_hparams()});
  entries.push_back({"meta.synth", {12}, synth_to_meta(synth)});
  ContainerEntry mean{"cmvn.mean",
                      {static_cast<int64_t>(cmvn.mean.size())},
                      {}};
  mean.values.assign(cmvn.mean.begin(), cmvn.mean.end());
  entries.push_back(std::move(mean));
  ContainerEntry var{"cmvn.var", {static_cast<int64_t>(cmvn.var.size())}, {}};
  var.values.assign(cmvn.var.begin(), cmvn.var.end());
  entries.push_back(std::move(var));
  for (const auto& p : reg_.all()) {
    ContainerEntry e;
    e.name = p.name;
    e.shape = p.tensor.shape();
    e.values.reserve(p.tensor.numel());
    for (S v : p.tensor.data()) e.values.push_back(static_cast<float>(v));
    entries.push_back(std::move(e));
  }
  save_container(path, entries);
}

template <typename S>
typename Model<S>::Loaded Model<S>::load(const std::string& path) {
  auto entries = load_container(path);
  const ContainerEntry* hparams = nullptr;
  const ContainerEntry* synth_meta = nullptr;
  for (const auto& e : entries) {
    if (e.name == "meta.hparams") hparams = &e;
    if (e.name == "meta.synth") synth_meta = &e;
  }
  if (!hparams) throw SchemaError("checkpoint: missing entry `meta.hparams`");
  if (!synth_meta) throw SchemaError("checkpoint: missing entry `meta.synth`");
  auto cfg = ModelConfig::from_hparams(hparams->values);
  auto model = std::make_unique<Model<S>>(cfg, /*init_seed=*/0);

  CmvnStats cmvn;
  cmvn.frame_count = 1;
  std::set<std::string> expected = {"meta.hparams", "meta.synth", "cmvn.mean",
                                    "cmvn.var"};
  for (const auto& p : model->reg_.all()) expected.insert(p.name);

  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!expected.count(e.name)) {
      throw SchemaError("checkpoint: unknown entry `" + e.name + "`");
    }
    if (!seen.insert(e.name).second) {
      throw SchemaError("checkpoint: duplicate entry `" + e.name + "`");
    }
    if (e.name == "meta.hparams" || e.name == "meta.synth") continue;
    if (e.name == "cmvn.mean") {
      cmvn.mean.assign(e.values.begin(), e.values.end());
      continue;
    }
    if (e.name == "cmvn.var") {
      cmvn.var.assign(e.values.begin(), e.values.end());
      continue;
    }
    for (auto& p : model->reg_.all()) {
      if (p.name != e.name) continue;
      if (p.tensor.shape() != e.shape) {
        throw SchemaError("checkpoint: entry `" + e.name + "` has shape " +
                          shape_str(e.shape) + ", expected " +
                          shape_str(p.tensor.shape()));
      }
      auto& dst = p.tensor.data();
      for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<S>(e.values[i]);
      break;
    }
  }
  for (const auto& name : expected) {
    if (!seen.count(name)) {
      throw SchemaError("checkpoint: missing entry `" + name + "`");
    }
  }
  Loaded out;
  out.synth = synth_from_meta(synth_meta->values, cfg.vocab, cfg.accents,
                              cfg.encoder.feat_dim);
  out.model = std::move(model);
  out.cmvn = cmvn;
  return out;
}

void save_cmvn(const std::string& path, const CmvnStats& stats) {
  std::vector<ContainerEntry> entries(2);
  entries[0].name = "cmvn.mean";
  entries[0].shape = {static_cast<int64_t>(stats.mean.size())};
  entries[0].values.assign(stats.mean.begin(), stats.mean.end());
  entries[1].name = "cmvn.var";
  entries[1].shape = {static_cast<int64_t>(stats.var.size())};
  entries[1].values.assign(stats.var.begin(), stats.var.end());
  save_container(path, entries);
}

CmvnStats load_cmvn(const std::string& path) {
  CmvnStats stats;
  stats.frame_count = 1;
  for (const auto& e : load_container(path)) {
    if (e.name == "cmvn.mean") stats.mean.assign(e.values.begin(), e.values.end());
    if (e.name == "cmvn.var") stats.var.assign(e.values.begin(), e.values.end());
  }
  if (stats.mean.empty() || stats.var.empty()) {
    throw SchemaError("cmvn: container missing cmvn.mean/cmvn.var entries");
  }
  return stats;
}

template class Model<float>;
template class Model<double>;

}  // namespace af
