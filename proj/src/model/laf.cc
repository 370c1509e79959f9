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

#include "model/laf.h"

namespace af {

namespace {

constexpr int64_t kConvKernel = 5;  // causal 5x5 conv stack
constexpr int64_t kClsKernel = 3;   // causal 1-D classifier conv

// Streaming-only helpers (no gradient history needed).
template <typename S>
Tensor<S> concat_time3d(const Tensor<S>& a, const Tensor<S>& b) {
  const int64_t c = b.dim(0), ta = a.defined() ? a.dim(1) : 0, tb = b.dim(1);
  const int64_t f = b.dim(2);
  std::vector<S> out(static_cast<size_t>(c * (ta + tb) * f));
  for (int64_t ci = 0; ci < c; ++ci) {
    if (ta > 0)
      std::copy_n(a.data().data() + ci * ta * f, ta * f,
                  out.data() + ci * (ta + tb) * f);
    std::copy_n(b.data().data() + ci * tb * f, tb * f,
                out.data() + (ci * (ta + tb) + ta) * f);
  }
  return Tensor<S>::from({c, ta + tb, f}, std::move(out));
}

template <typename S>
Tensor<S> slice_time3d(const Tensor<S>& x, int64_t start, int64_t len) {
  const int64_t c = x.dim(0), t = x.dim(1), f = x.dim(2);
  std::vector<S> out(static_cast<size_t>(c * len * f));
  for (int64_t ci = 0; ci < c; ++ci)
    std::copy_n(x.data().data() + (ci * t + start) * f, len * f,
                out.data() + ci * len * f);
  return Tensor<S>::from({c, len, f}, std::move(out));
}

}  // namespace

template <typename S>
LafModule<S>::LafModule(ParamRegistry<S>& reg, const LafConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const int64_t cin = cfg.mode == LafMode::kConcat ? cfg.taps : 1;
  const int64_t ch = cfg.channels;
  w_ = reg.add("laf.w", Tensor<S>::full({cfg.taps, 1},
                                        S(1.0 / double(cfg.taps)), true));
  conv1_w_ = reg.add("laf.conv1.w",
                     init_weight<S>(rng, {ch, cin, kConvKernel, kConvKernel},
                                    cin * kConvKernel * kConvKernel));
  conv1_b_ = reg.add("laf.conv1.b", Tensor<S>::zeros({ch}, true));
  conv2_w_ = reg.add("laf.conv2.w",
                     init_weight<S>(rng, {ch, ch, kConvKernel, kConvKernel},
                                    ch * kConvKernel * kConvKernel));
  conv2_b_ = reg.add("laf.conv2.b", Tensor<S>::zeros({ch}, true));
  proj_ = Linear<S>(reg, "laf.cls.proj", ch * cfg.d, cfg.d, rng);
  cls_conv_w_ = reg.add("laf.cls.conv.w",
                        init_weight<S>(rng, {cfg.d, cfg.d, kClsKernel},
                                       cfg.d * kClsKernel));
  cls_conv_b_ = reg.add("laf.cls.conv.b", Tensor<S>::zeros({cfg.d}, true));
  cls_lin_ = Linear<S>(reg, "laf.cls.lin", cfg.d, cfg.accents, rng);
}

template <typename S>
Tensor<S> LafModule<S>::layer_adapt(const EncoderTaps<S>& taps) const {
  if (static_cast<int64_t>(taps.taps.size()) != cfg_.taps) {
    throw ShapeError("laf: got " + std::to_string(taps.taps.size()) +
                     " taps, expected " + std::to_string(cfg_.taps));
  }
  switch (cfg_.mode) {
    case LafMode::kProbe: {
      const int64_t hi = cfg_.tap_lo + cfg_.taps - 1;
      if (cfg_.probe_layer < cfg_.tap_lo || cfg_.probe_layer > hi) {
        throw ConfigError("laf: probe layer " + std::to_string(cfg_.probe_layer) +
                          " outside [" + std::to_string(cfg_.tap_lo) + ", " +
                          std::to_string(hi) + "]");
      }
      return stack_channels<S>({taps.taps[cfg_.probe_layer - cfg_.tap_lo]});
    }
    case LafMode::kWeightedSum: {
      Tensor<S> fused = scale_by(taps.taps[0], slice_rows(w_, 0, 1));
      for (int64_t i = 1; i < cfg_.taps; ++i)
        fused = add(fused, scale_by(taps.taps[i], slice_rows(w_, i, 1)));
      return stack_channels<S>({fused});
    }
    case LafMode::kConcat: {
      std::vector<Tensor<S>> channels;
      channels.reserve(cfg_.taps);
      for (int64_t i = 0; i < cfg_.taps; ++i)
        channels.push_back(scale_by(taps.taps[i], slice_rows(w_, i, 1)));
      return stack_channels(channels);
    }
  }
  throw ContractError("laf: unreachable mode");
}

template <typename S>
AccentResult<S> LafModule<S>::aid_decode(const Tensor<S>& fused) const {
  auto c1 = silu(causal_conv2d(fused, conv1_w_, conv1_b_));
  auto c2 = silu(causal_conv2d(c1, conv2_w_, conv2_b_));
  auto p = silu(proj_(channels_to_cols(c2)));
  AccentResult<S> out;
  out.embedding = causal_conv1d(p, cls_conv_w_, cls_conv_b_);
  out.frame_logits = cls_lin_(out.embedding);
  out.utterance_posterior = softmax_rows(mean_rows(out.frame_logits));
  return out;
}

template <typename S>
AccentResult<S> LafModule<S>::aid_decode_step(const Tensor<S>& fused_new,
                                              Cache& cache) const {
  const int64_t t_new = fused_new.dim(1);
  const int64_t tail = kConvKernel - 1;

  auto buf1 = cache.conv1_tail.defined()
                  ? concat_time3d(cache.conv1_tail, fused_new)
                  : fused_new;
  auto c1_full = silu(causal_conv2d(buf1, conv1_w_, conv1_b_));
  const int64_t ctx1 = buf1.dim(1) - t_new;
  auto c1_new = ctx1 == 0 ? c1_full : slice_time3d(c1_full, ctx1, t_new);
  const int64_t keep1 = std::min<int64_t>(tail, buf1.dim(1));
  cache.conv1_tail = slice_time3d(buf1, buf1.dim(1) - keep1, keep1);

  auto buf2 = cache.conv2_tail.defined()
                  ? concat_time3d(cache.conv2_tail, c1_new)
                  : c1_new;
  auto c2_full = silu(causal_conv2d(buf2, conv2_w_, conv2_b_));
  const int64_t ctx2 = buf2.dim(1) - t_new;
  auto c2_new = ctx2 == 0 ? c2_full : slice_time3d(c2_full, ctx2, t_new);
  const int64_t keep2 = std::min<int64_t>(tail, buf2.dim(1));
  cache.conv2_tail = slice_time3d(buf2, buf2.dim(1) - keep2, keep2);

  auto p = silu(proj_(channels_to_cols(c2_new)));
  auto buf3 = cache.cls_tail.defined() ? concat_rows<S>({cache.cls_tail, p}) : p;
  auto hac_full = causal_conv1d(buf3, cls_conv_w_, cls_conv_b_);
  const int64_t ctx3 = buf3.dim(0) - t_new;
  AccentResult<S> out;
  out.embedding = ctx3 == 0 ? hac_full : slice_rows(hac_full, ctx3, t_new);
  const int64_t keep3 = std::min<int64_t>(kClsKernel - 1, buf3.dim(0));
  cache.cls_tail = slice_rows(buf3, buf3.dim(0) - keep3, keep3);

  out.frame_logits = cls_lin_(out.embedding);
  out.utterance_posterior = softmax_rows(mean_rows(out.frame_logits));
  return out;
}

template class LafModule<float>;
template class LafModule<double>;

}  // namespace af
