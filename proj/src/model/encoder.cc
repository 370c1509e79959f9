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

#include "model/encoder.h"

namespace af {

void EncoderConfig::validate() const {
  if (d % heads != 0) {
    throw ConfigError("encoder: d=" + std::to_string(d) +
                      " not divisible by heads=" + std::to_string(heads));
  }
  if (sub2_after < 1 || sub2_after >= blocks) {
    throw ConfigError("encoder: sub2_after must be in [1, blocks)");
  }
  if (taps < 1 || taps > blocks - sub2_after) {
    throw ConfigError("encoder: taps=" + std::to_string(taps) +
                      " must fit in the post-subsampling blocks (" +
                      std::to_string(blocks - sub2_after) + ")");
  }
}

template <typename S>
ConformerBlock<S>::ConformerBlock(ParamRegistry<S>& reg,
                                  const std::string& prefix, int64_t d,
                                  int64_t heads, int64_t expansion,
                                  int64_t kernel, Rng& rng)
    : d_(d), kernel_(kernel) {
  ffn1_.ln = LayerNormP<S>(reg, prefix + ".ffn1.ln", d);
  ffn1_.w1 = Linear<S>(reg, prefix + ".ffn1.w1", d, d * expansion, rng);
  ffn1_.w2 = Linear<S>(reg, prefix + ".ffn1.w2", d * expansion, d, rng);
  attn_ln_ = LayerNormP<S>(reg, prefix + ".attn.ln", d);
  attn_ = MultiHeadAttention<S>(reg, prefix + ".attn", d, heads, rng);
  conv_ln_ = LayerNormP<S>(reg, prefix + ".conv.ln", d);
  conv_pw1_ = Linear<S>(reg, prefix + ".conv.pw1", d, 2 * d, rng);
  conv_dw_w_ = reg.add(prefix + ".conv.dw.w", init_weight<S>(rng, {d, kernel}, kernel));
  conv_dw_b_ = reg.add(prefix + ".conv.dw.b", Tensor<S>::zeros({d}, true));
  conv_norm_ = LayerNormP<S>(reg, prefix + ".conv.norm", d);
  conv_pw2_ = Linear<S>(reg, prefix + ".conv.pw2", d, d, rng);
  ffn2_.ln = LayerNormP<S>(reg, prefix + ".ffn2.ln", d);
  ffn2_.w1 = Linear<S>(reg, prefix + ".ffn2.w1", d, d * expansion, rng);
  ffn2_.w2 = Linear<S>(reg, prefix + ".ffn2.w2", d * expansion, d, rng);
  out_ln_ = LayerNormP<S>(reg, prefix + ".out.ln", d);
}

template <typename S>
Tensor<S> ConformerBlock<S>::conv_post(const Tensor<S>& dw_out) const {
  return conv_pw2_(silu(conv_norm_(dw_out)));
}

template <typename S>
Tensor<S> ConformerBlock<S>::conv_module(const Tensor<S>& x) const {
  auto gated = glu(conv_pw1_(conv_ln_(x)));
  auto dw = causal_depthwise_conv1d(gated, conv_dw_w_, conv_dw_b_);
  return conv_post(dw);
}

template <typename S>
Tensor<S> ConformerBlock<S>::forward(const Tensor<S>& x, AttnMaskPtr mask) const {
  auto h1 = add(x, scale(ffn1_.run(x), S(0.5)));
  auto ln = attn_ln_(h1);
  auto h2 = add(h1, attn_.o(attn_.attend(attn_.q(ln), attn_.k(ln), attn_.v(ln),
                                         mask)));
  auto h3 = add(h2, conv_module(h2));
  auto h4 = add(h3, scale(ffn2_.run(h3), S(0.5)));
  return out_ln_(h4);
}

template <typename S>
Tensor<S> ConformerBlock<S>::forward_step(const Tensor<S>& x_new,
                                          Cache& cache) const {
  auto h1 = add(x_new, scale(ffn1_.run(x_new), S(0.5)));
  auto ln = attn_ln_(h1);
  auto k_new = attn_.k(ln);
  auto v_new = attn_.v(ln);
  cache.k = cache.k.defined() ? concat_rows<S>({cache.k, k_new}) : k_new;
  cache.v = cache.v.defined() ? concat_rows<S>({cache.v, v_new}) : v_new;
  // New rows may attend to the whole history through the current chunk end,
  // which is exactly the chunk-mask row for these positions.
  auto h2 = add(h1, attn_.o(attn_.attend(attn_.q(ln), cache.k, cache.v,
                                         nullptr)));

  auto gated = glu(conv_pw1_(conv_ln_(h2)));
  const int64_t t_new = gated.dim(0);
  auto buf = cache.conv_tail.defined()
                 ? concat_rows<S>({cache.conv_tail, gated})
                 : gated;
  const int64_t ctx = buf.dim(0) - t_new;
  auto dw = causal_depthwise_conv1d(buf, conv_dw_w_, conv_dw_b_);
  auto dw_new = ctx == 0 ? dw : slice_rows(dw, ctx, t_new);
  const int64_t keep = std::min<int64_t>(kernel_ - 1, buf.dim(0));
  cache.conv_tail = slice_rows(buf, buf.dim(0) - keep, keep);
  auto h3 = add(h2, conv_post(dw_new));

  auto h4 = add(h3, scale(ffn2_.run(h3), S(0.5)));
  return out_ln_(h4);
}

template <typename S>
Encoder<S>::Encoder(ParamRegistry<S>& reg, const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  sub1_ = Subsample<S>(reg, "encoder.sub1", cfg.feat_dim, cfg.d, rng);
  sub2_ = Subsample<S>(reg, "encoder.sub2", cfg.d, cfg.d, rng);
  pos_ = reg.add("encoder.pos",
                 Tensor<S>::randn({cfg.max_len, cfg.d}, rng, S(0.1), true));
  blocks_.reserve(cfg.blocks);
  for (int64_t i = 1; i <= cfg.blocks; ++i) {
    blocks_.emplace_back(reg, "encoder.block" + std::to_string(i), cfg.d,
                         cfg.heads, cfg.ffn_expansion, cfg.conv_kernel, rng);
  }
}

template <typename S>
Tensor<S> Encoder<S>::positional(int64_t offset, int64_t len) const {
  if (offset + len > cfg_.max_len) {
    throw InputError("encoder: " + std::to_string(offset + len) +
                     " post-frontend frames exceed max_len " +
                     std::to_string(cfg_.max_len));
  }
  std::vector<int64_t> idx(len);
  for (int64_t i = 0; i < len; ++i) idx[i] = offset + i;
  return gather_rows(pos_, idx);
}

template <typename S>
EncoderTaps<S> Encoder<S>::encode(const Tensor<S>& features,
                                  const ChunkMask& mask) const {
  const int64_t t_in = features.dim(0);
  if (t_in < 4) {
    throw InputError("encoder: input of " + std::to_string(t_in) +
                     " frames is too short to survive both subsamplings");
  }
  const int64_t t_prime = out_len(t_in);
  if (mask.matrix->rows != t_prime) {
    throw ShapeError("encoder: chunk mask of " + std::to_string(mask.matrix->rows) +
                     " rows does not match T' = " + std::to_string(t_prime));
  }

  auto x = sub1_.forward(features);
  const int64_t t_mid = x.dim(0);
  x = add(x, positional(0, t_mid));
  auto mid_mask = mask.scaled(t_mid, 2);
  for (int64_t i = 0; i < cfg_.sub2_after; ++i)
    x = blocks_[i].forward(x, mid_mask);

  x = sub2_.forward(x);
  EncoderTaps<S> out;
  out.taps.reserve(cfg_.taps);
  for (int64_t i = cfg_.sub2_after; i < cfg_.blocks; ++i) {
    x = blocks_[i].forward(x, mask.matrix);
    if (i + 1 >= cfg_.tap_lo()) out.taps.push_back(x);
  }
  out.final = out.taps.back();
  out.subsample_factor = 4;
  return out;
}

template class ConformerBlock<float>;
template class ConformerBlock<double>;
template struct Subsample<float>;
template struct Subsample<double>;
template class Encoder<float>;
template class Encoder<double>;

}  // namespace af
