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

#include "model/decoder.h"

#include <algorithm>

namespace af {

namespace {

AttnMaskPtr causal_mask(int64_t n) {
  auto m = std::make_shared<AttnMask>();
  m->rows = n;
  m->cols = n;
  m->allow.assign(n * n, 0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j <= i; ++j) m->allow[i * n + j] = 1;
  return m;
}

}  // namespace

template <typename S>
AttentionDecoder<S>::AttentionDecoder(ParamRegistry<S>& reg,
                                      const DecoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  emb_ = reg.add("decoder.emb",
                 Tensor<S>::randn({cfg.vocab + 2, cfg.d}, rng, S(0.5), true));
  pos_ = reg.add("decoder.pos",
                 Tensor<S>::randn({cfg.max_len, cfg.d}, rng, S(0.1), true));
  layers_.reserve(cfg.layers);
  for (int64_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l + 1);
    Layer layer;
    layer.self_ln = LayerNormP<S>(reg, p + ".self.ln", cfg.d);
    layer.self_attn = MultiHeadAttention<S>(reg, p + ".self", cfg.d, cfg.heads, rng);
    layer.cross_ln = LayerNormP<S>(reg, p + ".cross.ln", cfg.d);
    layer.cross_attn =
        MultiHeadAttention<S>(reg, p + ".cross", cfg.d, cfg.heads, rng);
    layer.ffn_ln = LayerNormP<S>(reg, p + ".ffn.ln", cfg.d);
    layer.ffn_w1 = Linear<S>(reg, p + ".ffn.w1", cfg.d,
                             cfg.d * cfg.ffn_expansion, rng);
    layer.ffn_w2 = Linear<S>(reg, p + ".ffn.w2", cfg.d * cfg.ffn_expansion,
                             cfg.d, rng);
    layers_.push_back(std::move(layer));
  }
  out_ln_ = LayerNormP<S>(reg, "decoder.out.ln", cfg.d);
  out_ = Linear<S>(reg, "decoder.out", cfg.d, cfg.vocab, rng);
}

template <typename S>
Tensor<S> AttentionDecoder<S>::forward(const Tensor<S>& o_att,
                                       const std::vector<int64_t>& target,
                                       Direction dir) const {
  if (target.empty()) {
    throw ContractError("attention decoder: empty target");
  }
  const int64_t n = static_cast<int64_t>(target.size());
  if (n > cfg_.max_len) {
    throw InputError("attention decoder: target of " + std::to_string(n) +
                     " exceeds max length " + std::to_string(cfg_.max_len));
  }
  std::vector<int64_t> seq = target;
  if (dir == Direction::kR2L) std::reverse(seq.begin(), seq.end());
  std::vector<int64_t> ids(n);
  ids[0] = dir == Direction::kL2R ? cfg_.vocab : cfg_.vocab + 1;
  for (int64_t j = 1; j < n; ++j) ids[j] = seq[j - 1];

  std::vector<int64_t> pos_idx(n);
  for (int64_t j = 0; j < n; ++j) pos_idx[j] = j;
  auto x = add(gather_rows(emb_, ids), gather_rows(pos_, pos_idx));
  auto self_mask = causal_mask(n);
  for (const auto& layer : layers_) {
    auto ln = layer.self_ln(x);
    x = add(x, layer.self_attn.o(layer.self_attn.attend(
                   layer.self_attn.q(ln), layer.self_attn.k(ln),
                   layer.self_attn.v(ln), self_mask)));
    x = add(x, layer.cross_attn(layer.cross_ln(x), o_att, nullptr));
    x = add(x, layer.ffn_w2(silu(layer.ffn_w1(layer.ffn_ln(x)))));
  }
  return out_(out_ln_(x));
}

template <typename S>
Tensor<S> AttentionDecoder<S>::teacher_ce(const Tensor<S>& o_att,
                                          const std::vector<int64_t>& target,
                                          Direction dir) const {
  std::vector<int64_t> seq = target;
  if (dir == Direction::kR2L) std::reverse(seq.begin(), seq.end());
  auto logp = log_softmax_rows(forward(o_att, target, dir));
  return scale(nll_pick(logp, seq), S(1.0 / double(seq.size())));
}

template <typename S>
double AttentionDecoder<S>::log_likelihood(const Tensor<S>& o_att,
                                           const std::vector<int64_t>& target,
                                           Direction dir) const {
  NoGradGuard ng;
  std::vector<int64_t> seq = target;
  if (dir == Direction::kR2L) std::reverse(seq.begin(), seq.end());
  auto logp = log_softmax_rows(forward(o_att, target, dir));
  double ll = 0.0;
  for (size_t j = 0; j < seq.size(); ++j)
    ll += static_cast<double>(logp.at(j, seq[j]));
  return ll;
}

template <typename S>
Hypothesis rescore(const std::vector<Hypothesis>& nbest, const Tensor<S>& o_att,
                   const AttentionDecoder<S>& decoder, double ctc_weight) {
  if (nbest.empty()) throw ContractError("rescore: empty n-best list");
  const Hypothesis* best = nullptr;
  double best_score = 0.0;
  for (const auto& hyp : nbest) {
    double att = 0.0;
    if (!hyp.tokens.empty()) {
      att = 0.5 * decoder.log_likelihood(o_att, hyp.tokens, Direction::kL2R) +
            0.5 * decoder.log_likelihood(o_att, hyp.tokens, Direction::kR2L);
    }
    const double combined = ctc_weight * hyp.score + (1.0 - ctc_weight) * att;
    const bool wins =
        best == nullptr || combined > best_score ||
        (combined == best_score &&
         (hyp.tokens.size() < best->tokens.size() ||
          (hyp.tokens.size() == best->tokens.size() && hyp.tokens < best->tokens)));
    if (wins) {
      best = &hyp;
      best_score = combined;
    }
  }
  return *best;
}

template class AttentionDecoder<float>;
template class AttentionDecoder<double>;
template Hypothesis rescore(const std::vector<Hypothesis>&, const Tensor<float>&,
                            const AttentionDecoder<float>&, double);
template Hypothesis rescore(const std::vector<Hypothesis>&, const Tensor<double>&,
                            const AttentionDecoder<double>&, double);

template class CtcHead<float>;
template class CtcHead<double>;

}  // namespace af
