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

#include "model/fusion.h"

namespace af {

template <typename S>
CrossAttentionFusion<S>::CrossAttentionFusion(ParamRegistry<S>& reg,
                                              const FusionConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg.d % cfg.heads != 0) {
    throw ConfigError("fusion: d=" + std::to_string(cfg.d) +
                      " not divisible by heads=" + std::to_string(cfg.heads));
  }
  wq_ = reg.add("fusion.wq", init_weight<S>(rng, {cfg.d, cfg.d}, cfg.d));
  wk_ = reg.add("fusion.wk", init_weight<S>(rng, {cfg.d, cfg.d}, cfg.d));
  wv_ = reg.add("fusion.wv", init_weight<S>(rng, {cfg.d, cfg.d}, cfg.d));
}

template <typename S>
Tensor<S> CrossAttentionFusion<S>::attend(const Tensor<S>& q, const Tensor<S>& k,
                                          const Tensor<S>& v,
                                          AttnMaskPtr mask) const {
  const int64_t dh = cfg_.d / cfg_.heads;
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(double(dh)));
  std::vector<Tensor<S>> outs;
  outs.reserve(cfg_.heads);
  for (int64_t h = 0; h < cfg_.heads; ++h) {
    auto qh = cfg_.heads == 1 ? q : slice_cols(q, h * dh, dh);
    auto kh = cfg_.heads == 1 ? k : slice_cols(k, h * dh, dh);
    auto vh = cfg_.heads == 1 ? v : slice_cols(v, h * dh, dh);
    auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    outs.push_back(matmul(softmax_rows(scores, mask), vh));
  }
  return cfg_.heads == 1 ? outs[0] : concat_cols(outs);
}

template <typename S>
typename CrossAttentionFusion<S>::Out CrossAttentionFusion<S>::forward(
    const Tensor<S>& h_ac, const Tensor<S>& h_ga, AttnMaskPtr mask) const {
  const Tensor<S>& query_src = cfg_.mode == FusionMode::kSelf ? h_ga : h_ac;
  if (query_src.dim(0) != h_ga.dim(0) || query_src.dim(1) != h_ga.dim(1)) {
    throw ShapeError("fusion: query " + shape_str(query_src.shape()) +
                     " and key/value " + shape_str(h_ga.shape()) +
                     " resolutions disagree");
  }
  k_proj_count_ = v_proj_count_ = 0;
  auto q = matmul(query_src, wq_);
  auto k = matmul(h_ga, wk_);
  ++k_proj_count_;
  auto v = matmul(h_ga, wv_);
  ++v_proj_count_;
  Out out;
  out.q_att = relu(attend(q, k, v, mask));
  // Stage 2 reuses the projected K and V verbatim; the stage-1 output is the
  // query without re-projection.
  out.o_att = relu(attend(out.q_att, k, v, mask));
  if (cfg_.residual) out.o_att = add(out.o_att, h_ga);
  return out;
}

template <typename S>
typename CrossAttentionFusion<S>::Out CrossAttentionFusion<S>::forward_step(
    const Tensor<S>& h_ac_new, const Tensor<S>& h_ga_new, Cache& cache) const {
  const Tensor<S>& query_src =
      cfg_.mode == FusionMode::kSelf ? h_ga_new : h_ac_new;
  k_proj_count_ = v_proj_count_ = 0;
  auto q = matmul(query_src, wq_);
  auto k_new = matmul(h_ga_new, wk_);
  ++k_proj_count_;
  auto v_new = matmul(h_ga_new, wv_);
  ++v_proj_count_;
  cache.k = cache.k.defined() ? concat_rows<S>({cache.k, k_new}) : k_new;
  cache.v = cache.v.defined() ? concat_rows<S>({cache.v, v_new}) : v_new;
  Out out;
  out.q_att = relu(attend(q, cache.k, cache.v, nullptr));
  out.o_att = relu(attend(out.q_att, cache.k, cache.v, nullptr));
  if (cfg_.residual) out.o_att = add(out.o_att, h_ga_new);
  return out;
}

template class CrossAttentionFusion<float>;
template class CrossAttentionFusion<double>;

}  // namespace af
