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

#include "runtime/stream.h"

#include <cmath>

namespace af {

template <typename S>
StreamingSession<S>::StreamingSession(const Model<S>& model, int64_t chunk_size)
    : model_(model), chunk_(chunk_size) {
  if (chunk_size < 1) {
    throw ConfigError("stream: chunk size must be >= 1, got " +
                      std::to_string(chunk_size));
  }
  sub1_.init(&model.encoder().sub1());
  sub2_.init(&model.encoder().sub2());
  mid_dim_ = model.config().encoder.d;
  block_caches_.resize(model.config().encoder.blocks);
  if (model.has_laf()) {
    aid_logit_sum_.assign(model.config().accents, S(0));
  }
}

template <typename S>
void StreamingSession<S>::SubStream::init(const Subsample<S>* s) {
  sub = s;
  in_dim = s->w.dim(1);
  out_dim = s->w.dim(0);
}

template <typename S>
std::vector<S> StreamingSession<S>::SubStream::feed(const S* rows, int64_t n) {
  if (n > 0) {
    buf.insert(buf.end(), rows, rows + n * in_dim);
    in_count += n;
  }
  const int64_t out_hi = in_count / 2;
  if (out_hi <= out_count) return {};
  const int64_t n_new = out_hi - out_count;
  std::vector<S> out(static_cast<size_t>(n_new * out_dim));
  const auto& wv = sub->w.data();
  const auto& bv = sub->b.data();
  const int64_t k = Subsample<S>::kKernel;
  // Mirrors causal_conv1d + silu arithmetic exactly, with global row indexing
  // so chunk boundaries do not introduce spurious zero padding.
  for (int64_t m = out_count; m < out_hi; ++m) {
    const int64_t anchor = 2 * m + 1;
    for (int64_t co = 0; co < out_dim; ++co) {
      S s = bv[co];
      const S* wc = wv.data() + co * in_dim * k;
      for (int64_t ci = 0; ci < in_dim; ++ci) {
        for (int64_t j = 0; j < k; ++j) {
          const int64_t g = anchor - j;
          if (g < 0) continue;
          s += wc[ci * k + j] * buf[(g - buf_start) * in_dim + ci];
        }
      }
      out[(m - out_count) * out_dim + co] = s / (S(1) + std::exp(-s));
    }
  }
  out_count = out_hi;
  const int64_t keep_from = std::max<int64_t>(0, 2 * out_count - 1);
  if (keep_from > buf_start) {
    buf.erase(buf.begin(), buf.begin() + (keep_from - buf_start) * in_dim);
    buf_start = keep_from;
  }
  return out;
}

template <typename S>
void StreamingSession<S>::push(const FeatureMatrix& feat) {
  if (finished_) throw ContractError("stream: push after finish");
  NoGradGuard ng;
  std::vector<S> rows(feat.data.size());
  for (size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<S>(feat.data[i]);
  auto mid_new = sub1_.feed(rows.data(), feat.frames);
  mid_pending_.insert(mid_pending_.end(), mid_new.begin(), mid_new.end());
  const int64_t group = 2 * chunk_;
  while (static_cast<int64_t>(mid_pending_.size()) / mid_dim_ >= group) {
    std::vector<S> head(mid_pending_.begin(),
                        mid_pending_.begin() + group * mid_dim_);
    mid_pending_.erase(mid_pending_.begin(),
                       mid_pending_.begin() + group * mid_dim_);
    process_mid_group(head, group);
  }
}

template <typename S>
void StreamingSession<S>::finish() {
  if (finished_) return;
  finished_ = true;
  NoGradGuard ng;
  const int64_t left = static_cast<int64_t>(mid_pending_.size()) / mid_dim_;
  if (left > 0) {
    process_mid_group(mid_pending_, left);
    mid_pending_.clear();
  }
}

template <typename S>
void StreamingSession<S>::process_mid_group(const std::vector<S>& mid_rows,
                                            int64_t n) {
  auto x = Tensor<S>::from({n, mid_dim_},
                           std::vector<S>(mid_rows.begin(),
                                          mid_rows.begin() + n * mid_dim_));
  x = add(x, model_.encoder().positional(mid_count_, n));
  mid_count_ += n;
  const int64_t s = model_.config().encoder.sub2_after;
  for (int64_t i = 0; i < s; ++i)
    x = model_.encoder().blocks()[i].forward_step(x, block_caches_[i]);
  auto out_rows = sub2_.feed(x.data().data(), n);
  const int64_t n_out = static_cast<int64_t>(out_rows.size()) / mid_dim_;
  if (n_out == 0) return;
  process_out_group(Tensor<S>::from({n_out, mid_dim_}, std::move(out_rows)),
                    n_out);
}

template <typename S>
void StreamingSession<S>::process_out_group(Tensor<S> x, int64_t n) {
  const auto& ecfg = model_.config().encoder;
  EncoderTaps<S> taps;
  taps.taps.reserve(ecfg.taps);
  for (int64_t i = ecfg.sub2_after; i < ecfg.blocks; ++i) {
    x = model_.encoder().blocks()[i].forward_step(x, block_caches_[i]);
    if (i + 1 >= ecfg.tap_lo()) taps.taps.push_back(x);
  }
  taps.final = taps.taps.back();

  Tensor<S> h_ac;
  if (model_.has_laf()) {
    auto accent = model_.laf().aid_decode_step(
        model_.laf().layer_adapt(taps), laf_cache_);
    h_ac = accent.embedding;
    for (int64_t t = 0; t < n; ++t)
      for (int64_t a = 0; a < model_.config().accents; ++a)
        aid_logit_sum_[a] += accent.frame_logits.at(t, a);
    aid_frames_ += n;
  }

  Tensor<S> o_att;
  if (model_.has_fusion()) {
    o_att = model_.fusion()
                .forward_step(model_.has_laf() ? h_ac : taps.final, taps.final,
                              fusion_cache_)
                .o_att;
  } else {
    o_att = taps.final;
  }

  auto logp = model_.ctc_head().log_probs(o_att);
  const int64_t classes = logp.dim(1);
  log_probs_.insert(log_probs_.end(), logp.data().begin(), logp.data().end());
  for (int64_t t = 0; t < n; ++t) {
    int64_t best = 0;
    for (int64_t k = 1; k < classes; ++k)
      if (logp.at(t, k) > logp.at(t, best)) best = k;
    hyp_.score += static_cast<double>(logp.at(t, best));
    if (best != kCtcBlank && best != prev_class_) {
      hyp_.tokens.push_back(best - 1);
      hyp_.emitted_at.push_back(chunk_idx_);
    }
    prev_class_ = best;
  }
  t_out_ += n;
  partials_.push_back({chunk_idx_, tokens_to_string(hyp_.tokens)});
  ++chunk_idx_;
}

template <typename S>
std::vector<S> StreamingSession<S>::utterance_posterior() const {
  if (!model_.has_laf() || aid_frames_ == 0) return {};
  std::vector<S> mean(aid_logit_sum_);
  for (auto& v : mean) v /= static_cast<S>(aid_frames_);
  auto sm = softmax_rows(
      Tensor<S>::from({1, static_cast<int64_t>(mean.size())}, mean));
  return sm.data();
}

template class StreamingSession<float>;
template class StreamingSession<double>;

}  // namespace af
