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
#include <utility>
#include <vector>

#include "model/model.h"

namespace af {

// Incremental chunk decoding with cached state: subsampling-conv tails,
// per-block attention history and conv left context, LAF conv history, and
// fusion key/value history. Produces the same emissions as the batch forward
// under the corresponding chunk mask; already-emitted tokens never change.
template <typename S>
class StreamingSession {
 public:
  StreamingSession(const Model<S>& model, int64_t chunk_size);

  // Feeds CMVN-normalized feature rows; processes every complete chunk.
  void push(const FeatureMatrix& feat);
  // Flushes the final partial chunk.
  void finish();

  const Hypothesis& hypothesis() const { return hyp_; }
  // (chunk index, partial transcript) after each processed chunk.
  const std::vector<std::pair<int64_t, std::string>>& partials() const {
    return partials_;
  }
  // Concatenated CTC log-prob rows over all processed chunks.
  const std::vector<S>& log_prob_rows() const { return log_probs_; }
  int64_t frames_out() const { return t_out_; }
  // Softmax of the temporal mean of the accent frame logits (needs LAF).
  std::vector<S> utterance_posterior() const;

 private:
  // Strided causal conv stream (kernel 3, stride 2) with exact batch parity.
  struct SubStream {
    const Subsample<S>* sub = nullptr;
    std::vector<S> buf;  // pending input rows, starting at global `buf_start`
    int64_t buf_start = 0;
    int64_t in_count = 0;
    int64_t out_count = 0;
    int64_t in_dim = 0, out_dim = 0;

    void init(const Subsample<S>* s);
    // Appends rows; returns newly available output rows (empty = none).
    std::vector<S> feed(const S* rows, int64_t n);
  };

  void process_mid_group(const std::vector<S>& mid_rows, int64_t n);
  void process_out_group(Tensor<S> x, int64_t n);

  const Model<S>& model_;
  int64_t chunk_;   // C at encoder resolution
  SubStream sub1_, sub2_;
  std::vector<S> mid_pending_;
  int64_t mid_dim_ = 0;
  int64_t mid_count_ = 0;  // rows already fed to the block stack
  std::vector<typename ConformerBlock<S>::Cache> block_caches_;
  typename LafModule<S>::Cache laf_cache_;
  typename CrossAttentionFusion<S>::Cache fusion_cache_;

  int64_t t_out_ = 0;       // encoder frames emitted
  int64_t chunk_idx_ = 0;   // T'-level chunks processed
  int64_t prev_class_ = -1;
  Hypothesis hyp_;
  std::vector<std::pair<int64_t, std::string>> partials_;
  std::vector<S> log_probs_;
  std::vector<S> aid_logit_sum_;
  int64_t aid_frames_ = 0;
  bool finished_ = false;
};

}  // namespace af
