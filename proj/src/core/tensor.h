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

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/error.h"
#include "core/rng.h"

namespace af {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Boolean attention mask, row-major [rows x cols]; entry != 0 means "query row
// may attend to key col". Ops hold a shared_ptr so the mask outlives backward.
struct AttnMask {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<uint8_t> allow;

  bool at(int64_t r, int64_t c) const { return allow[r * cols + c] != 0; }
};
using AttnMaskPtr = std::shared_ptr<const AttnMask>;

namespace detail {

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until first accumulation
  bool requires_grad = false;
  uint64_t seq = 0;  // creation order; parents always have smaller seq
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // null for leaves

  std::vector<S>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
    return grad;
  }
};

uint64_t next_seq();

}  // namespace detail

// Disables graph recording in scope; ops produce constant tensors.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Handle to an immutable value plus optional autodiff record. Copies alias.
// Parameter tensors are mutated in place only by the optimizer.
template <typename S>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<S>>;

  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, S v, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<S> data,
                     bool requires_grad = false);
  static Tensor scalar(S v, bool requires_grad = false);
  // Gaussian init, std `stddev`; used for parameters.
  static Tensor randn(const Shape& shape, Rng& rng, S stddev,
                      bool requires_grad = true);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t dim(int i) const { return node_->shape[i]; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<S>& data() { return node_->value; }
  const std::vector<S>& data() const { return node_->value; }
  std::vector<S>& grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

  S item() const;
  S at(int64_t i) const { return node_->value[i]; }
  S at(int64_t i, int64_t j) const {
    return node_->value[i * node_->shape[1] + j];
  }

  NodePtr node() const { return node_; }
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

 private:
  NodePtr node_;
};

// Factory for custom differentiable ops (used by the CTC loss). `backward_fn`
// receives the output node; parents are node.parents in the order given here.
template <typename S>
Tensor<S> make_op(const Shape& shape, std::vector<S> value,
                  const std::vector<Tensor<S>>& parents,
                  std::function<void(detail::Node<S>&)> backward_fn);

// ---- primitive ops ----
template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& a, S c);
// Scale by a scalar tensor (the learnable LAF layer weights).
template <typename S> Tensor<S> scale_by(const Tensor<S>& a, const Tensor<S>& s);
// x: [N x d], b: [d]; adds b to every row.
template <typename S> Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& b);
template <typename S> Tensor<S> relu(const Tensor<S>& x);
template <typename S> Tensor<S> sigmoid(const Tensor<S>& x);
template <typename S> Tensor<S> silu(const Tensor<S>& x);

// Shift-stable softmax over the last axis of a 2-D tensor, optionally masked.
// Masked-out entries produce exactly 0 and receive zero gradient.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x, AttnMaskPtr mask = nullptr);
template <typename S> Tensor<S> log_softmax_rows(const Tensor<S>& x);

// Per-row normalize to mean 0 / population variance 1, then gain*x + bias.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, S eps = S(1e-5));

// Causal temporal convolution. x: [T x Cin], w: [Cout x Cin x K], b: [Cout]
// (or undefined for no bias). Output frame t sees inputs <= s*t + s - 1, i.e.
// within the t-th stride group; zero padding on the past side only.
// Output length = floor(T / stride).
template <typename S>
Tensor<S> causal_conv1d(const Tensor<S>& x, const Tensor<S>& w,
                        const Tensor<S>& b, int64_t stride = 1);

// Depthwise causal conv. x: [T x C], w: [C x K], b: [C] or undefined.
template <typename S>
Tensor<S> causal_depthwise_conv1d(const Tensor<S>& x, const Tensor<S>& w,
                                  const Tensor<S>& b);

// 2-D conv over (time x feature) maps: x [Cin x T x F], w [Cout x Cin x Kt x Kf],
// b [Cout] or undefined. Causal on the time axis, centered on the feature axis
// (Kf odd). Output [Cout x T x F].
template <typename S>
Tensor<S> causal_conv2d(const Tensor<S>& x, const Tensor<S>& w,
                        const Tensor<S>& b);

// Stack N same-shaped [T x F] maps into [N x T x F].
template <typename S>
Tensor<S> stack_channels(const std::vector<Tensor<S>>& maps);
// [C x T x F] -> [T x C*F], channel-major within a row.
template <typename S> Tensor<S> channels_to_cols(const Tensor<S>& x);

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, int64_t start, int64_t len);
template <typename S> Tensor<S> concat_cols(const std::vector<Tensor<S>>& xs);
template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, int64_t start, int64_t len);
template <typename S> Tensor<S> concat_rows(const std::vector<Tensor<S>>& xs);
template <typename S> Tensor<S> transpose(const Tensor<S>& x);

// out[i, :] = table[idx[i], :]; gradient scatter-adds into the table.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& table, const std::vector<int64_t>& idx);

// [T x K] -> [1 x K] temporal mean.
template <typename S> Tensor<S> mean_rows(const Tensor<S>& x);
template <typename S> Tensor<S> sum_all(const Tensor<S>& x);

// -sum_i logp[i, labels[i]] (negative log-likelihood of picked entries).
template <typename S>
Tensor<S> nll_pick(const Tensor<S>& logp, const std::vector<int64_t>& labels);

// Same values, no graph history.
template <typename S> Tensor<S> detach(const Tensor<S>& x);

// Reverse-mode sweep from a scalar loss. Visits the recorded ops in reverse
// creation order exactly once; gradients accumulate additively (callers zero
// parameter gradients explicitly between steps).
template <typename S> void backward(const Tensor<S>& loss);

}  // namespace af
