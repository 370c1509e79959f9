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

#include <cmath>
#include <string>
#include <vector>

#include "core/rng.h"
#include "core/tensor.h"

namespace af {

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
};

// Ordered parameter collection; registration order is construction order and
// therefore deterministic for a given config (checkpoint layouts and
// gradient sweeps rely on it).
template <typename S>
class ParamRegistry {
 public:
  Tensor<S> add(const std::string& name, Tensor<S> t) {
    for (const auto& p : params_) {
      if (p.name == name) {
        throw ContractError("params: duplicate name `" + name + "`");
      }
    }
    params_.push_back({name, t});
    return t;
  }

  std::vector<NamedParam<S>>& all() { return params_; }
  const std::vector<NamedParam<S>>& all() const { return params_; }

 private:
  std::vector<NamedParam<S>> params_;
};

template <typename S>
Tensor<S> init_weight(Rng& rng, const Shape& shape, int64_t fan_in) {
  return Tensor<S>::randn(shape, rng,
                          static_cast<S>(1.0 / std::sqrt(double(fan_in))), true);
}

template <typename S>
struct Linear {
  Tensor<S> w, b;

  Linear() = default;
  Linear(ParamRegistry<S>& reg, const std::string& prefix, int64_t in,
         int64_t out, Rng& rng) {
    w = reg.add(prefix + ".w", init_weight<S>(rng, {in, out}, in));
    b = reg.add(prefix + ".b", Tensor<S>::zeros({out}, true));
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    return add_rowvec(matmul(x, w), b);
  }
};

template <typename S>
struct LayerNormP {
  Tensor<S> g, b;

  LayerNormP() = default;
  LayerNormP(ParamRegistry<S>& reg, const std::string& prefix, int64_t d) {
    g = reg.add(prefix + ".g", Tensor<S>::full({d}, S(1), true));
    b = reg.add(prefix + ".b", Tensor<S>::zeros({d}, true));
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm(x, g, b); }
};

// q/k/v/o projection set; `attend` is shared by batch and streaming paths so
// both run the identical arithmetic.
template <typename S>
struct MultiHeadAttention {
  Linear<S> q, k, v, o;
  int64_t d = 0, heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamRegistry<S>& reg, const std::string& prefix,
                     int64_t d_in, int64_t n_heads, Rng& rng)
      : q(reg, prefix + ".q", d_in, d_in, rng),
        k(reg, prefix + ".k", d_in, d_in, rng),
        v(reg, prefix + ".v", d_in, d_in, rng),
        o(reg, prefix + ".o", d_in, d_in, rng),
        d(d_in),
        heads(n_heads) {
    if (d_in % n_heads != 0) {
      throw ConfigError("attention: width " + std::to_string(d_in) +
                        " not divisible by " + std::to_string(n_heads) +
                        " heads");
    }
  }

  Tensor<S> attend(const Tensor<S>& qq, const Tensor<S>& kk,
                   const Tensor<S>& vv, AttnMaskPtr mask) const {
    const int64_t dh = d / heads;
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(double(dh)));
    std::vector<Tensor<S>> outs;
    outs.reserve(heads);
    for (int64_t h = 0; h < heads; ++h) {
      auto qh = slice_cols(qq, h * dh, dh);
      auto kh = slice_cols(kk, h * dh, dh);
      auto vh = slice_cols(vv, h * dh, dh);
      auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
      outs.push_back(matmul(softmax_rows(scores, mask), vh));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
  }

  Tensor<S> operator()(const Tensor<S>& query_in, const Tensor<S>& kv_in,
                       AttnMaskPtr mask) const {
    return o(attend(q(query_in), k(kv_in), v(kv_in), mask));
  }
};

// GLU over the last axis: first half gated by sigmoid of the second half.
template <typename S>
Tensor<S> glu(const Tensor<S>& x) {
  const int64_t half = x.dim(1) / 2;
  return mul(slice_cols(x, 0, half), sigmoid(slice_cols(x, half, half)));
}

}  // namespace af
