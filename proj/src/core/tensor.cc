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

#include "core/tensor.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace af {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

namespace detail {
uint64_t next_seq() {
  static std::atomic<uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

namespace {

template <typename S>
using NodePtr = std::shared_ptr<detail::Node<S>>;

template <typename S>
NodePtr<S> new_node(Shape shape, std::vector<S> value, bool requires_grad) {
  auto n = std::make_shared<detail::Node<S>>();
  if (shape_numel(shape) != static_cast<int64_t>(value.size())) {
    throw ShapeError("tensor: data length " + std::to_string(value.size()) +
                     " does not match shape " + shape_str(shape));
  }
  for (int64_t e : shape) {
    if (e <= 0) throw ShapeError("tensor: non-positive extent in " + shape_str(shape));
  }
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->seq = detail::next_seq();
  return n;
}

// Builds the result node; drops graph history when grads are off or no parent
// needs them.
template <typename S>
Tensor<S> make_result(Shape shape, std::vector<S> value,
                      std::vector<Tensor<S>> parents,
                      std::function<void(detail::Node<S>&)> bwd) {
  bool track = g_grad_enabled;
  bool any = false;
  if (track) {
    for (const auto& p : parents) any = any || p.requires_grad();
  }
  auto n = new_node<S>(std::move(shape), std::move(value), track && any);
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(bwd);
  }
  return Tensor<S>(n);
}

template <typename S>
void check_2d(const Tensor<S>& x, const char* op) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected 2-D tensor, got " +
                     shape_str(x.shape()));
  }
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

// C[M x N] += A[M x K] * B[K x N]; fixed i,k,j order so each output element
// accumulates over k in ascending order (bit-stable for any M).
template <typename S>
void gemm_nn_acc(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    S* crow = c + i * n;
    const S* arow = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M x N] += A^T * B with A given as [K x M], B as [K x N].
template <typename S>
void gemm_tn_acc(S* c, const S* a, const S* b, int64_t k, int64_t m, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const S* arow = a + p * m;
    const S* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const S av = arow[i];
      S* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename S>
std::vector<S> transpose_copy(const S* x, int64_t rows, int64_t cols) {
  std::vector<S> t(static_cast<size_t>(rows * cols));
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) t[j * rows + i] = x[i * cols + j];
  return t;
}

template <typename S>
void acc(std::vector<S>& dst, const std::vector<S>& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---- Tensor factories ----

template <typename S>
Tensor<S> Tensor<S>::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(new_node<S>(shape, std::vector<S>(shape_numel(shape), S(0)),
                            requires_grad));
}

template <typename S>
Tensor<S> Tensor<S>::full(const Shape& shape, S v, bool requires_grad) {
  return Tensor(new_node<S>(shape, std::vector<S>(shape_numel(shape), v),
                            requires_grad));
}

template <typename S>
Tensor<S> Tensor<S>::from(const Shape& shape, std::vector<S> data,
                          bool requires_grad) {
  return Tensor(new_node<S>(shape, std::move(data), requires_grad));
}

template <typename S>
Tensor<S> Tensor<S>::scalar(S v, bool requires_grad) {
  return Tensor(new_node<S>({1}, std::vector<S>{v}, requires_grad));
}

template <typename S>
Tensor<S> Tensor<S>::randn(const Shape& shape, Rng& rng, S stddev,
                           bool requires_grad) {
  std::vector<S> d(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : d) v = static_cast<S>(rng.normal()) * stddev;
  return Tensor(new_node<S>(shape, std::move(d), requires_grad));
}

template <typename S>
S Tensor<S>::item() const {
  if (numel() != 1) {
    throw ContractError("item: tensor is not scalar, shape " + shape_str(shape()));
  }
  return node_->value[0];
}

template <typename S>
Tensor<S> make_op(const Shape& shape, std::vector<S> value,
                  const std::vector<Tensor<S>>& parents,
                  std::function<void(detail::Node<S>&)> backward_fn) {
  return make_result<S>(shape, std::move(value), parents, std::move(backward_fn));
}

// ---- ops ----

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  std::vector<S> out(static_cast<size_t>(m * n), S(0));
  gemm_nn_acc(out.data(), a.data().data(), b.data().data(), m, k, n);
  return make_result<S>(
      {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node<S>& nd) {
        auto& pa = nd.parents[0];
        auto& pb = nd.parents[1];
        if (pa->requires_grad) {
          // dA += dC * B^T, via B transposed then nn-gemm.
          auto bt = transpose_copy(pb->value.data(), k, n);
          gemm_nn_acc(pa->ensure_grad().data(), nd.grad.data(), bt.data(), m, n, k);
        }
        if (pb->requires_grad) {
          gemm_tn_acc(pb->ensure_grad().data(), pa->value.data(), nd.grad.data(),
                      m, k, n);
        }
      });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "add");
  std::vector<S> out(a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result<S>(a.shape(), std::move(out), {a, b},
                        [](detail::Node<S>& nd) {
                          for (auto& p : nd.parents)
                            if (p->requires_grad) acc(p->ensure_grad(), nd.grad);
                        });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "sub");
  std::vector<S> out(a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result<S>(a.shape(), std::move(out), {a, b},
                        [](detail::Node<S>& nd) {
                          if (nd.parents[0]->requires_grad)
                            acc(nd.parents[0]->ensure_grad(), nd.grad);
                          if (nd.parents[1]->requires_grad) {
                            auto& g = nd.parents[1]->ensure_grad();
                            for (size_t i = 0; i < g.size(); ++i)
                              g[i] -= nd.grad[i];
                          }
                        });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "mul");
  std::vector<S> out(a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result<S>(a.shape(), std::move(out), {a, b},
                        [](detail::Node<S>& nd) {
                          auto& pa = nd.parents[0];
                          auto& pb = nd.parents[1];
                          if (pa->requires_grad) {
                            auto& g = pa->ensure_grad();
                            for (size_t i = 0; i < g.size(); ++i)
                              g[i] += nd.grad[i] * pb->value[i];
                          }
                          if (pb->requires_grad) {
                            auto& g = pb->ensure_grad();
                            for (size_t i = 0; i < g.size(); ++i)
                              g[i] += nd.grad[i] * pa->value[i];
                          }
                        });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.data());
  for (auto& v : out) v *= c;
  return make_result<S>(a.shape(), std::move(out), {a},
                        [c](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          for (size_t i = 0; i < g.size(); ++i)
                            g[i] += c * nd.grad[i];
                        });
}

template <typename S>
Tensor<S> scale_by(const Tensor<S>& a, const Tensor<S>& s) {
  if (s.numel() != 1) {
    throw ShapeError("scale_by: scale must be scalar, got " + shape_str(s.shape()));
  }
  const S c = s.at(0);
  std::vector<S> out(a.data());
  for (auto& v : out) v *= c;
  return make_result<S>(a.shape(), std::move(out), {a, s},
                        [c](detail::Node<S>& nd) {
                          auto& pa = nd.parents[0];
                          auto& ps = nd.parents[1];
                          if (pa->requires_grad) {
                            auto& g = pa->ensure_grad();
                            for (size_t i = 0; i < g.size(); ++i)
                              g[i] += c * nd.grad[i];
                          }
                          if (ps->requires_grad) {
                            S d = S(0);
                            for (size_t i = 0; i < nd.grad.size(); ++i)
                              d += nd.grad[i] * pa->value[i];
                            ps->ensure_grad()[0] += d;
                          }
                        });
}

template <typename S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& b) {
  check_2d(x, "add_rowvec");
  if (b.rank() != 1 || b.dim(0) != x.dim(1)) {
    throw ShapeError("add_rowvec: bias " + shape_str(b.shape()) +
                     " does not match " + shape_str(x.shape()));
  }
  const int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<S> out(x.data());
  const auto& bv = b.data();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out[i * cols + j] += bv[j];
  return make_result<S>(x.shape(), std::move(out), {x, b},
                        [rows, cols](detail::Node<S>& nd) {
                          if (nd.parents[0]->requires_grad)
                            acc(nd.parents[0]->ensure_grad(), nd.grad);
                          if (nd.parents[1]->requires_grad) {
                            auto& g = nd.parents[1]->ensure_grad();
                            for (int64_t i = 0; i < rows; ++i)
                              for (int64_t j = 0; j < cols; ++j)
                                g[j] += nd.grad[i * cols + j];
                          }
                        });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  std::vector<S> out(x.data());
  for (auto& v : out) v = v > S(0) ? v : S(0);
  return make_result<S>(x.shape(), std::move(out), {x},
                        [](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          const auto& xv = nd.parents[0]->value;
                          for (size_t i = 0; i < g.size(); ++i)
                            if (xv[i] > S(0)) g[i] += nd.grad[i];
                        });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  std::vector<S> out(x.data());
  for (auto& v : out) v = S(1) / (S(1) + std::exp(-v));
  return make_result<S>(x.shape(), std::move(out), {x},
                        [](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          for (size_t i = 0; i < g.size(); ++i) {
                            const S y = nd.value[i];
                            g[i] += nd.grad[i] * y * (S(1) - y);
                          }
                        });
}

template <typename S>
Tensor<S> silu(const Tensor<S>& x) {
  std::vector<S> out(x.data());
  for (auto& v : out) v = v / (S(1) + std::exp(-v));
  return make_result<S>(x.shape(), std::move(out), {x},
                        [](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          const auto& xv = nd.parents[0]->value;
                          for (size_t i = 0; i < g.size(); ++i) {
                            const S s = S(1) / (S(1) + std::exp(-xv[i]));
                            g[i] += nd.grad[i] * s * (S(1) + xv[i] * (S(1) - s));
                          }
                        });
}

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x, AttnMaskPtr mask) {
  check_2d(x, "softmax_rows");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  if (mask && (mask->rows != rows || mask->cols != cols)) {
    throw ShapeError("softmax_rows: mask " + std::to_string(mask->rows) + "x" +
                     std::to_string(mask->cols) + " does not match " +
                     shape_str(x.shape()));
  }
  std::vector<S> out(static_cast<size_t>(rows * cols), S(0));
  const auto& xv = x.data();
  for (int64_t i = 0; i < rows; ++i) {
    const S* xr = xv.data() + i * cols;
    S* yr = out.data() + i * cols;
    S mx = -std::numeric_limits<S>::infinity();
    for (int64_t j = 0; j < cols; ++j) {
      if (mask && !mask->at(i, j)) continue;
      mx = std::max(mx, xr[j]);
    }
    if (mx == -std::numeric_limits<S>::infinity()) {
      throw ContractError("softmax_rows: row " + std::to_string(i) +
                          " has no unmasked entries");
    }
    S sum = S(0);
    for (int64_t j = 0; j < cols; ++j) {
      if (mask && !mask->at(i, j)) continue;
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (int64_t j = 0; j < cols; ++j) yr[j] /= sum;
  }
  return make_result<S>(x.shape(), std::move(out), {x},
                        [rows, cols](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          for (int64_t i = 0; i < rows; ++i) {
                            const S* y = nd.value.data() + i * cols;
                            const S* go = nd.grad.data() + i * cols;
                            S dot = S(0);
                            for (int64_t j = 0; j < cols; ++j) dot += go[j] * y[j];
                            S* gx = g.data() + i * cols;
                            for (int64_t j = 0; j < cols; ++j)
                              gx[j] += y[j] * (go[j] - dot);
                          }
                        });
}

template <typename S>
Tensor<S> log_softmax_rows(const Tensor<S>& x) {
  check_2d(x, "log_softmax_rows");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<S> out(static_cast<size_t>(rows * cols));
  const auto& xv = x.data();
  for (int64_t i = 0; i < rows; ++i) {
    const S* xr = xv.data() + i * cols;
    S mx = xr[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    S sum = S(0);
    for (int64_t j = 0; j < cols; ++j) sum += std::exp(xr[j] - mx);
    const S lse = mx + std::log(sum);
    for (int64_t j = 0; j < cols; ++j) out[i * cols + j] = xr[j] - lse;
  }
  return make_result<S>(x.shape(), std::move(out), {x},
                        [rows, cols](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          for (int64_t i = 0; i < rows; ++i) {
                            const S* y = nd.value.data() + i * cols;
                            const S* go = nd.grad.data() + i * cols;
                            S gs = S(0);
                            for (int64_t j = 0; j < cols; ++j) gs += go[j];
                            S* gx = g.data() + i * cols;
                            for (int64_t j = 0; j < cols; ++j)
                              gx[j] += go[j] - std::exp(y[j]) * gs;
                          }
                        });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, S eps) {
  check_2d(x, "layer_norm");
  const int64_t rows = x.dim(0), d = x.dim(1);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) +
                     "], got " + shape_str(gain.shape()) + " and " +
                     shape_str(bias.shape()));
  }
  std::vector<S> out(static_cast<size_t>(rows * d));
  const auto& xv = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  for (int64_t i = 0; i < rows; ++i) {
    const S* xr = xv.data() + i * d;
    S mu = S(0);
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<S>(d);
    S var = S(0);
    for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<S>(d);
    const S inv = S(1) / std::sqrt(var + eps);
    S* yr = out.data() + i * d;
    for (int64_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * inv * gv[j] + bv[j];
  }
  return make_result<S>(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, d, eps](detail::Node<S>& nd) {
        auto& px = nd.parents[0];
        auto& pg = nd.parents[1];
        auto& pb = nd.parents[2];
        const auto& xv = px->value;
        const auto& gv = pg->value;
        for (int64_t i = 0; i < rows; ++i) {
          const S* xr = xv.data() + i * d;
          const S* go = nd.grad.data() + i * d;
          S mu = S(0);
          for (int64_t j = 0; j < d; ++j) mu += xr[j];
          mu /= static_cast<S>(d);
          S var = S(0);
          for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
          var /= static_cast<S>(d);
          const S inv = S(1) / std::sqrt(var + eps);
          // xhat, h = gain .* upstream; grads for gain/bias and x.
          S mean_h = S(0), mean_hx = S(0);
          for (int64_t j = 0; j < d; ++j) {
            const S xh = (xr[j] - mu) * inv;
            const S h = go[j] * gv[j];
            mean_h += h;
            mean_hx += h * xh;
          }
          mean_h /= static_cast<S>(d);
          mean_hx /= static_cast<S>(d);
          if (pg->requires_grad) {
            auto& gg = pg->ensure_grad();
            for (int64_t j = 0; j < d; ++j)
              gg[j] += go[j] * (xr[j] - mu) * inv;
          }
          if (pb->requires_grad) {
            auto& gb = pb->ensure_grad();
            for (int64_t j = 0; j < d; ++j) gb[j] += go[j];
          }
          if (px->requires_grad) {
            auto& gx = px->ensure_grad();
            S* gxr = gx.data() + i * d;
            for (int64_t j = 0; j < d; ++j) {
              const S xh = (xr[j] - mu) * inv;
              const S h = go[j] * gv[j];
              gxr[j] += inv * (h - mean_h - xh * mean_hx);
            }
          }
        }
      });
}

template <typename S>
Tensor<S> causal_conv1d(const Tensor<S>& x, const Tensor<S>& w,
                        const Tensor<S>& b, int64_t stride) {
  check_2d(x, "causal_conv1d");
  if (w.rank() != 3) {
    throw ShapeError("causal_conv1d: kernel must be [Cout x Cin x K], got " +
                     shape_str(w.shape()));
  }
  if (stride <= 0) {
    throw ConfigError("causal_conv1d: stride must be positive, got " +
                      std::to_string(stride));
  }
  const int64_t t_in = x.dim(0), cin = x.dim(1);
  const int64_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin) {
    throw ShapeError("causal_conv1d: kernel " + shape_str(w.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != cout)) {
    throw ShapeError("causal_conv1d: bias " + shape_str(b.shape()) +
                     " does not match Cout " + std::to_string(cout));
  }
  const int64_t t_out = t_in / stride;
  if (t_out < 1) {
    throw InputError("causal_conv1d: input of " + std::to_string(t_in) +
                     " frames too short for stride " + std::to_string(stride));
  }
  std::vector<S> out(static_cast<size_t>(t_out * cout), S(0));
  const auto& xv = x.data();
  const auto& wv = w.data();
  for (int64_t t = 0; t < t_out; ++t) {
    const int64_t anchor = stride * t + stride - 1;
    for (int64_t co = 0; co < cout; ++co) {
      S s = b.defined() ? b.at(co) : S(0);
      const S* wc = wv.data() + co * cin * k;
      for (int64_t ci = 0; ci < cin; ++ci) {
        for (int64_t j = 0; j < k; ++j) {
          const int64_t u = anchor - j;
          if (u < 0) continue;
          s += wc[ci * k + j] * xv[u * cin + ci];
        }
      }
      out[t * cout + co] = s;
    }
  }
  std::vector<Tensor<S>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  const bool has_bias = b.defined();
  return make_result<S>(
      {t_out, cout}, std::move(out), parents,
      [t_out, t_in, cin, cout, k, stride, has_bias](detail::Node<S>& nd) {
        auto& px = nd.parents[0];
        auto& pw = nd.parents[1];
        const auto& xv = px->value;
        const auto& wv = pw->value;
        for (int64_t t = 0; t < t_out; ++t) {
          const int64_t anchor = stride * t + stride - 1;
          for (int64_t co = 0; co < cout; ++co) {
            const S g = nd.grad[t * cout + co];
            if (g == S(0)) continue;
            if (has_bias && nd.parents[2]->requires_grad)
              nd.parents[2]->ensure_grad()[co] += g;
            for (int64_t ci = 0; ci < cin; ++ci) {
              for (int64_t j = 0; j < k; ++j) {
                const int64_t u = anchor - j;
                if (u < 0) continue;
                if (pw->requires_grad)
                  pw->ensure_grad()[(co * cin + ci) * k + j] += g * xv[u * cin + ci];
                if (px->requires_grad)
                  px->ensure_grad()[u * cin + ci] += g * wv[(co * cin + ci) * k + j];
              }
            }
          }
        }
      });
}

template <typename S>
Tensor<S> causal_depthwise_conv1d(const Tensor<S>& x, const Tensor<S>& w,
                                  const Tensor<S>& b) {
  check_2d(x, "causal_depthwise_conv1d");
  if (w.rank() != 2 || w.dim(0) != x.dim(1)) {
    throw ShapeError("causal_depthwise_conv1d: kernel " + shape_str(w.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  const int64_t t_in = x.dim(0), c = x.dim(1), k = w.dim(1);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != c)) {
    throw ShapeError("causal_depthwise_conv1d: bias " + shape_str(b.shape()) +
                     " does not match channels " + std::to_string(c));
  }
  std::vector<S> out(static_cast<size_t>(t_in * c), S(0));
  const auto& xv = x.data();
  const auto& wv = w.data();
  for (int64_t t = 0; t < t_in; ++t) {
    for (int64_t ch = 0; ch < c; ++ch) {
      S s = b.defined() ? b.at(ch) : S(0);
      for (int64_t j = 0; j < k; ++j) {
        const int64_t u = t - (k - 1) + j;
        if (u < 0) continue;
        s += wv[ch * k + j] * xv[u * c + ch];
      }
      out[t * c + ch] = s;
    }
  }
  std::vector<Tensor<S>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  const bool has_bias = b.defined();
  return make_result<S>(
      x.shape(), std::move(out), parents,
      [t_in, c, k, has_bias](detail::Node<S>& nd) {
        auto& px = nd.parents[0];
        auto& pw = nd.parents[1];
        const auto& xv = px->value;
        const auto& wv = pw->value;
        for (int64_t t = 0; t < t_in; ++t) {
          for (int64_t ch = 0; ch < c; ++ch) {
            const S g = nd.grad[t * c + ch];
            if (g == S(0)) continue;
            if (has_bias && nd.parents[2]->requires_grad)
              nd.parents[2]->ensure_grad()[ch] += g;
            for (int64_t j = 0; j < k; ++j) {
              const int64_t u = t - (k - 1) + j;
              if (u < 0) continue;
              if (pw->requires_grad)
                pw->ensure_grad()[ch * k + j] += g * xv[u * c + ch];
              if (px->requires_grad)
                px->ensure_grad()[u * c + ch] += g * wv[ch * k + j];
            }
          }
        }
      });
}

template <typename S>
Tensor<S> causal_conv2d(const Tensor<S>& x, const Tensor<S>& w,
                        const Tensor<S>& b) {
  if (x.rank() != 3) {
    throw ShapeError("causal_conv2d: input must be [Cin x T x F], got " +
                     shape_str(x.shape()));
  }
  if (w.rank() != 4 || w.dim(1) != x.dim(0)) {
    throw ShapeError("causal_conv2d: kernel " + shape_str(w.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  const int64_t cin = x.dim(0), t_len = x.dim(1), f_len = x.dim(2);
  const int64_t cout = w.dim(0), kt = w.dim(2), kf = w.dim(3);
  if (kf % 2 == 0) {
    throw ConfigError("causal_conv2d: feature kernel extent must be odd, got " +
                      std::to_string(kf));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != cout)) {
    throw ShapeError("causal_conv2d: bias " + shape_str(b.shape()) +
                     " does not match Cout " + std::to_string(cout));
  }
  const int64_t f_half = kf / 2;
  std::vector<S> out(static_cast<size_t>(cout * t_len * f_len), S(0));
  const auto& xv = x.data();
  const auto& wv = w.data();
  for (int64_t co = 0; co < cout; ++co) {
    for (int64_t t = 0; t < t_len; ++t) {
      for (int64_t f = 0; f < f_len; ++f) {
        S s = b.defined() ? b.at(co) : S(0);
        for (int64_t ci = 0; ci < cin; ++ci) {
          for (int64_t dt = 0; dt < kt; ++dt) {
            const int64_t u = t - (kt - 1) + dt;
            if (u < 0) continue;
            for (int64_t df = 0; df < kf; ++df) {
              const int64_t v = f - f_half + df;
              if (v < 0 || v >= f_len) continue;
              s += wv[((co * cin + ci) * kt + dt) * kf + df] *
                   xv[(ci * t_len + u) * f_len + v];
            }
          }
        }
        out[(co * t_len + t) * f_len + f] = s;
      }
    }
  }
  std::vector<Tensor<S>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  const bool has_bias = b.defined();
  return make_result<S>(
      {cout, t_len, f_len}, std::move(out), parents,
      [cin, t_len, f_len, cout, kt, kf, f_half, has_bias](detail::Node<S>& nd) {
        auto& px = nd.parents[0];
        auto& pw = nd.parents[1];
        const auto& xv = px->value;
        const auto& wv = pw->value;
        for (int64_t co = 0; co < cout; ++co) {
          for (int64_t t = 0; t < t_len; ++t) {
            for (int64_t f = 0; f < f_len; ++f) {
              const S g = nd.grad[(co * t_len + t) * f_len + f];
              if (g == S(0)) continue;
              if (has_bias && nd.parents[2]->requires_grad)
                nd.parents[2]->ensure_grad()[co] += g;
              for (int64_t ci = 0; ci < cin; ++ci) {
                for (int64_t dt = 0; dt < kt; ++dt) {
                  const int64_t u = t - (kt - 1) + dt;
                  if (u < 0) continue;
                  for (int64_t df = 0; df < kf; ++df) {
                    const int64_t v = f - f_half + df;
                    if (v < 0 || v >= f_len) continue;
                    const int64_t wi = ((co * cin + ci) * kt + dt) * kf + df;
                    const int64_t xi = (ci * t_len + u) * f_len + v;
                    if (pw->requires_grad) pw->ensure_grad()[wi] += g * xv[xi];
                    if (px->requires_grad) px->ensure_grad()[xi] += g * wv[wi];
                  }
                }
              }
            }
          }
        }
      });
}

template <typename S>
Tensor<S> stack_channels(const std::vector<Tensor<S>>& maps) {
  if (maps.empty()) throw ContractError("stack_channels: no inputs");
  const Shape& s0 = maps[0].shape();
  check_2d(maps[0], "stack_channels");
  for (const auto& m : maps) check_same_shape(m, maps[0], "stack_channels");
  const int64_t c = static_cast<int64_t>(maps.size());
  const int64_t t = s0[0], f = s0[1];
  std::vector<S> out;
  out.reserve(static_cast<size_t>(c * t * f));
  for (const auto& m : maps)
    out.insert(out.end(), m.data().begin(), m.data().end());
  return make_result<S>({c, t, f}, std::move(out), maps,
                        [t, f](detail::Node<S>& nd) {
                          const int64_t plane = t * f;
                          for (size_t ci = 0; ci < nd.parents.size(); ++ci) {
                            auto& p = nd.parents[ci];
                            if (!p->requires_grad) continue;
                            auto& g = p->ensure_grad();
                            const S* src = nd.grad.data() + ci * plane;
                            for (int64_t i = 0; i < plane; ++i) g[i] += src[i];
                          }
                        });
}

template <typename S>
Tensor<S> channels_to_cols(const Tensor<S>& x) {
  if (x.rank() != 3) {
    throw ShapeError("channels_to_cols: input must be [C x T x F], got " +
                     shape_str(x.shape()));
  }
  const int64_t c = x.dim(0), t = x.dim(1), f = x.dim(2);
  std::vector<S> out(static_cast<size_t>(t * c * f));
  const auto& xv = x.data();
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t ti = 0; ti < t; ++ti)
      for (int64_t fi = 0; fi < f; ++fi)
        out[ti * c * f + ci * f + fi] = xv[(ci * t + ti) * f + fi];
  return make_result<S>({t, c * f}, std::move(out), {x},
                        [c, t, f](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          for (int64_t ci = 0; ci < c; ++ci)
                            for (int64_t ti = 0; ti < t; ++ti)
                              for (int64_t fi = 0; fi < f; ++fi)
                                g[(ci * t + ti) * f + fi] +=
                                    nd.grad[ti * c * f + ci * f + fi];
                        });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, int64_t start, int64_t len) {
  check_2d(x, "slice_cols");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || len <= 0 || start + len > cols) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of " +
                     shape_str(x.shape()));
  }
  std::vector<S> out(static_cast<size_t>(rows * len));
  const auto& xv = x.data();
  for (int64_t i = 0; i < rows; ++i)
    std::memcpy(out.data() + i * len, xv.data() + i * cols + start,
                sizeof(S) * len);
  return make_result<S>({rows, len}, std::move(out), {x},
                        [rows, cols, start, len](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          for (int64_t i = 0; i < rows; ++i)
                            for (int64_t j = 0; j < len; ++j)
                              g[i * cols + start + j] += nd.grad[i * len + j];
                        });
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) throw ContractError("concat_cols: no inputs");
  const int64_t rows = xs[0].dim(0);
  int64_t total = 0;
  for (const auto& x : xs) {
    check_2d(x, "concat_cols");
    if (x.dim(0) != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(x.shape()) +
                       " vs " + shape_str(xs[0].shape()));
    }
    total += x.dim(1);
  }
  std::vector<S> out(static_cast<size_t>(rows * total));
  int64_t off = 0;
  for (const auto& x : xs) {
    const int64_t c = x.dim(1);
    for (int64_t i = 0; i < rows; ++i)
      std::memcpy(out.data() + i * total + off, x.data().data() + i * c,
                  sizeof(S) * c);
    off += c;
  }
  std::vector<int64_t> widths;
  for (const auto& x : xs) widths.push_back(x.dim(1));
  return make_result<S>({rows, total}, std::move(out), xs,
                        [rows, total, widths](detail::Node<S>& nd) {
                          int64_t off = 0;
                          for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
                            const int64_t c = widths[pi];
                            auto& p = nd.parents[pi];
                            if (p->requires_grad) {
                              auto& g = p->ensure_grad();
                              for (int64_t i = 0; i < rows; ++i)
                                for (int64_t j = 0; j < c; ++j)
                                  g[i * c + j] += nd.grad[i * total + off + j];
                            }
                            off += c;
                          }
                        });
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, int64_t start, int64_t len) {
  check_2d(x, "slice_rows");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || len <= 0 || start + len > rows) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of " +
                     shape_str(x.shape()));
  }
  std::vector<S> out(x.data().begin() + start * cols,
                     x.data().begin() + (start + len) * cols);
  return make_result<S>({len, cols}, std::move(out), {x},
                        [cols, start, len](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          for (int64_t i = 0; i < len; ++i)
                            for (int64_t j = 0; j < cols; ++j)
                              g[(start + i) * cols + j] += nd.grad[i * cols + j];
                        });
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) throw ContractError("concat_rows: no inputs");
  const int64_t cols = xs[0].dim(1);
  int64_t total = 0;
  for (const auto& x : xs) {
    check_2d(x, "concat_rows");
    if (x.dim(1) != cols) {
      throw ShapeError("concat_rows: col mismatch " + shape_str(x.shape()) +
                       " vs " + shape_str(xs[0].shape()));
    }
    total += x.dim(0);
  }
  std::vector<S> out;
  out.reserve(static_cast<size_t>(total * cols));
  for (const auto& x : xs)
    out.insert(out.end(), x.data().begin(), x.data().end());
  std::vector<int64_t> heights;
  for (const auto& x : xs) heights.push_back(x.dim(0));
  return make_result<S>({total, cols}, std::move(out), xs,
                        [cols, heights](detail::Node<S>& nd) {
                          int64_t off = 0;
                          for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
                            const int64_t h = heights[pi];
                            auto& p = nd.parents[pi];
                            if (p->requires_grad) {
                              auto& g = p->ensure_grad();
                              const S* src = nd.grad.data() + off * cols;
                              for (int64_t i = 0; i < h * cols; ++i)
                                g[i] += src[i];
                            }
                            off += h;
                          }
                        });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  check_2d(x, "transpose");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  auto out = transpose_copy(x.data().data(), rows, cols);
  return make_result<S>({cols, rows}, std::move(out), {x},
                        [rows, cols](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          for (int64_t i = 0; i < cols; ++i)
                            for (int64_t j = 0; j < rows; ++j)
                              g[j * cols + i] += nd.grad[i * rows + j];
                        });
}

template <typename S>
Tensor<S> gather_rows(const Tensor<S>& table, const std::vector<int64_t>& idx) {
  check_2d(table, "gather_rows");
  const int64_t n = table.dim(0), d = table.dim(1);
  if (idx.empty()) throw ContractError("gather_rows: empty index list");
  for (int64_t i : idx) {
    if (i < 0 || i >= n) {
      throw InputError("gather_rows: index " + std::to_string(i) +
                       " out of table " + shape_str(table.shape()));
    }
  }
  const int64_t len = static_cast<int64_t>(idx.size());
  std::vector<S> out(static_cast<size_t>(len * d));
  for (int64_t i = 0; i < len; ++i)
    std::memcpy(out.data() + i * d, table.data().data() + idx[i] * d,
                sizeof(S) * d);
  return make_result<S>({len, d}, std::move(out), {table},
                        [idx, d](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          for (size_t i = 0; i < idx.size(); ++i)
                            for (int64_t j = 0; j < d; ++j)
                              g[idx[i] * d + j] += nd.grad[i * d + j];
                        });
}

template <typename S>
Tensor<S> mean_rows(const Tensor<S>& x) {
  check_2d(x, "mean_rows");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<S> out(static_cast<size_t>(cols), S(0));
  const auto& xv = x.data();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out[j] += xv[i * cols + j];
  for (auto& v : out) v /= static_cast<S>(rows);
  return make_result<S>({1, cols}, std::move(out), {x},
                        [rows, cols](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          const S inv = S(1) / static_cast<S>(rows);
                          for (int64_t i = 0; i < rows; ++i)
                            for (int64_t j = 0; j < cols; ++j)
                              g[i * cols + j] += nd.grad[j] * inv;
                        });
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S s = S(0);
  for (S v : x.data()) s += v;
  return make_result<S>({1}, {s}, {x}, [](detail::Node<S>& nd) {
    if (!nd.parents[0]->requires_grad) return;
    auto& g = nd.parents[0]->ensure_grad();
    for (auto& v : g) v += nd.grad[0];
  });
}

template <typename S>
Tensor<S> nll_pick(const Tensor<S>& logp, const std::vector<int64_t>& labels) {
  check_2d(logp, "nll_pick");
  const int64_t rows = logp.dim(0), cols = logp.dim(1);
  if (static_cast<int64_t>(labels.size()) != rows) {
    throw ShapeError("nll_pick: " + std::to_string(labels.size()) +
                     " labels for " + shape_str(logp.shape()));
  }
  S s = S(0);
  for (int64_t i = 0; i < rows; ++i) {
    if (labels[i] < 0 || labels[i] >= cols) {
      throw InputError("nll_pick: label " + std::to_string(labels[i]) +
                       " out of range [0, " + std::to_string(cols) + ")");
    }
    s -= logp.at(i, labels[i]);
  }
  return make_result<S>({1}, {s}, {logp},
                        [labels, cols](detail::Node<S>& nd) {
                          if (!nd.parents[0]->requires_grad) return;
                          auto& g = nd.parents[0]->ensure_grad();
                          for (size_t i = 0; i < labels.size(); ++i)
                            g[i * cols + labels[i]] -= nd.grad[0];
                        });
}

template <typename S>
Tensor<S> detach(const Tensor<S>& x) {
  return Tensor<S>::from(x.shape(), x.data(), false);
}

template <typename S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  auto root = loss.node();
  if (!root->requires_grad) return;
  // Collect requires_grad ancestors; creation order is a topological order.
  std::vector<detail::Node<S>*> order;
  std::unordered_set<detail::Node<S>*> seen;
  std::vector<detail::Node<S>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node<S>* a, const detail::Node<S>* b) {
              return a->seq > b->seq;
            });
  root->ensure_grad()[0] += S(1);
  for (auto* n : order) {
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

// ---- explicit instantiation ----

#define AF_INSTANTIATE_TENSOR(S)                                               \
  template class Tensor<S>;                                                    \
  template Tensor<S> make_op(const Shape&, std::vector<S>,                     \
                             const std::vector<Tensor<S>>&,                    \
                             std::function<void(detail::Node<S>&)>);           \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);               \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> scale(const Tensor<S>&, S);                               \
  template Tensor<S> scale_by(const Tensor<S>&, const Tensor<S>&);             \
  template Tensor<S> add_rowvec(const Tensor<S>&, const Tensor<S>&);           \
  template Tensor<S> relu(const Tensor<S>&);                                   \
  template Tensor<S> sigmoid(const Tensor<S>&);                                \
  template Tensor<S> silu(const Tensor<S>&);                                   \
  template Tensor<S> softmax_rows(const Tensor<S>&, AttnMaskPtr);              \
  template Tensor<S> log_softmax_rows(const Tensor<S>&);                       \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&,            \
                                const Tensor<S>&, S);                          \
  template Tensor<S> causal_conv1d(const Tensor<S>&, const Tensor<S>&,         \
                                   const Tensor<S>&, int64_t);                 \
  template Tensor<S> causal_depthwise_conv1d(const Tensor<S>&,                 \
                                             const Tensor<S>&,                 \
                                             const Tensor<S>&);                \
  template Tensor<S> causal_conv2d(const Tensor<S>&, const Tensor<S>&,         \
                                   const Tensor<S>&);                          \
  template Tensor<S> stack_channels(const std::vector<Tensor<S>>&);            \
  template Tensor<S> channels_to_cols(const Tensor<S>&);                       \
  template Tensor<S> slice_cols(const Tensor<S>&, int64_t, int64_t);           \
  template Tensor<S> concat_cols(const std::vector<Tensor<S>>&);               \
  template Tensor<S> slice_rows(const Tensor<S>&, int64_t, int64_t);           \
  template Tensor<S> concat_rows(const std::vector<Tensor<S>>&);               \
  template Tensor<S> transpose(const Tensor<S>&);                              \
  template Tensor<S> gather_rows(const Tensor<S>&,                             \
                                 const std::vector<int64_t>&);                 \
  template Tensor<S> mean_rows(const Tensor<S>&);                              \
  template Tensor<S> sum_all(const Tensor<S>&);                                \
  template Tensor<S> nll_pick(const Tensor<S>&, const std::vector<int64_t>&);  \
  template Tensor<S> detach(const Tensor<S>&);                                 \
  template void backward(const Tensor<S>&);

AF_INSTANTIATE_TENSOR(float)
AF_INSTANTIATE_TENSOR(double)

#undef AF_INSTANTIATE_TENSOR

}  // namespace af
