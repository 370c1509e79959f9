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

#include "model/ctc.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace af {

namespace {

template <typename S>
constexpr S kNegInf = -std::numeric_limits<S>::infinity();

template <typename S>
S lse2(S a, S b) {
  if (a == kNegInf<S>) return b;
  if (b == kNegInf<S>) return a;
  const S m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

template <typename S>
S lse3(S a, S b, S c) {
  return lse2(lse2(a, b), c);
}

std::vector<int64_t> extend_with_blanks(const std::vector<int64_t>& target) {
  std::vector<int64_t> ext(2 * target.size() + 1, kCtcBlank);
  for (size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i] + 1;
  return ext;
}

}  // namespace

int64_t ctc_min_frames(const std::vector<int64_t>& target) {
  int64_t frames = static_cast<int64_t>(target.size());
  for (size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++frames;
  return frames;
}

template <typename S>
Tensor<S> ctc_loss(const Tensor<S>& log_probs,
                   const std::vector<int64_t>& target) {
  if (log_probs.rank() != 2) {
    throw ShapeError("ctc_loss: log_probs must be [T x classes], got " +
                     shape_str(log_probs.shape()));
  }
  const int64_t t_len = log_probs.dim(0);
  const int64_t classes = log_probs.dim(1);
  for (int64_t tok : target) {
    if (tok < 0 || tok + 1 >= classes) {
      throw InputError("ctc_loss: token " + std::to_string(tok) +
                       " outside class space of " + std::to_string(classes));
    }
  }
  if (t_len < ctc_min_frames(target)) {
    throw InfeasibleTargetError(
        "ctc_loss: target needs " + std::to_string(ctc_min_frames(target)) +
        " frames but only " + std::to_string(t_len) + " available");
  }

  const auto ext = extend_with_blanks(target);
  const int64_t u_len = static_cast<int64_t>(ext.size());
  const auto& lp = log_probs.data();
  auto lp_at = [&](int64_t t, int64_t s) { return lp[t * classes + ext[s]]; };
  auto can_skip = [&](int64_t s) {
    return s >= 2 && ext[s] != kCtcBlank && ext[s] != ext[s - 2];
  };

  // Forward lattice, alpha[t][s] includes the emission at (t, s).
  std::vector<S> alpha(t_len * u_len, kNegInf<S>);
  alpha[0] = lp_at(0, 0);
  if (u_len > 1) alpha[1] = lp_at(0, 1);
  for (int64_t t = 1; t < t_len; ++t) {
    for (int64_t s = 0; s < u_len; ++s) {
      const S stay = alpha[(t - 1) * u_len + s];
      const S step = s >= 1 ? alpha[(t - 1) * u_len + s - 1] : kNegInf<S>;
      const S skip = can_skip(s) ? alpha[(t - 1) * u_len + s - 2] : kNegInf<S>;
      const S acc = lse3(stay, step, skip);
      alpha[t * u_len + s] = acc == kNegInf<S> ? kNegInf<S> : acc + lp_at(t, s);
    }
  }
  S total = alpha[(t_len - 1) * u_len + u_len - 1];
  if (u_len > 1) total = lse2(total, alpha[(t_len - 1) * u_len + u_len - 2]);

  std::vector<S> value{-total};
  return make_op<S>(
      {1}, std::move(value), {log_probs},
      [t_len, u_len, classes, ext, total, alpha](detail::Node<S>& nd) {
        auto& plp = nd.parents[0];
        if (!plp->requires_grad) return;
        const auto& lp = plp->value;
        auto lp_at = [&](int64_t t, int64_t s) {
          return lp[t * classes + ext[s]];
        };
        auto can_skip = [&ext](int64_t s) {
          return s >= 2 && ext[s] != kCtcBlank && ext[s] != ext[s - 2];
        };
        // Backward lattice, beta[t][s] also includes the emission at (t, s).
        std::vector<S> beta(t_len * u_len, kNegInf<S>);
        beta[(t_len - 1) * u_len + u_len - 1] = lp_at(t_len - 1, u_len - 1);
        if (u_len > 1)
          beta[(t_len - 1) * u_len + u_len - 2] = lp_at(t_len - 1, u_len - 2);
        for (int64_t t = t_len - 2; t >= 0; --t) {
          for (int64_t s = u_len - 1; s >= 0; --s) {
            const S stay = beta[(t + 1) * u_len + s];
            const S step = s + 1 < u_len ? beta[(t + 1) * u_len + s + 1]
                                         : kNegInf<S>;
            const S skip = (s + 2 < u_len && can_skip(s + 2))
                               ? beta[(t + 1) * u_len + s + 2]
                               : kNegInf<S>;
            const S acc = lse3(stay, step, skip);
            beta[t * u_len + s] =
                acc == kNegInf<S> ? kNegInf<S> : acc + lp_at(t, s);
          }
        }
        // d(-logP)/d lp[t][k] = -sum_{s: ext[s]=k} exp(alpha+beta - lp - logP).
        const S g = nd.grad[0];
        auto& grad = plp->ensure_grad();
        for (int64_t t = 0; t < t_len; ++t) {
          std::vector<S> acc(classes, kNegInf<S>);
          for (int64_t s = 0; s < u_len; ++s) {
            const S ab = alpha[t * u_len + s] == kNegInf<S> ||
                                 beta[t * u_len + s] == kNegInf<S>
                             ? kNegInf<S>
                             : alpha[t * u_len + s] + beta[t * u_len + s];
            acc[ext[s]] = lse2(acc[ext[s]], ab);
          }
          for (int64_t k = 0; k < classes; ++k) {
            if (acc[k] == kNegInf<S>) continue;
            grad[t * classes + k] -=
                g * std::exp(acc[k] - lp[t * classes + k] - total);
          }
        }
      });
}

template <typename S>
std::vector<int64_t> greedy_ctc_decode(const Tensor<S>& log_probs) {
  const int64_t t_len = log_probs.dim(0), classes = log_probs.dim(1);
  std::vector<int64_t> out;
  int64_t prev = -1;
  for (int64_t t = 0; t < t_len; ++t) {
    int64_t best = 0;
    for (int64_t k = 1; k < classes; ++k)
      if (log_probs.at(t, k) > log_probs.at(t, best)) best = k;
    if (best != kCtcBlank && best != prev) out.push_back(best - 1);
    prev = best;
  }
  return out;
}

template <typename S>
double greedy_ctc_score(const Tensor<S>& log_probs) {
  const int64_t t_len = log_probs.dim(0), classes = log_probs.dim(1);
  double score = 0.0;
  for (int64_t t = 0; t < t_len; ++t) {
    S best = log_probs.at(t, 0);
    for (int64_t k = 1; k < classes; ++k)
      best = std::max(best, log_probs.at(t, k));
    score += static_cast<double>(best);
  }
  return score;
}

template <typename S>
std::vector<CtcBeamEntry> ctc_beam_search(const Tensor<S>& log_probs,
                                          int64_t beam_size) {
  const int64_t t_len = log_probs.dim(0), classes = log_probs.dim(1);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // prefix -> (log p ending in blank, log p ending in non-blank)
  using Beams = std::map<std::vector<int64_t>, std::pair<double, double>>;
  Beams beams;
  beams[{}] = {0.0, -kInf};
  for (int64_t t = 0; t < t_len; ++t) {
    Beams next;
    auto upd = [&](const std::vector<int64_t>& prefix, double pb, double pnb) {
      auto& slot = next.try_emplace(prefix, -kInf, -kInf).first->second;
      slot.first = lse2(slot.first, pb);
      slot.second = lse2(slot.second, pnb);
    };
    for (const auto& [prefix, probs] : beams) {
      const auto [pb, pnb] = probs;
      const double p_any = lse2(pb, pnb);
      upd(prefix, p_any + log_probs.at(t, kCtcBlank), -kInf);
      for (int64_t c = 1; c < classes; ++c) {
        const int64_t tok = c - 1;
        const double p = log_probs.at(t, c);
        if (!prefix.empty() && prefix.back() == tok) {
          // Same symbol: extends the prefix only across a blank.
          upd(prefix, -kInf, pnb + p);
          auto longer = prefix;
          longer.push_back(tok);
          upd(longer, -kInf, pb + p);
        } else {
          auto longer = prefix;
          longer.push_back(tok);
          upd(longer, -kInf, p_any + p);
        }
      }
    }
    if (static_cast<int64_t>(next.size()) > beam_size) {
      std::vector<std::pair<double, std::vector<int64_t>>> ranked;
      ranked.reserve(next.size());
      for (const auto& [prefix, probs] : next)
        ranked.push_back({lse2(probs.first, probs.second), prefix});
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        if (a.second.size() != b.second.size())
          return a.second.size() < b.second.size();
        return a.second < b.second;
      });
      Beams pruned;
      for (int64_t i = 0; i < beam_size; ++i)
        pruned[ranked[i].second] = next[ranked[i].second];
      next = std::move(pruned);
    }
    beams = std::move(next);
  }
  std::vector<CtcBeamEntry> out;
  out.reserve(beams.size());
  for (const auto& [prefix, probs] : beams)
    out.push_back({prefix, lse2(probs.first, probs.second)});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.tokens.size() != b.tokens.size())
      return a.tokens.size() < b.tokens.size();
    return a.tokens < b.tokens;
  });
  return out;
}

#define AF_INSTANTIATE_CTC(S)                                            \
  template Tensor<S> ctc_loss(const Tensor<S>&,                         \
                              const std::vector<int64_t>&);             \
  template std::vector<int64_t> greedy_ctc_decode(const Tensor<S>&);    \
  template double greedy_ctc_score(const Tensor<S>&);                   \
  template std::vector<CtcBeamEntry> ctc_beam_search(const Tensor<S>&,  \
                                                     int64_t);

AF_INSTANTIATE_CTC(float)
AF_INSTANTIATE_CTC(double)

#undef AF_INSTANTIATE_CTC

}  // namespace af
