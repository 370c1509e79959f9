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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "model/ctc.h"
#include "model/decoder.h"
#include "testutil.h"

using namespace af;
using D = Tensor<double>;

namespace {

// Independent oracle: total probability over all label paths whose collapse
// equals the target, by exhaustive enumeration.
double ctc_brute_force(const std::vector<double>& probs, int64_t t_len,
                       int64_t classes, const std::vector<int64_t>& target) {
  std::vector<int64_t> path(t_len, 0);
  double total = 0.0;
  while (true) {
    // Collapse: merge consecutive repeats, then drop blanks.
    std::vector<int64_t> collapsed;
    int64_t prev = -1;
    for (int64_t t = 0; t < t_len; ++t) {
      if (path[t] != prev && path[t] != kCtcBlank)
        collapsed.push_back(path[t] - 1);
      prev = path[t];
    }
    if (collapsed == target) {
      double p = 1.0;
      for (int64_t t = 0; t < t_len; ++t) p *= probs[t * classes + path[t]];
      total += p;
    }
    int64_t i = t_len - 1;
    while (i >= 0 && path[i] == classes - 1) path[i--] = 0;
    if (i < 0) break;
    ++path[i];
  }
  return total;
}

std::vector<double> random_prob_rows(Rng& rng, int64_t t_len, int64_t classes) {
  std::vector<double> p(t_len * classes);
  for (int64_t t = 0; t < t_len; ++t) {
    double sum = 0.0;
    for (int64_t k = 0; k < classes; ++k) {
      p[t * classes + k] = 0.05 + rng.uniform();
      sum += p[t * classes + k];
    }
    for (int64_t k = 0; k < classes; ++k) p[t * classes + k] /= sum;
  }
  return p;
}

DecoderConfig toy_decoder_cfg() {
  DecoderConfig cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.vocab = 5;
  cfg.ffn_expansion = 2;
  cfg.max_len = 16;
  return cfg;
}

}  // namespace

TEST_CASE("ctc_loss single-alignment cases") {
  // T=1, one token with probability p: only path is that token.
  const double p = 0.37;
  auto lp = D::from({1, 3}, {std::log(1.0 - p), std::log(p), std::log(1e-9)});
  CHECK(ctc_loss(lp, {0}).item() == doctest::Approx(-std::log(p)));

  // T=2, vocab {blank, a}, all probs 0.5 -> paths (a,-),(-,a),(a,a): 0.75.
  auto lp2 = D::from({2, 2}, std::vector<double>(4, std::log(0.5)));
  CHECK(ctc_loss(lp2, {0}).item() == doctest::Approx(-std::log(0.75)));
}

TEST_CASE("ctc_loss equals brute-force enumeration on all small instances") {
  Rng rng(101);
  for (int64_t t_len = 1; t_len <= 4; ++t_len) {
    for (int64_t vocab = 1; vocab <= 3; ++vocab) {
      const int64_t classes = vocab + 1;
      auto probs = random_prob_rows(rng, t_len, classes);
      std::vector<double> lp(probs.size());
      for (size_t i = 0; i < probs.size(); ++i) lp[i] = std::log(probs[i]);
      auto lpt = D::from({t_len, classes}, lp);
      // All targets of length 0..2.
      std::vector<std::vector<int64_t>> targets = {{}};
      for (int64_t a = 0; a < vocab; ++a) {
        targets.push_back({a});
        for (int64_t b = 0; b < vocab; ++b) targets.push_back({a, b});
      }
      for (const auto& target : targets) {
        const double brute = ctc_brute_force(probs, t_len, classes, target);
        if (static_cast<int64_t>(ctc_min_frames(target)) > t_len) {
          CHECK(brute == 0.0);
          CHECK_THROWS_AS(ctc_loss(lpt, target), InfeasibleTargetError);
        } else {
          CHECK(std::abs(ctc_loss(lpt, target).item() - (-std::log(brute))) <
                1e-10);
        }
      }
    }
  }
}

TEST_CASE("ctc_loss gradient matches finite differences") {
  Rng rng(103);
  auto logits = D::randn({4, 4}, rng, 1.0, true);
  std::vector<int64_t> target = {1, 0};
  auto make = [&]() { return ctc_loss(log_softmax_rows(logits), target); };
  backward(make());
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return make().item();
  };
  CHECK(test::max_grad_rel_error({logits}, loss_fn) < 1e-6);
}

TEST_CASE("greedy ctc decode") {
  auto one_hot = [](const std::vector<int64_t>& classes, int64_t k) {
    std::vector<double> lp(classes.size() * k, std::log(1e-6));
    for (size_t t = 0; t < classes.size(); ++t)
      lp[t * k + classes[t]] = std::log(0.9);
    return D::from({static_cast<int64_t>(classes.size()), k}, lp);
  };
  // Frames argmax [a, a, -, b] -> "ab" (class a=1, b=2, blank=0).
  CHECK(greedy_ctc_decode(one_hot({1, 1, 0, 2}, 3)) ==
        std::vector<int64_t>{0, 1});
  CHECK(greedy_ctc_decode(one_hot({0, 0, 0}, 3)).empty());
  // Blank separates repeats: [a, -, a] -> "aa".
  CHECK(greedy_ctc_decode(one_hot({1, 0, 1}, 3)) ==
        std::vector<int64_t>{0, 0});

  SUBCASE("decode is a retraction through one-hot re-encoding") {
    Rng rng(107);
    for (int rep = 0; rep < 20; ++rep) {
      const int64_t t_len = rng.uniform_int(1, 8);
      std::vector<int64_t> frames(t_len);
      for (auto& f : frames) f = rng.uniform_int(0, 3);
      auto tokens = greedy_ctc_decode(one_hot(frames, 4));
      // Re-encode with separating blanks and decode again.
      std::vector<int64_t> frames2;
      for (size_t i = 0; i < tokens.size(); ++i) {
        frames2.push_back(tokens[i] + 1);
        frames2.push_back(0);
      }
      if (frames2.empty()) frames2.push_back(0);
      CHECK(greedy_ctc_decode(one_hot(frames2, 4)) == tokens);
    }
  }
}

TEST_CASE("ctc beam search finds the dominant sequence and normalizes") {
  Rng rng(109);
  auto probs = random_prob_rows(rng, 4, 3);
  // Sharpen towards a clear winner.
  for (int64_t t = 0; t < 4; ++t) probs[t * 3 + 1] += 3.0;
  for (int64_t t = 0; t < 4; ++t) {
    double sum = 0;
    for (int64_t k = 0; k < 3; ++k) sum += probs[t * 3 + k];
    for (int64_t k = 0; k < 3; ++k) probs[t * 3 + k] /= sum;
  }
  std::vector<double> lp(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) lp[i] = std::log(probs[i]);
  auto lpt = D::from({4, 3}, lp);

  auto nbest = ctc_beam_search(lpt, 8);
  REQUIRE(!nbest.empty());
  CHECK(nbest[0].tokens == greedy_ctc_decode(lpt));
  for (size_t i = 1; i < nbest.size(); ++i)
    CHECK(nbest[i - 1].score >= nbest[i].score);
  // With an exhaustive beam the per-sequence scores match brute force.
  for (const auto& entry : nbest) {
    const double brute = ctc_brute_force(probs, 4, 3, entry.tokens);
    CHECK(std::exp(entry.score) == doctest::Approx(brute).epsilon(1e-8));
  }
}

TEST_CASE("attention decoder uniform logits give CE = ln V") {
  ParamRegistry<double> reg;
  Rng rng(113);
  auto cfg = toy_decoder_cfg();
  AttentionDecoder<double> dec(reg, cfg, rng);
  for (auto& p : reg.all()) {
    if (p.name.rfind("decoder.out.w", 0) == 0 ||
        p.name.rfind("decoder.out.b", 0) == 0) {
      std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
    }
  }
  auto o_att = D::randn({6, 8}, rng, 1.0, false);
  auto ce = dec.teacher_ce(o_att, {0, 3, 2}, Direction::kL2R);
  CHECK(ce.item() == doctest::Approx(std::log(5.0)));
}

TEST_CASE("R2L on a palindrome mirrors L2R when sentinels share weights") {
  ParamRegistry<double> reg;
  Rng rng(127);
  auto cfg = toy_decoder_cfg();
  AttentionDecoder<double> dec(reg, cfg, rng);
  // Symmetric params: make the eos embedding equal to the sos embedding.
  for (auto& p : reg.all()) {
    if (p.name == "decoder.emb") {
      auto& d = p.tensor.data();
      for (int64_t j = 0; j < cfg.d; ++j)
        d[(cfg.vocab + 1) * cfg.d + j] = d[cfg.vocab * cfg.d + j];
    }
  }
  auto o_att = D::randn({5, 8}, rng, 1.0, false);
  std::vector<int64_t> palindrome = {1, 4, 1};
  auto l2r = dec.forward(o_att, palindrome, Direction::kL2R);
  auto r2l = dec.forward(o_att, palindrome, Direction::kR2L);
  for (int64_t i = 0; i < l2r.numel(); ++i)
    CHECK(std::abs(l2r.data()[i] - r2l.data()[i]) < 1e-12);
}

TEST_CASE("attention decoder is causal in the target") {
  ParamRegistry<double> reg;
  Rng rng(131);
  AttentionDecoder<double> dec(reg, toy_decoder_cfg(), rng);
  auto o_att = D::randn({5, 8}, rng, 1.0, false);
  std::vector<int64_t> y = {0, 1, 2, 3};
  auto base = dec.forward(o_att, y, Direction::kL2R);
  std::vector<int64_t> y2 = {0, 1, 4, 4};  // perturb positions 2, 3
  auto pert = dec.forward(o_att, y2, Direction::kL2R);
  for (int64_t p = 0; p < 2; ++p)
    for (int64_t k = 0; k < 5; ++k) CHECK(base.at(p, k) == pert.at(p, k));
}

TEST_CASE("attention decoder rejects empty targets") {
  ParamRegistry<double> reg;
  Rng rng(137);
  AttentionDecoder<double> dec(reg, toy_decoder_cfg(), rng);
  auto o_att = D::randn({5, 8}, rng, 1.0, false);
  CHECK_THROWS_AS(dec.forward(o_att, {}, Direction::kL2R), ContractError);
}

TEST_CASE("attention decoder gradient matches finite differences") {
  ParamRegistry<double> reg;
  Rng rng(139);
  auto cfg = toy_decoder_cfg();
  cfg.layers = 1;
  AttentionDecoder<double> dec(reg, cfg, rng);
  auto o_att = D::randn({4, 8}, rng, 1.0, true);
  std::vector<int64_t> y = {2, 0, 4};
  auto make = [&]() {
    return add(dec.teacher_ce(o_att, y, Direction::kL2R),
               dec.teacher_ce(o_att, y, Direction::kR2L));
  };
  backward(make());
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return make().item();
  };
  std::vector<D> params = {o_att};
  for (auto& p : reg.all()) params.push_back(p.tensor);
  CHECK(test::max_grad_rel_error(params, loss_fn) < 1e-4);
}

TEST_CASE("rescoring rules") {
  ParamRegistry<double> reg;
  Rng rng(149);
  AttentionDecoder<double> dec(reg, toy_decoder_cfg(), rng);
  // Zero output projection: every hypothesis has identical attention score
  // per token; combined ties are then decided by the tie rules.
  for (auto& p : reg.all()) {
    if (p.name.rfind("decoder.out.", 0) == 0 &&
        p.name.find(".ln.") == std::string::npos) {
      std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
    }
  }
  auto o_att = D::randn({5, 8}, rng, 1.0, false);

  SUBCASE("single hypothesis in, same hypothesis out") {
    Hypothesis h{{1, 2}, -0.5, {}};
    auto best = rescore<double>({h}, o_att, dec, 0.3);
    CHECK(best.tokens == h.tokens);
  }
  SUBCASE("equal combined scores prefer the shorter hypothesis") {
    // Single-token vocab: log-softmax over one class is exactly 0, so the
    // attention term vanishes and equal ctc scores tie exactly.
    ParamRegistry<double> reg1;
    Rng rng1(151);
    auto cfg1 = toy_decoder_cfg();
    cfg1.vocab = 1;
    AttentionDecoder<double> dec1(reg1, cfg1, rng1);
    Hypothesis a{{0, 0, 0}, -1.25, {}};
    Hypothesis b{{0, 0}, -1.25, {}};
    auto best = rescore<double>({a, b}, o_att, dec1, 0.3);
    CHECK(best.tokens == b.tokens);
  }
  SUBCASE("equal scores and lengths break ties lexicographically") {
    // Same length means identical attention terms under the zeroed
    // projection, so equal ctc scores tie exactly.
    Hypothesis a{{2, 1}, -0.5, {}};
    Hypothesis b{{1, 2}, -0.5, {}};
    auto best = rescore<double>({a, b}, o_att, dec, 0.3);
    CHECK(best.tokens == b.tokens);
  }
  SUBCASE("result always comes from the input list") {
    std::vector<Hypothesis> nbest = {{{0}, -1.0, {}}, {{1, 1}, -0.2, {}}};
    auto best = rescore(nbest, o_att, dec, 0.3);
    bool found = false;
    for (const auto& h : nbest) found = found || h.tokens == best.tokens;
    CHECK(found);
  }
}
