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

#include "model/encoder.h"
#include "model/fusion.h"
#include "model/laf.h"
#include "model/mask.h"
#include "model/model.h"
#include "util/checkpoint.h"
#include "testutil.h"

using namespace af;
using D = Tensor<double>;

namespace {

EncoderConfig toy_encoder_cfg() {
  EncoderConfig cfg;
  cfg.feat_dim = 12;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.blocks = 4;
  cfg.sub2_after = 1;
  cfg.taps = 3;
  cfg.conv_kernel = 7;
  cfg.ffn_expansion = 2;
  cfg.max_len = 64;
  return cfg;
}

template <typename S>
void zero_params_matching(ParamRegistry<S>& reg, const std::string& prefix,
                          const std::string& except) {
  for (auto& p : reg.all()) {
    if (p.name.rfind(prefix, 0) == 0 &&
        (except.empty() || p.name.find(except) == std::string::npos)) {
      std::fill(p.tensor.data().begin(), p.tensor.data().end(), S(0));
    }
  }
}

}  // namespace

TEST_CASE("chunk mask formula") {
  SUBCASE("full context") {
    auto m = ChunkMask::build(4, 4, false);
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 4; ++j) CHECK(m.matrix->at(i, j));
    CHECK(m.full_context);
  }
  SUBCASE("C=2 over T'=4") {
    auto m = ChunkMask::build(4, 2, false);
    std::vector<std::vector<int>> want = {
        {1, 1, 0, 0}, {1, 1, 0, 0}, {1, 1, 1, 1}, {1, 1, 1, 1}};
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 4; ++j)
        CHECK(m.matrix->at(i, j) == (want[i][j] == 1));
  }
  SUBCASE("C=1 is the causal limit") {
    auto m = ChunkMask::build(4, 1, false);
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 4; ++j) CHECK(m.matrix->at(i, j) == (j <= i));
  }
  SUBCASE("monotone allowed sets") {
    auto m = ChunkMask::build(12, 3, false);
    for (int64_t i = 1; i < 12; ++i)
      for (int64_t j = 0; j < 12; ++j)
        if (m.matrix->at(i - 1, j)) CHECK(m.matrix->at(i, j));
  }
  SUBCASE("bad chunk size") {
    CHECK_THROWS_AS(ChunkMask::build(4, 0, false), ConfigError);
    CHECK_THROWS_AS(ChunkMask::build(4, 5, false), ConfigError);
  }
}

TEST_CASE("conformer block collapses to LayerNorm with zero sub-layer weights") {
  ParamRegistry<double> reg;
  Rng rng(3);
  ConformerBlock<double> block(reg, "b", 8, 2, 2, 5, rng);
  zero_params_matching(reg, "b.", ".out.ln");

  Rng rx(4);
  auto x = D::randn({6, 8}, rx, 1.0, false);
  auto mask = ChunkMask::build(6, 6, false);
  auto y = block.forward(x, mask.matrix);
  auto want = layer_norm(x, D::full({8}, 1.0), D::zeros({8}));
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == want.data()[i]);
}

TEST_CASE("conformer block preserves shape and matches finite differences") {
  ParamRegistry<double> reg;
  Rng rng(5);
  ConformerBlock<double> block(reg, "b", 8, 2, 2, 3, rng);
  Rng rx(6);
  auto x = D::randn({5, 8}, rx, 1.0, true);
  auto mask = ChunkMask::build(5, 2, false);
  auto probe = D::randn({5, 8}, rx, 1.0, false);

  auto y = block.forward(x, mask.matrix);
  CHECK(y.shape() == Shape{5, 8});

  auto make = [&]() { return sum_all(mul(block.forward(x, mask.matrix), probe)); };
  backward(make());
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return make().item();
  };
  std::vector<D> params = {x};
  for (auto& p : reg.all()) params.push_back(p.tensor);
  CHECK(test::max_grad_rel_error(params, loss_fn) < 1e-4);
}

TEST_CASE("subsample halves time and composes to factor 4") {
  ParamRegistry<double> reg;
  Rng rng(7);
  Subsample<double> s1(reg, "s1", 6, 6, rng), s2(reg, "s2", 6, 6, rng);
  auto x = D::randn({64, 6}, rng, 1.0, false);
  auto h = s1.forward(x);
  CHECK(h.dim(0) == 32);
  CHECK(s2.forward(h).dim(0) == 16);

  auto x8 = D::randn({8, 6}, rng, 1.0, false);
  CHECK(s1.forward(x8).dim(0) == 4);

  zero_params_matching(reg, "s1.", "");
  auto z = s1.forward(x8);
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("encode produces taps at one resolution, final aliases last tap") {
  auto cfg = toy_encoder_cfg();
  ParamRegistry<double> reg;
  Rng rng(11);
  Encoder<double> enc(reg, cfg, rng);

  auto x = D::randn({24, 12}, rng, 1.0, false);
  auto mask = ChunkMask::build(6, 2, false);
  auto taps = enc.encode(x, mask);
  CHECK(taps.taps.size() == 3);
  for (auto& t : taps.taps) CHECK(t.shape() == Shape{6, 16});
  CHECK(taps.final.node() == taps.taps.back().node());
  CHECK(taps.subsample_factor == 4);

  CHECK_THROWS_AS(enc.encode(D::zeros({3, 12}), mask), InputError);
}

TEST_CASE("full-context encode equals chunked encode with C = T' bit-exactly") {
  auto cfg = toy_encoder_cfg();
  ParamRegistry<double> reg;
  Rng rng(13);
  Encoder<double> enc(reg, cfg, rng);
  auto x = D::randn({28, 12}, rng, 1.0, false);
  auto a = enc.encode(x, ChunkMask::build(7, 7, false));
  auto b = enc.encode(x, ChunkMask::build(7, 3, true));  // full_context flag
  for (size_t i = 0; i < a.taps.size(); ++i)
    CHECK(a.taps[i].data() == b.taps[i].data());
}

TEST_CASE("encoder chunk causality: later-chunk input perturbations") {
  auto cfg = toy_encoder_cfg();
  ParamRegistry<double> reg;
  Rng rng(17);
  Encoder<double> enc(reg, cfg, rng);
  const int64_t t_in = 32, t_prime = 8;
  auto x = D::randn({t_in, 12}, rng, 1.0, false);

  for (int64_t chunk : {1LL, 2LL, 4LL}) {
    auto mask = ChunkMask::build(t_prime, chunk, false);
    auto base = enc.encode(x, mask);
    // Perturb an input frame whose subsampled index is in chunk k+1.
    const int64_t k = 1;
    const int64_t first_bad = (k + 1) * chunk;  // encoder frame index
    if (first_bad >= t_prime) continue;
    auto xd = x.data();
    for (int64_t j = 0; j < 12; ++j) xd[(first_bad * 4) * 12 + j] += 7.5;
    auto pert = enc.encode(D::from(x.shape(), xd), mask);
    for (size_t tap = 0; tap < base.taps.size(); ++tap) {
      for (int64_t t = 0; t < first_bad; ++t)
        for (int64_t j = 0; j < 16; ++j)
          CHECK(std::abs(base.taps[tap].at(t, j) - pert.taps[tap].at(t, j)) <
                1e-12);
    }
  }
}

TEST_CASE("layer_adapt modes") {
  LafConfig cfg;
  cfg.taps = 3;
  cfg.tap_lo = 6;
  cfg.d = 8;
  cfg.accents = 4;
  cfg.channels = 2;

  Rng rng(19);
  EncoderTaps<double> taps;
  for (int i = 0; i < 3; ++i)
    taps.taps.push_back(D::randn({5, 8}, rng, 1.0, false));
  taps.final = taps.taps.back();

  SUBCASE("one-hot weighted sum selects that tap exactly") {
    cfg.mode = LafMode::kWeightedSum;
    ParamRegistry<double> reg;
    LafModule<double> laf(reg, cfg, rng);
    auto w = laf.weights();
    w.data() = {0.0, 1.0, 0.0};
    auto fused = laf.layer_adapt(taps);
    CHECK(fused.shape() == Shape{1, 5, 8});
    for (int64_t i = 0; i < 40; ++i)
      CHECK(fused.data()[i] == taps.taps[1].data()[i]);
  }
  SUBCASE("all-zero weights give the zero tensor") {
    cfg.mode = LafMode::kWeightedSum;
    ParamRegistry<double> reg;
    LafModule<double> laf(reg, cfg, rng);
    laf.weights().data() = {0.0, 0.0, 0.0};
    auto fused = laf.layer_adapt(taps);
    for (double v : fused.data()) CHECK(v == 0.0);
  }
  SUBCASE("concat stacks one channel per tap") {
    cfg.mode = LafMode::kConcat;
    ParamRegistry<double> reg;
    LafModule<double> laf(reg, cfg, rng);
    CHECK(laf.layer_adapt(taps).dim(0) == 3);
  }
  SUBCASE("probe returns the requested tap alone") {
    cfg.mode = LafMode::kProbe;
    cfg.probe_layer = 7;
    ParamRegistry<double> reg;
    LafModule<double> laf(reg, cfg, rng);
    auto fused = laf.layer_adapt(taps);
    CHECK(fused.shape() == Shape{1, 5, 8});
    CHECK(fused.data() == taps.taps[1].data());
  }
  SUBCASE("probe outside the tap range is a configuration error") {
    cfg.mode = LafMode::kProbe;
    cfg.probe_layer = 9;
    ParamRegistry<double> reg;
    LafModule<double> laf(reg, cfg, rng);
    CHECK_THROWS_AS(laf.layer_adapt(taps), ConfigError);
  }
  SUBCASE("scaling all weights by 2 scales the fused map by exactly 2") {
    cfg.mode = LafMode::kWeightedSum;
    ParamRegistry<double> reg;
    LafModule<double> laf(reg, cfg, rng);
    laf.weights().data() = {0.3, -0.2, 0.9};
    auto f1 = laf.layer_adapt(taps);
    laf.weights().data() = {0.6, -0.4, 1.8};
    auto f2 = laf.layer_adapt(taps);
    for (int64_t i = 0; i < f1.numel(); ++i)
      CHECK(f2.data()[i] == 2.0 * f1.data()[i]);
  }
}

TEST_CASE("aid_decode shapes, causality, and uniform collapse") {
  LafConfig cfg;
  cfg.mode = LafMode::kConcat;
  cfg.taps = 3;
  cfg.tap_lo = 6;
  cfg.d = 8;
  cfg.accents = 4;
  cfg.channels = 2;
  ParamRegistry<double> reg;
  Rng rng(23);
  LafModule<double> laf(reg, cfg, rng);

  auto fused = D::randn({3, 6, 8}, rng, 1.0, false);
  auto res = laf.aid_decode(fused);
  CHECK(res.frame_logits.shape() == Shape{6, 4});
  CHECK(res.embedding.shape() == Shape{6, 8});
  double sum = 0;
  for (double v : res.utterance_posterior.data()) sum += v;
  CHECK(sum == doctest::Approx(1.0));

  SUBCASE("causal: perturbing later fused frames leaves earlier logits") {
    auto fd = fused.data();
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t j = 0; j < 8; ++j) fd[(c * 6 + 4) * 8 + j] += 3.0;
    auto pert = laf.aid_decode(D::from(fused.shape(), fd));
    for (int64_t t = 0; t < 4; ++t)
      for (int64_t a = 0; a < 4; ++a)
        CHECK(res.frame_logits.at(t, a) == pert.frame_logits.at(t, a));
  }
  SUBCASE("zero discriminator gives the uniform posterior") {
    zero_params_matching(reg, "laf.cls.lin", "");
    auto res0 = laf.aid_decode(fused);
    for (double v : res0.utterance_posterior.data())
      CHECK(v == doctest::Approx(0.25));
  }
}

TEST_CASE("probe mode equals running the AID head on the tap directly") {
  LafConfig cfg;
  cfg.mode = LafMode::kProbe;
  cfg.probe_layer = 8;
  cfg.taps = 3;
  cfg.tap_lo = 6;
  cfg.d = 8;
  cfg.accents = 4;
  cfg.channels = 2;
  ParamRegistry<double> reg;
  Rng rng(29);
  LafModule<double> laf(reg, cfg, rng);

  EncoderTaps<double> taps;
  for (int i = 0; i < 3; ++i)
    taps.taps.push_back(D::randn({5, 8}, rng, 1.0, false));
  taps.final = taps.taps.back();

  auto via_adapt = laf.aid_decode(laf.layer_adapt(taps));
  auto direct = laf.aid_decode(stack_channels<double>({taps.taps[2]}));
  CHECK(via_adapt.frame_logits.data() == direct.frame_logits.data());
}

TEST_CASE("aid head gradient matches finite differences") {
  LafConfig cfg;
  cfg.mode = LafMode::kWeightedSum;
  cfg.taps = 2;
  cfg.tap_lo = 6;
  cfg.d = 6;
  cfg.accents = 3;
  cfg.channels = 2;
  ParamRegistry<double> reg;
  Rng rng(31);
  LafModule<double> laf(reg, cfg, rng);
  EncoderTaps<double> taps;
  taps.taps.push_back(D::randn({4, 6}, rng, 1.0, true));
  taps.taps.push_back(D::randn({4, 6}, rng, 1.0, true));
  taps.final = taps.taps.back();
  auto probe = D::randn({4, 3}, rng, 1.0, false);
  auto make = [&]() {
    auto res = laf.aid_decode(laf.layer_adapt(taps));
    return sum_all(mul(res.frame_logits, probe));
  };
  backward(make());
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return make().item();
  };
  std::vector<D> params = {taps.taps[0], taps.taps[1]};
  for (auto& p : reg.all()) params.push_back(p.tensor);
  CHECK(test::max_grad_rel_error(params, loss_fn) < 1e-4);
}

TEST_CASE("cross-attention fusion") {
  FusionConfig cfg;
  cfg.d = 6;
  ParamRegistry<double> reg;
  Rng rng(37);
  CrossAttentionFusion<double> fusion(reg, cfg, rng);

  SUBCASE("single-key collapse: O = Relu(V) = Q_att") {
    auto h_ac = D::randn({1, 6}, rng, 1.0, false);
    auto h_ga = D::randn({1, 6}, rng, 1.0, false);
    auto out = fusion.forward(h_ac, h_ga, nullptr);
    auto v = relu(matmul(h_ga, reg.all()[2].tensor));  // fusion.wv
    CHECK(out.o_att.data() == out.q_att.data());
    for (int64_t i = 0; i < 6; ++i)
      CHECK(out.o_att.data()[i] == doctest::Approx(v.data()[i]));
  }
  SUBCASE("joint K/V time permutation leaves outputs unchanged") {
    auto h_ac = D::randn({5, 6}, rng, 1.0, false);
    auto h_ga = D::randn({5, 6}, rng, 1.0, false);
    auto base = fusion.forward(h_ac, h_ga, nullptr);
    std::vector<int64_t> perm = {3, 0, 4, 2, 1};
    std::vector<double> pd(5 * 6);
    for (int64_t i = 0; i < 5; ++i)
      for (int64_t j = 0; j < 6; ++j) pd[i * 6 + j] = h_ga.at(perm[i], j);
    auto permuted = fusion.forward(h_ac, D::from({5, 6}, pd), nullptr);
    for (int64_t i = 0; i < base.o_att.numel(); ++i)
      CHECK(std::abs(base.o_att.data()[i] - permuted.o_att.data()[i]) < 1e-10);
  }
  SUBCASE("projections are applied exactly once per forward") {
    auto h = D::randn({3, 6}, rng, 1.0, false);
    fusion.forward(h, h, nullptr);
    CHECK(fusion.last_k_projections() == 1);
    CHECK(fusion.last_v_projections() == 1);
  }
  SUBCASE("outputs are non-negative") {
    auto h_ac = D::randn({4, 6}, rng, 1.0, false);
    auto h_ga = D::randn({4, 6}, rng, 1.0, false);
    auto out = fusion.forward(h_ac, h_ga, nullptr);
    for (double v : out.o_att.data()) CHECK(v >= 0.0);
  }
  SUBCASE("resolution mismatch is a shape error") {
    auto h_ac = D::randn({3, 6}, rng, 1.0, false);
    auto h_ga = D::randn({4, 6}, rng, 1.0, false);
    CHECK_THROWS_AS(fusion.forward(h_ac, h_ga, nullptr), ShapeError);
  }
  SUBCASE("chunk-masked fusion ignores later-chunk keys") {
    auto h_ac = D::randn({4, 6}, rng, 1.0, false);
    auto h_ga = D::randn({4, 6}, rng, 1.0, false);
    auto mask = ChunkMask::build(4, 2, false);
    auto base = fusion.forward(h_ac, h_ga, mask.matrix);
    auto gd = h_ga.data();
    for (int64_t j = 0; j < 6; ++j) gd[3 * 6 + j] -= 4.0;
    auto pert = fusion.forward(h_ac, D::from({4, 6}, gd), mask.matrix);
    for (int64_t t = 0; t < 2; ++t)
      for (int64_t j = 0; j < 6; ++j)
        CHECK(base.o_att.at(t, j) == pert.o_att.at(t, j));
  }
}

TEST_CASE("fusion gradient through both stages matches finite differences") {
  FusionConfig cfg;
  cfg.d = 6;
  ParamRegistry<double> reg;
  Rng rng(41);
  CrossAttentionFusion<double> fusion(reg, cfg, rng);
  auto h_ac = D::randn({4, 6}, rng, 1.0, true);
  auto h_ga = D::randn({4, 6}, rng, 1.0, true);
  auto probe = D::randn({4, 6}, rng, 1.0, false);
  auto make = [&]() {
    return sum_all(mul(fusion.forward(h_ac, h_ga, nullptr).o_att, probe));
  };
  backward(make());
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return make().item();
  };
  std::vector<D> params = {h_ac, h_ga};
  for (auto& p : reg.all()) params.push_back(p.tensor);
  CHECK(test::max_grad_rel_error(params, loss_fn) < 1e-4);
}

TEST_CASE("model assembly, determinism, and checkpoint round trip") {
  Config c = Config::defaults();
  c.set("model.d", "16");
  c.set("model.heads", "2");
  c.set("model.blocks", "4");
  c.set("model.sub2_after", "1");
  c.set("model.taps", "3");
  c.set("model.conv_kernel", "5");
  c.set("model.ffn_expansion", "2");
  c.set("model.dec_layers", "1");
  c.set("model.dec_heads", "2");
  c.set("data.feat_dim", "12");
  c.set("data.vocab_size", "5");
  c.set("data.accents", "3");
  auto cfg = ModelConfig::from_config(c);

  Model<float> m(cfg, 99);
  Model<float> m2(cfg, 99);
  for (size_t i = 0; i < m.params().size(); ++i)
    CHECK(m.params()[i].tensor.data() == m2.params()[i].tensor.data());

  FeatureMatrix feat;
  feat.frames = 16;
  feat.dim = 12;
  {
    Rng rng(5);
    feat.data.resize(16 * 12);
    for (auto& v : feat.data) v = rng.normal();
  }
  auto x = m.input_tensor(feat);
  auto mask = ChunkMask::build(4, 2, false);
  NoGradGuard ng;
  auto out = m.forward(x, mask);
  CHECK(out.ctc_log_probs.shape() == Shape{4, 6});
  CHECK(out.has_accent);
  CHECK(out.accent.frame_logits.shape() == Shape{4, 3});
  CHECK(out.o_att.shape() == Shape{4, 16});

  auto out2 = m.forward(x, mask);
  CHECK(out.ctc_log_probs.data() == out2.ctc_log_probs.data());

  SUBCASE("save/load round trip is bit-exact") {
    CmvnStats cmvn;
    cmvn.mean.assign(12, 0.5);
    cmvn.var.assign(12, 2.0);
    cmvn.frame_count = 10;
    SynthConfig synth;
    synth.vocab = 5;
    synth.accents = 3;
    synth.feat_dim = 12;
    synth.template_seed = 0xDEADBEEF12345678ull;
    const std::string path = "/tmp/af_model_test.qfn";
    m.save(path, cmvn, synth);
    auto loaded = Model<float>::load(path);
    REQUIRE(loaded.model->params().size() == m.params().size());
    for (size_t i = 0; i < m.params().size(); ++i) {
      CHECK(loaded.model->params()[i].name == m.params()[i].name);
      CHECK(loaded.model->params()[i].tensor.data() ==
            m.params()[i].tensor.data());
    }
    CHECK(loaded.cmvn.mean == cmvn.mean);
    CHECK(loaded.synth.template_seed == synth.template_seed);
    CHECK(loaded.synth.vocab == 5);
    auto lout = loaded.model->forward(loaded.model->input_tensor(feat), mask);
    CHECK(lout.ctc_log_probs.data() == out.ctc_log_probs.data());
  }
  SUBCASE("schema errors name the offending entry") {
    CmvnStats cmvn;
    cmvn.mean.assign(12, 0.0);
    cmvn.var.assign(12, 1.0);
    const std::string path = "/tmp/af_model_schema.qfn";
    m.save(path, cmvn, SynthConfig{});

    auto entries = load_container(path);
    auto extra = entries;
    extra.push_back({"rogue.entry", {1}, {1.0f}});
    save_container(path, extra);
    try {
      Model<float>::load(path);
      FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
      CHECK(std::string(e.what()).find("rogue.entry") != std::string::npos);
    }

    auto missing = entries;
    std::string dropped = missing.back().name;
    missing.pop_back();
    save_container(path, missing);
    try {
      Model<float>::load(path);
      FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
      CHECK(std::string(e.what()).find(dropped) != std::string::npos);
    }
  }
  SUBCASE("invalid configurations are rejected") {
    auto bad = cfg;
    bad.laf_enabled = false;
    bad.fusion = FusionMode::kCross;
    CHECK_THROWS_AS(Model<float>(bad, 1), ConfigError);
  }
}
