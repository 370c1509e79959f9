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

#include "core/rng.h"
#include "core/tensor.h"
#include "testutil.h"

using namespace af;
using D = Tensor<double>;

TEST_CASE("matmul identity and forced arithmetic") {
  auto i2 = D::from({2, 2}, {1, 0, 0, 1});
  auto a = D::from({2, 2}, {1, 2, 3, 4});
  auto r = matmul(i2, a);
  CHECK(r.data() == std::vector<double>{1, 2, 3, 4});

  auto b = D::from({2, 1}, {5, 6});
  auto r2 = matmul(a, b);
  CHECK(r2.at(0, 0) == doctest::Approx(17));
  CHECK(r2.at(1, 0) == doctest::Approx(39));

  CHECK_THROWS_AS(matmul(a, D::from({3, 1}, {1, 2, 3})), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(7);
  auto a = D::randn({3, 4}, rng, 1.0, true);
  auto b = D::randn({4, 2}, rng, 1.0, true);
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return sum_all(matmul(a, b)).item();
  };
  backward(sum_all(matmul(a, b)));
  CHECK(test::max_grad_rel_error({a, b}, loss_fn) < 1e-6);
}

TEST_CASE("softmax basics") {
  auto x = D::from({1, 2}, {0, 0});
  auto y = softmax_rows(x);
  CHECK(y.at(0, 0) == doctest::Approx(0.5));
  CHECK(y.at(0, 1) == doctest::Approx(0.5));

  auto x2 = D::from({1, 2}, {std::log(2.0), std::log(6.0)});
  auto y2 = softmax_rows(x2);
  CHECK(y2.at(0, 0) == doctest::Approx(0.25));
  CHECK(y2.at(0, 1) == doctest::Approx(0.75));
}

TEST_CASE("softmax shift invariance and row normalization") {
  Rng rng(11);
  auto x = D::randn({5, 9}, rng, 3.0, false);
  auto shifted = x.data();
  for (auto& v : shifted) v += 123.456;
  auto y1 = softmax_rows(x);
  auto y2 = softmax_rows(D::from(x.shape(), shifted));
  CHECK(test::max_abs_diff(y1.data(), y2.data()) < 1e-12);
  for (int64_t i = 0; i < 5; ++i) {
    double s = 0;
    for (int64_t j = 0; j < 9; ++j) s += y1.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("masked softmax zeroes disallowed entries and their grads") {
  auto mask = std::make_shared<AttnMask>();
  mask->rows = 2;
  mask->cols = 3;
  mask->allow = {1, 1, 0, 1, 1, 1};
  auto x = D::from({2, 3}, {0.3, -0.1, 9.0, 0.0, 0.0, 0.0}, true);
  auto y = softmax_rows(x, mask);
  CHECK(y.at(0, 2) == 0.0);
  CHECK(y.at(0, 0) + y.at(0, 1) == doctest::Approx(1.0));
  CHECK(y.at(1, 0) == doctest::Approx(1.0 / 3));
  backward(sum_all(mul(y, y)));
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("layer_norm analytic cases") {
  auto gain = D::from({2}, {1, 1});
  auto bias = D::from({2}, {0, 0});
  auto c = layer_norm(D::from({1, 2}, {3.5, 3.5}), gain, bias);
  CHECK(c.at(0, 0) == doctest::Approx(0.0));
  CHECK(c.at(0, 1) == doctest::Approx(0.0));

  // Population variance: mean 2, var 1.
  auto y = layer_norm(D::from({1, 2}, {1.0, 3.0}), gain, bias, 1e-12);
  CHECK(y.at(0, 0) == doctest::Approx(-1.0));
  CHECK(y.at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("layer_norm pre-affine rows have near-zero mean") {
  Rng rng(3);
  auto x = D::randn({7, 16}, rng, 2.0, false);
  auto y = layer_norm(x, D::full({16}, 1.0), D::zeros({16}));
  for (int64_t i = 0; i < 7; ++i) {
    double m = 0;
    for (int64_t j = 0; j < 16; ++j) m += y.at(i, j);
    CHECK(std::abs(m / 16) < 1e-9);
  }
}

TEST_CASE("layer_norm gradient matches finite differences") {
  Rng rng(5);
  auto x = D::randn({4, 6}, rng, 1.0, true);
  auto g = D::randn({6}, rng, 0.5, true);
  auto b = D::randn({6}, rng, 0.5, true);
  auto weights = D::randn({4, 6}, rng, 1.0, false);
  auto make = [&]() { return sum_all(mul(layer_norm(x, g, b), weights)); };
  backward(make());
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return make().item();
  };
  CHECK(test::max_grad_rel_error({x, g, b}, loss_fn) < 1e-5);
}

TEST_CASE("causal conv1d basics") {
  Rng rng(9);
  auto x = D::randn({6, 2}, rng, 1.0, false);

  SUBCASE("zero kernel gives zero output") {
    auto w = D::zeros({3, 2, 4});
    auto y = causal_conv1d(x, w, D::zeros({3}));
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("identity kernel at current tap reproduces input") {
    // w[c][c][0] = 1 picks x[t] for stride 1.
    std::vector<double> w(2 * 2 * 3, 0.0);
    w[0 * 2 * 3 + 0 * 3 + 0] = 1.0;
    w[1 * 2 * 3 + 1 * 3 + 0] = 1.0;
    auto y = causal_conv1d(x, D::from({2, 2, 3}, w), D{});
    CHECK(y.data() == x.data());
  }
  SUBCASE("future perturbation leaves past output bit-exact") {
    Rng r2(10);
    auto w = D::randn({2, 2, 3}, r2, 1.0, false);
    auto y = causal_conv1d(x, w, D{});
    auto xd = x.data();
    xd[5 * 2] += 100.0;  // frame 5
    auto y2 = causal_conv1d(D::from(x.shape(), xd), w, D{});
    for (int64_t t = 0; t < 5; ++t)
      for (int64_t c = 0; c < 2; ++c) CHECK(y.at(t, c) == y2.at(t, c));
  }
  SUBCASE("bad stride is a configuration error") {
    CHECK_THROWS_AS(causal_conv1d(x, D::zeros({1, 2, 3}), D{}, 0), ConfigError);
  }
  SUBCASE("stride 2 halves and truncates odd frame") {
    auto w = D::zeros({1, 2, 3});
    CHECK(causal_conv1d(x, w, D{}, 2).dim(0) == 3);
    auto x9 = D::zeros({9, 2});
    CHECK(causal_conv1d(x9, w, D{}, 2).dim(0) == 4);
  }
}

TEST_CASE("conv gradients match finite differences") {
  Rng rng(13);
  auto x = D::randn({5, 3}, rng, 1.0, true);
  auto w = D::randn({2, 3, 3}, rng, 0.7, true);
  auto b = D::randn({2}, rng, 0.3, true);
  auto probe = D::randn({2, 2}, rng, 1.0, false);
  auto make = [&]() { return sum_all(mul(causal_conv1d(x, w, b, 2), probe)); };
  backward(make());
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return make().item();
  };
  CHECK(test::max_grad_rel_error({x, w, b}, loss_fn) < 1e-6);
}

TEST_CASE("depthwise conv gradient and causality") {
  Rng rng(17);
  auto x = D::randn({6, 4}, rng, 1.0, true);
  auto w = D::randn({4, 3}, rng, 0.7, true);
  auto b = D::randn({4}, rng, 0.3, true);
  auto probe = D::randn({6, 4}, rng, 1.0, false);
  auto make = [&]() {
    return sum_all(mul(causal_depthwise_conv1d(x, w, b), probe));
  };
  backward(make());
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return make().item();
  };
  CHECK(test::max_grad_rel_error({x, w, b}, loss_fn) < 1e-6);
}

TEST_CASE("conv2d causal in time, centered in feature") {
  Rng rng(21);
  auto x = D::randn({2, 5, 4}, rng, 1.0, true);
  auto w = D::randn({3, 2, 3, 3}, rng, 0.5, true);
  auto b = D::randn({3}, rng, 0.3, true);
  auto probe = D::randn({3, 5, 4}, rng, 1.0, false);

  auto y = causal_conv2d(x, w, b);
  CHECK(y.shape() == Shape{3, 5, 4});

  // Perturb the last time slice: earlier outputs identical.
  auto xd = x.data();
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t f = 0; f < 4; ++f) xd[(c * 5 + 4) * 4 + f] += 9.0;
  auto y2 = causal_conv2d(D::from(x.shape(), xd), w, b);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t t = 0; t < 4; ++t)
      for (int64_t f = 0; f < 4; ++f)
        CHECK(y.data()[(c * 5 + t) * 4 + f] == y2.data()[(c * 5 + t) * 4 + f]);

  auto make = [&]() { return sum_all(mul(causal_conv2d(x, w, b), probe)); };
  backward(make());
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return make().item();
  };
  CHECK(test::max_grad_rel_error({x, w, b}, loss_fn) < 1e-6);
}

TEST_CASE("backward basics") {
  auto x = D::scalar(3.0, true);
  backward(x);
  CHECK(x.grad()[0] == 1.0);

  auto x2 = D::scalar(3.0, true);
  backward(mul(x2, x2));
  CHECK(x2.grad()[0] == doctest::Approx(6.0));

  auto v = D::from({2, 2}, {1, 2, 3, 4}, true);
  CHECK_THROWS_AS(backward(v), ContractError);
}

TEST_CASE("gradient accumulates additively across uses and sweeps") {
  auto x = D::scalar(2.0, true);
  auto y = add(mul(x, x), x);  // x^2 + x, grad 2x+1 = 5
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(5.0));
  backward(mul(x, x));  // second sweep adds 4
  CHECK(x.grad()[0] == doctest::Approx(9.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("replaying the same graph is bit-deterministic") {
  Rng rng(33);
  auto a = D::randn({4, 4}, rng, 1.0, false);
  auto b = D::randn({4, 4}, rng, 1.0, false);
  auto run = [&]() {
    auto h = silu(matmul(a, b));
    return softmax_rows(layer_norm(h, D::full({4}, 1.0), D::zeros({4}))).data();
  };
  CHECK(run() == run());
}

TEST_CASE("misc op gradients (slice/concat/gather/mean/scale_by)") {
  Rng rng(41);
  auto table = D::randn({5, 3}, rng, 1.0, true);
  auto w = D::randn({3, 4}, rng, 1.0, true);
  auto s = D::scalar(0.7, true);
  auto probe = D::randn({1, 8}, rng, 1.0, false);
  std::vector<int64_t> idx = {4, 0, 2, 2};
  auto make = [&]() {
    auto g = gather_rows(table, idx);          // 4x3
    auto h = silu(matmul(g, w));               // 4x4
    auto cc = concat_cols<double>({h, h});     // 4x8
    auto sl = slice_rows(cc, 1, 3);            // 3x8
    auto m = mean_rows(sl);                    // 1x8
    return sum_all(mul(scale_by(m, s), probe));
  };
  backward(make());
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return make().item();
  };
  CHECK(test::max_grad_rel_error({table, w, s}, loss_fn) < 1e-6);
}

TEST_CASE("random composite graphs pass finite-difference checks") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 1000 + 17);
    int64_t t = rng.uniform_int(2, 5);
    int64_t d = rng.uniform_int(2, 6);
    auto x = D::randn({t, d}, rng, 1.0, true);
    auto w1 = D::randn({d, d}, rng, 0.8, true);
    auto g = D::randn({d}, rng, 0.2, true);
    auto b = D::randn({d}, rng, 0.2, true);
    auto probe = D::randn({t, d}, rng, 1.0, false);
    auto make = [&]() {
      auto h = matmul(x, w1);
      auto n = layer_norm(add(h, x), g, b);
      auto a = softmax_rows(matmul(n, transpose(n)));
      auto o = matmul(a, n);
      return sum_all(mul(sigmoid(o), probe));
    };
    backward(make());
    auto loss_fn = [&]() {
      NoGradGuard ng;
      return make().item();
    };
    CHECK(test::max_grad_rel_error({x, w1, g, b}, loss_fn) < 1e-4);
  }
}

TEST_CASE("rng helpers are deterministic and unbiased enough") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng r(7);
  int counts[8] = {0};
  for (int i = 0; i < 100000; ++i) counts[r.uniform_int(0, 7)]++;
  double chi2 = 0;
  for (int c : counts) {
    double e = 100000.0 / 8;
    chi2 += (c - e) * (c - e) / e;
  }
  CHECK(chi2 < 18.48);  // chi^2_{7, 0.99}
}
