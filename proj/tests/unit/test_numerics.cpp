// Copyright 2026 The simulst Authors.
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

#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.h"
#include "simulst/error.h"
#include "simulst/ops.h"
#include "simulst/optim.h"

using namespace simulst;
using simulst::testing::gradient_error;
using simulst::testing::random_tensor;

TEST_CASE("matmul") {
  auto eye = TensorD::from({2, 2}, {1, 0, 0, 1});
  auto m = TensorD::from({2, 2}, {1, 2, 3, 4});
  auto r = matmul(eye, m);
  CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{1, 2, 3, 4});

  auto row = TensorD::from({1, 2}, {1, 2});
  auto col = TensorD::from({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == 11);

  auto a = TensorD::zeros({2, 3});
  auto b = TensorD::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax") {
  auto s = softmax(TensorD::from({1, 2}, {0, 0}));
  CHECK(s.at(0) == doctest::Approx(0.5));
  CHECK(s.at(1) == doctest::Approx(0.5));

  auto t = softmax(TensorD::from({2}, {std::log(1.0), std::log(3.0)}));
  CHECK(t.at(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(t.at(1) == doctest::Approx(0.75).epsilon(1e-12));

  CHECK_THROWS_AS(softmax(TensorD::zeros({2, 0})), DimensionError);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({3, 5}, rng, -20, 20);
    auto y = softmax(x);
    auto shifted = softmax(add_scalar(x, 123.0));
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(y.at(r, c) >= 0);
        total += y.at(r, c);
        CHECK(std::abs(y.at(r, c) - shifted.at(r, c)) < 1e-6);
      }
      CHECK(std::abs(total - 1) < 1e-6);
    }
  }
  // Float rows as well.
  auto xf = TensorF::from({1, 4}, {100.f, 101.f, -3.f, 0.f});
  auto yf = softmax(xf);
  double total = 0;
  for (float v : yf.data()) total += v;
  CHECK(std::abs(total - 1) < 1e-6);
}

TEST_CASE("softmax along the leading axis") {
  auto x = TensorD::from({2, 2}, {0, 1, 0, 1});
  auto y = softmax(x, 0);
  CHECK(y.at(0, 0) == doctest::Approx(0.5));
  CHECK(y.at(1, 1) == doctest::Approx(0.5));
}

TEST_CASE("conv1d_lookahead") {
  SUBCASE("identity kernel") {
    auto x = TensorD::from({4, 1}, {1, 2, 3, 4});
    auto k = TensorD::from({1, 1, 1}, {1});
    auto y = conv1d_lookahead(x, k, TensorD(), 1, 0);
    CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{1, 2, 3, 4});
  }
  SUBCASE("stride two length") {
    auto x = TensorD::zeros({5, 2});
    auto k = TensorD::zeros({3, 2, 3});
    CHECK(conv1d_lookahead(x, k, TensorD(), 2, 1).dim(0) == 3);
  }
  SUBCASE("causality under perturbation") {
    std::mt19937_64 rng(3);
    for (int stride : {1, 2}) {
      for (int la : {0, 1, 2}) {
        auto x = random_tensor({9, 2}, rng);
        auto k = random_tensor({3, 2, 2}, rng);
        auto b = random_tensor({2}, rng);
        auto y = conv1d_lookahead(x, k, b, stride, la);
        for (std::size_t t = 0; t < y.dim(0); ++t) {
          const std::size_t horizon = t * static_cast<std::size_t>(stride) + static_cast<std::size_t>(la);
          for (std::size_t f = horizon + 1; f < 9; ++f) {
            auto xp = x.detach();
            xp.mutable_data()[f * 2] += 5.0;
            auto yp = conv1d_lookahead(xp, k, b, stride, la);
            CHECK(yp.at(t, 0) == y.at(t, 0));
            CHECK(yp.at(t, 1) == y.at(t, 1));
          }
          if (horizon < 9) {
            auto xp = x.detach();
            xp.mutable_data()[horizon * 2] += 5.0;
            auto yp = conv1d_lookahead(xp, k, b, stride, la);
            CHECK((yp.at(t, 0) != y.at(t, 0) || yp.at(t, 1) != y.at(t, 1)));
          }
        }
      }
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(conv1d_lookahead(TensorD::zeros({0, 1}), TensorD::zeros({3, 1, 1}), TensorD(), 1, 0),
                    DimensionError);
    CHECK_THROWS_AS(conv1d_lookahead(TensorD::zeros({4, 1}), TensorD::zeros({2, 1, 1}), TensorD(), 1, 2),
                    ValueError);
    CHECK_THROWS_AS(conv1d_lookahead(TensorD::zeros({4, 1}), TensorD::zeros({3, 1, 1}), TensorD(), 3, 0),
                    ValueError);
  }
}

TEST_CASE("masked_attention") {
  auto v = TensorD::from({2, 2}, {1, 2, 3, 4});
  SUBCASE("single key") {
    auto q = TensorD::from({1, 2}, {0.3, -0.1});
    auto k = TensorD::from({1, 2}, {0.5, 0.5});
    auto vs = TensorD::from({1, 2}, {7, 8});
    auto y = masked_attention(q, k, vs, AttentionMask::full(1, 1));
    CHECK(y.at(0) == doctest::Approx(7));
    CHECK(y.at(1) == doctest::Approx(8));
  }
  SUBCASE("equal scores average the values") {
    auto q = TensorD::from({1, 2}, {1, 1});
    auto k = TensorD::from({2, 2}, {1, 0, 0, 1});
    auto y = masked_attention(q, k, v, AttentionMask::full(1, 2));
    CHECK(y.at(0) == doctest::Approx(2));
    CHECK(y.at(1) == doctest::Approx(3));
  }
  SUBCASE("mask selects key zero") {
    std::mt19937_64 rng(11);
    AttentionMask mask(1, 2);
    mask.set(0, 0, true);
    for (int i = 0; i < 10; ++i) {
      auto q = random_tensor({1, 2}, rng, -3, 3);
      auto k = random_tensor({2, 2}, rng, -3, 3);
      auto y = masked_attention(q, k, v, mask);
      CHECK(y.at(0) == 1);
      CHECK(y.at(1) == 2);
    }
  }
  SUBCASE("all-false row is rejected") {
    AttentionMask mask(1, 2);
    CHECK_THROWS_AS(masked_attention(TensorD::zeros({1, 2}), TensorD::zeros({2, 2}), v, mask), ValueError);
  }
}

TEST_CASE("layer_norm") {
  auto g = TensorD::from({2}, {1, 1});
  auto b = TensorD::from({2}, {0, 0});
  auto c = layer_norm(TensorD::from({1, 2}, {4, 4}), g, b);
  CHECK(c.at(0) == 0);
  CHECK(c.at(1) == 0);
  auto y = layer_norm(TensorD::from({1, 2}, {1, 3}), g, b);
  CHECK(y.at(0) == doctest::Approx(-1).epsilon(1e-5));
  CHECK(y.at(1) == doctest::Approx(1).epsilon(1e-5));
  auto fives = layer_norm(TensorD::from({1, 3}, {1, 5, 9}), TensorD::zeros({3}), TensorD::full({3}, 5));
  for (double v : fives.data()) CHECK(v == 5);
  CHECK_THROWS_AS(layer_norm(TensorD::zeros({2, 1}), TensorD::zeros({1}), TensorD::zeros({1})), DimensionError);
}

TEST_CASE("cross_entropy") {
  const int targets[] = {1};
  CHECK(cross_entropy(TensorD::from({1, 3}, {-1e3, 0, -1e3}), targets, -1).item() == doctest::Approx(0));
  const int t4[] = {2};
  CHECK(cross_entropy(TensorD::zeros({1, 4}), t4, -1).item() == doctest::Approx(std::log(4.0)));
  const int pad[] = {0, 0};
  CHECK_THROWS_AS(cross_entropy(TensorD::zeros({2, 4}), pad, 0), ValueError);
  const int bad[] = {4};
  CHECK_THROWS_AS(cross_entropy(TensorD::zeros({1, 4}), bad, -1), ValueError);
  // Pad rows are excluded from both numerator and count.
  const int mixed[] = {2, 0};
  auto logits = TensorD::from({2, 4}, {0, 0, 0, 0, 5, 1, 2, 3});
  CHECK(cross_entropy(logits, mixed, 0).item() == doctest::Approx(std::log(4.0)));
}

TEST_CASE("backward basics") {
  auto x = TensorD::from({1}, {3}, true);
  auto p = TensorD::from({1}, {2}, true);
  {
    Tape<double> tape;
    auto loss = sum(mul(x, x));
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == 6);
  CHECK(p.grad()[0] == 0);

  SUBCASE("twice without zeroing doubles") {
    auto a = TensorD::from({2, 2}, {0.1, -0.4, 0.7, 0.2}, true);
    auto w = TensorD::from({2, 2}, {1.5, -0.3, 0.2, 0.9}, true);
    Tape<double> tape;
    auto loss = sum(relu(matmul(a, w)));
    tape.backward(loss);
    std::vector<double> once(a.grad().begin(), a.grad().end());
    tape.backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(a.grad()[i] == 2 * once[i]);
  }
  SUBCASE("non-scalar loss") {
    auto a = TensorD::from({2}, {1, 2}, true);
    Tape<double> tape;
    auto y = scale(a, 2.0);
    CHECK_THROWS_AS(tape.backward(y), DimensionError);
  }
  SUBCASE("reused input accumulates") {
    auto a = TensorD::from({1}, {2}, true);
    Tape<double> tape;
    auto loss = sum(add(mul(a, a), scale(a, 3.0)));
    tape.backward(loss);
    CHECK(a.grad()[0] == doctest::Approx(7));
  }
}

TEST_CASE("tape records in topological order") {
  auto a = TensorD::from({1, 2}, {1, 2}, true);
  Tape<double> tape;
  auto b = scale(a, 2.0);
  auto c = add(b, a);
  auto d = sum(c);
  REQUIRE(tape.size() == 3);
  for (std::size_t i = 0; i < tape.size(); ++i) {
    for (const auto& in : tape.entries()[i].inputs) {
      bool produced_earlier = in->is_leaf;
      for (std::size_t j = 0; j < i; ++j) produced_earlier |= tape.entries()[j].output == in;
      CHECK(produced_earlier);
    }
  }
  (void)d;
}

TEST_CASE("no tape means no recording") {
  auto a = TensorD::from({1}, {2}, true);
  auto b = scale(a, 2.0);
  CHECK_FALSE(b.requires_grad());
}

TEST_CASE("finite-difference agreement of every op") {
  std::mt19937_64 rng(42);
  const double tol = 1e-4;
  for (int trial = 0; trial < 5; ++trial) {
    CHECK(gradient_error([](auto& in) { return sum(matmul(in[0], in[1])); },
                         {random_tensor({2, 3}, rng), random_tensor({3, 4}, rng)}) < tol);
    CHECK(gradient_error([](auto& in) { return sum(mul(softmax(in[0]), in[1])); },
                         {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}) < tol);
    CHECK(gradient_error([](auto& in) { return sum(mul(log_softmax(in[0]), in[1])); },
                         {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}) < tol);
    CHECK(gradient_error([](auto& in) { return sum(mul(layer_norm(in[0], in[1], in[2]), in[3])); },
                         {random_tensor({3, 4}, rng), random_tensor({4}, rng), random_tensor({4}, rng),
                          random_tensor({3, 4}, rng)}) < tol);
    for (int stride : {1, 2}) {
      CHECK(gradient_error(
                [stride](auto& in) { return sum(mul(conv1d_lookahead(in[0], in[1], in[2], stride, 1), in[3])); },
                {random_tensor({5, 2}, rng), random_tensor({3, 2, 3}, rng), random_tensor({3}, rng),
                 random_tensor({stride == 1 ? 5u : 3u, 3}, rng)}) < tol);
    }
    auto mask = AttentionMask::causal(3);
    CHECK(gradient_error([&](auto& in) { return sum(mul(masked_attention(in[0], in[1], in[2], mask, 2), in[3])); },
                         {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({3, 4}, rng),
                          random_tensor({3, 4}, rng)}) < tol);
    const int targets[] = {1, 0, 3};
    CHECK(gradient_error([&](auto& in) { return cross_entropy(in[0], targets, 0); },
                         {random_tensor({3, 4}, rng)}) < tol);
    const int ids[] = {2, 0, 2};
    CHECK(gradient_error([&](auto& in) { return sum(mul(embedding(in[0], ids), in[1])); },
                         {random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)}) < tol);
    CHECK(gradient_error(
              [](auto& in) {
                return sum(mul(concat_rows<double>({slice_rows(in[0], 1, 3), in[1]}), in[2]));
              },
              {random_tensor({3, 2}, rng), random_tensor({1, 2}, rng), random_tensor({3, 2}, rng)}) < tol);
    CHECK(gradient_error([](auto& in) { return mean(add_bias(sub(in[0], in[1]), in[2])); },
                         {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng), random_tensor({3}, rng)}) < tol);
    CHECK(gradient_error([](auto& in) { return sum(mul(column(in[0], 1), in[1])); },
                         {random_tensor({3, 2}, rng), random_tensor({3}, rng)}) < tol);
  }
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(5);
  auto x = TensorD::full({100, 10}, 1.0);
  auto same = dropout(x, 0.0, rng);
  CHECK(same.node() == x.node());
  auto y = dropout(x, 0.1, rng);
  std::size_t zeros = 0;
  for (double v : y.data()) {
    if (v == 0) {
      ++zeros;
    } else {
      CHECK(v == doctest::Approx(1 / 0.9));
    }
  }
  CHECK(zeros > 50);
  CHECK(zeros < 150);
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient keeps parameters") {
    auto p = TensorD::from({2}, {1, -2}, true);
    std::vector<TensorD> params{p};
    OptimizerState<double> state;
    state.reset(params);
    p.mutable_grad();
    adam_step<double>(params, state, 0.1);
    CHECK(p.at(0) == 1);
    CHECK(p.at(1) == -2);
  }
  SUBCASE("first step moves by lr in the gradient sign") {
    auto p = TensorD::from({2}, {1, -2}, true);
    std::vector<TensorD> params{p};
    OptimizerState<double> state;
    state.reset(params);
    p.mutable_grad()[0] = 0.3;
    p.mutable_grad()[1] = -5;
    adam_step<double>(params, state, 0.01);
    CHECK(p.at(0) == doctest::Approx(1 - 0.01).epsilon(1e-6));
    CHECK(p.at(1) == doctest::Approx(-2 + 0.01).epsilon(1e-6));
    CHECK(p.grad()[0] == 0);
    p.mutable_grad()[0] = 1;
    adam_step<double>(params, state, 0.01);
    CHECK(state.step == 2);
  }
  SUBCASE("missing gradient") {
    auto p = TensorD::from({1}, {1}, true);
    std::vector<TensorD> params{p};
    OptimizerState<double> state;
    state.reset(params);
    CHECK_THROWS_AS(adam_step<double>(params, state, 0.1), Error);
  }
}

TEST_CASE("inverse_sqrt_lr") {
  CHECK(inverse_sqrt_lr(100, 2e-3, 100) == doctest::Approx(2e-3));
  CHECK(inverse_sqrt_lr(50, 2e-3, 100) == doctest::Approx(1e-3));
  CHECK(inverse_sqrt_lr(400, 2e-3, 100) == doctest::Approx(1e-3));
  CHECK_THROWS_AS(inverse_sqrt_lr(0, 2e-3, 100), ValueError);
}
