#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "dfs/quant.hpp"
#include "oracles.hpp"

using namespace dfs;

TEST_CASE("rel_cost follows the (b/32)^2 rule") {
  CHECK(BitOption::skip().rel_cost() == 0.0);
  CHECK(BitOption::keep().rel_cost() == 1.0);
  CHECK(BitOption::quant(8).rel_cost() == 1.0 / 16.0);  // exact
  CHECK(BitOption::quant(16).rel_cost() == 0.25);
  CHECK(BitOption::quant(4).rel_cost() == doctest::Approx(1.0 / 64.0));
}

TEST_CASE("option sets are sorted by cost and contain keep exactly once") {
  auto opts = make_option_set(
      {BitOption::keep(), BitOption::quant(16), BitOption::skip(), BitOption::quant(8)});
  REQUIRE(opts.size() == 4);
  CHECK(opts[0].kind == BitOption::Kind::Skip);
  CHECK(opts[1] == BitOption::quant(8));
  CHECK(opts[2] == BitOption::quant(16));
  CHECK(opts[3].kind == BitOption::Kind::Keep);
  for (size_t i = 1; i < opts.size(); ++i) CHECK(opts[i - 1].rel_cost() < opts[i].rel_cost());

  CHECK_THROWS_AS(make_option_set({BitOption::skip(), BitOption::quant(8)}), ConfigError);
  CHECK_THROWS_AS(make_option_set({BitOption::keep(), BitOption::keep()}), ConfigError);
  CHECK_THROWS_AS(make_option_set({}), ConfigError);
  CHECK_THROWS_AS(BitOption::quant(1), ConfigError);
  CHECK_THROWS_AS(BitOption::quant(32), ConfigError);
}

TEST_CASE("fake_quantize keeps an all-zero tensor unchanged") {
  Graph g(false);
  auto x = Tensor::zeros({2, 3});
  auto y = fake_quantize(g, x, 8);
  for (float v : y->data) CHECK(v == 0.0f);
}

TEST_CASE("fake_quantize bits=2 worked example") {
  Graph g(false);
  auto x = Tensor::from_data({4}, {-1.0f, -0.4f, 0.3f, 1.0f});
  auto y = fake_quantize(g, x, 2);
  // s = 1, q = 2^1 - 1 = 1, delta = 1
  CHECK(y->data[0] == -1.0f);
  CHECK(y->data[1] == 0.0f);
  CHECK(y->data[2] == 0.0f);
  CHECK(y->data[3] == 1.0f);
}

TEST_CASE("fake_quantize bits=31 error is bounded by the grid density") {
  std::mt19937 rng(3);
  Graph g(false);
  auto x = Tensor::uniform({512}, rng, -1.0f, 1.0f);
  x->data[0] = 1.0f;  // pin the range
  auto y = fake_quantize(g, x, 31);
  const float bound = 1.0f / static_cast<float>((1u << 30) - 1);
  for (size_t i = 0; i < x->data.size(); ++i) {
    CHECK(std::abs(y->data[i] - x->data[i]) <= bound);
  }
}

TEST_CASE("fake_quantize rejects out-of-range bit widths") {
  Graph g(false);
  auto x = Tensor::full({2}, 1.0f);
  CHECK_THROWS_AS(fake_quantize(g, x, 1), ConfigError);
  CHECK_THROWS_AS(fake_quantize(g, x, 32), ConfigError);
}

TEST_CASE("fake_quantize is exactly idempotent") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> sc(0.01f, 50.0f);
  for (int bits : {2, 3, 4, 5, 8, 16, 24, 27, 31}) {
    for (int trial = 0; trial < 20; ++trial) {
      Graph g(false);
      auto x = Tensor::randn({257}, rng, sc(rng));
      auto y1 = fake_quantize(g, x, bits);
      auto y2 = fake_quantize(g, y1, bits);
      for (size_t i = 0; i < y1->data.size(); ++i) {
        REQUIRE(y1->data[i] == y2->data[i]);
      }
    }
  }
}

TEST_CASE("fake_quantize outputs lie on the quantization grid") {
  std::mt19937 rng(7);
  for (int bits : {2, 3, 4, 8, 16}) {
    Graph g(false);
    auto x = Tensor::randn({300}, rng, 2.0f);
    float s = 0.0f;
    for (float v : x->data) s = std::max(s, std::abs(v));
    const double q = static_cast<double>((1LL << (bits - 1)) - 1);
    const double delta = static_cast<double>(s) / q;
    auto y = fake_quantize(g, x, bits);
    for (size_t i = 0; i < y->data.size(); ++i) {
      const float v = y->data[i];
      const double k = std::nearbyint(v / delta);
      CHECK(std::abs(k) <= q);
      CHECK(static_cast<float>(k * delta) == v);
      CHECK(std::abs(v - x->data[i]) <= static_cast<float>(delta / 2) * 1.0001f);
    }
  }
}

TEST_CASE("fake_quantize gradient is the straight-through estimator") {
  std::mt19937 rng(9);
  auto x = Tensor::randn({64}, rng);
  x->set_requires_grad(true);
  Graph g;
  auto y = fake_quantize(g, x, 4);
  auto l = sum(g, y);
  g.backward(l);
  float s = 0.0f;
  for (float v : x->data) s = std::max(s, std::abs(v));
  for (size_t i = 0; i < x->data.size(); ++i) {
    if (std::abs(x->data[i]) < s) CHECK(x->grad[i] == 1.0f);
  }
}

TEST_CASE("quantized_conv2d at 31 bits tracks the full-precision result") {
  std::mt19937 rng(11);
  Graph g(false);
  auto x = Tensor::randn({2, 3, 8, 8}, rng);
  auto w = Tensor::randn({4, 3, 3, 3}, rng, 0.5f);
  auto full = conv2d(g, x, w, 1, 1);
  auto quant = quantized_conv2d(g, x, w, 31, 1, 1);
  for (size_t i = 0; i < full->data.size(); ++i) {
    CHECK(std::abs(full->data[i] - quant->data[i]) < 1e-3f);
  }
}

TEST_CASE("grid-aligned weights and inputs pass through the quantized conv exactly") {
  Graph g(false);
  // bits=2 grid is {-s, 0, +s}; weights and inputs sit exactly on it
  auto w = Tensor::from_data({1, 1, 2, 2}, {0.5f, -0.5f, 0.0f, 0.5f});
  auto x = Tensor::from_data({1, 1, 2, 2}, {1.0f, -1.0f, 0.0f, 1.0f});
  auto full = conv2d(g, x, w, 1, 0);
  auto quant = quantized_conv2d(g, x, w, 2, 1, 0);
  for (size_t i = 0; i < full->data.size(); ++i) CHECK(full->data[i] == quant->data[i]);
}

TEST_CASE("coarser bit widths never reduce the deviation from full precision") {
  std::mt19937 rng(13);
  int monotone = 0, trials = 40;
  for (int t = 0; t < trials; ++t) {
    Graph g(false);
    auto x = Tensor::randn({1, 2, 6, 6}, rng);
    auto w = Tensor::randn({2, 2, 3, 3}, rng, 0.5f);
    auto full = conv2d(g, x, w, 1, 1);
    double dev[3];
    int idx = 0;
    for (int bits : {16, 8, 4}) {
      auto q = quantized_conv2d(g, x, w, bits, 1, 1);
      double worst = 0.0;
      for (size_t i = 0; i < full->data.size(); ++i) {
        worst = std::max(worst, static_cast<double>(std::abs(full->data[i] - q->data[i])));
      }
      dev[idx++] = worst;
    }
    if (dev[0] <= dev[1] && dev[1] <= dev[2]) ++monotone;
  }
  CHECK(monotone >= trials * 9 / 10);
}
