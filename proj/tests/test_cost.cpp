#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "adaprune/backbones.hpp"
#include "adaprune/cost.hpp"
#include "adaprune/ops.hpp"
#include "testutil.hpp"

using namespace adaprune;
using testutil::rand_tensor;

namespace {

// Independent oracle: walk the convolution loop nest and count one unit per
// multiply-accumulate, plus one per bias add, exactly as an instrumented
// kernel would.
long long brute_force_flops(const LayerCostSpec& spec, std::span<const uint8_t> in,
                            std::span<const uint8_t> out) {
  long long count = 0;
  for (int co = 0; co < spec.c_out; ++co) {
    if (!out[static_cast<size_t>(co)]) continue;
    for (int oh = 0; oh < spec.h_out; ++oh)
      for (int ow = 0; ow < spec.w_out; ++ow) {
        for (int ci = 0; ci < spec.c_in; ++ci) {
          if (!in[static_cast<size_t>(ci)]) continue;
          for (int kh = 0; kh < spec.kernel; ++kh)
            for (int kw = 0; kw < spec.kernel; ++kw) ++count;  // one MAC
        }
        ++count;  // bias add
      }
  }
  return count;
}

std::vector<uint8_t> random_bits(int n, std::mt19937_64& rng, double p = 0.5) {
  std::vector<uint8_t> v(static_cast<size_t>(n));
  std::bernoulli_distribution coin(p);
  for (auto& b : v) b = coin(rng) ? 1 : 0;
  return v;
}

}  // namespace

TEST_CASE("layer flops formula") {
  LayerCostSpec spec{0, 32, 32, 3, 16, 3};
  CHECK(layer_flops(spec) == 458752);

  LayerCostSpec unit{1, 1, 1, 1, 1, 1};
  CHECK(layer_flops(unit) == 2);

  LayerCostSpec bad{2, 0, 1, 1, 1, 1};
  CHECK_THROWS_AS(layer_flops(bad), ConfigError);
}

TEST_CASE("vgg-like backbone lands on the expected dense total") {
  NetworkConfig cfg = vggnet_config(10);
  CostModel cm = extract_cost_model(cfg, Variant::Unpruned);
  const double total_m = static_cast<double>(cm.dense_flops) / 1e6;
  CHECK(total_m == doctest::Approx(398.5).epsilon(0.02));
}

TEST_CASE("dynamic flops") {
  SUBCASE("all-ones masks reduce to the dense count") {
    std::mt19937_64 rng(20);
    for (int t = 0; t < 20; ++t) {
      LayerCostSpec spec{t,
                        1 + static_cast<int>(rng() % 16),
                        1 + static_cast<int>(rng() % 16),
                        1 + static_cast<int>(rng() % 32),
                        1 + static_cast<int>(rng() % 32),
                        1 + 2 * static_cast<int>(rng() % 3)};
      std::vector<uint8_t> in(static_cast<size_t>(spec.c_in), 1);
      std::vector<uint8_t> out(static_cast<size_t>(spec.c_out), 1);
      CHECK(dynamic_layer_flops(spec, in, out) == layer_flops(spec));
    }
  }
  SUBCASE("no active outputs costs nothing") {
    LayerCostSpec spec{0, 4, 4, 8, 8, 3};
    std::vector<uint8_t> in(8, 1), out(8, 0);
    CHECK(dynamic_layer_flops(spec, in, out) == 0);
  }
  SUBCASE("hand case: half active on both sides") {
    LayerCostSpec spec{0, 2, 2, 4, 8, 3};
    std::vector<uint8_t> in{1, 0, 1, 0};
    std::vector<uint8_t> out{1, 1, 1, 1, 0, 0, 0, 0};
    CHECK(dynamic_layer_flops(spec, in, out) == 304);
  }
  SUBCASE("mask length mismatch is a dimension error") {
    LayerCostSpec spec{0, 2, 2, 4, 8, 3};
    std::vector<uint8_t> in(3, 1), out(8, 1);
    CHECK_THROWS_AS(dynamic_layer_flops(spec, in, out), ShapeError);
  }
  SUBCASE("matches the brute-force counter on random cases") {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 60; ++t) {
      LayerCostSpec spec{t,
                        1 + static_cast<int>(rng() % 6),
                        1 + static_cast<int>(rng() % 6),
                        1 + static_cast<int>(rng() % 12),
                        1 + static_cast<int>(rng() % 12),
                        1 + 2 * static_cast<int>(rng() % 2)};
      auto in = random_bits(spec.c_in, rng);
      auto out = random_bits(spec.c_out, rng);
      CHECK(dynamic_layer_flops(spec, in, out) == brute_force_flops(spec, in, out));
    }
  }
  SUBCASE("activating one more output channel never lowers the count") {
    std::mt19937_64 rng(22);
    for (int t = 0; t < 25; ++t) {
      LayerCostSpec spec{t, 3, 3, 6, 6, 3};
      auto in = random_bits(spec.c_in, rng);
      auto out = random_bits(spec.c_out, rng);
      const long long base = dynamic_layer_flops(spec, in, out);
      for (int c = 0; c < spec.c_out; ++c) {
        if (out[static_cast<size_t>(c)]) continue;
        auto grown = out;
        grown[static_cast<size_t>(c)] = 1;
        CHECK(dynamic_layer_flops(spec, in, grown) >= base);
      }
    }
  }
}

TEST_CASE("cost estimator") {
  SUBCASE("dense before the first batch, exact mean afterwards") {
    CostEstimator est(1000.0, 3);
    CHECK(est.current() == 1000.0);
    CHECK(est.push(1000.0) == 1000.0);
  }
  SUBCASE("window of two") {
    CostEstimator est(1000.0, 5);
    est.push(100.0);
    CHECK(est.push(200.0) == doctest::Approx(150.0).epsilon(1e-12));
  }
  SUBCASE("window is bounded") {
    CostEstimator est(1000.0, 2);
    est.push(10.0);
    est.push(20.0);
    est.push(30.0);
    CHECK(est.current() == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(est.window().size() == 2);
  }
}

TEST_CASE("cost weight (Eq-style lambda schedule)") {
  BudgetConfig cfg;
  cfg.dense_flops = 100.0;
  cfg.budget = 50.0;
  cfg.lambda0 = 0.01;
  cfg.total_filters = 10;
  cfg.gated_layers = 2;

  SUBCASE("exact values") {
    CHECK(cost_weight(cfg, 50.0) == 0.0);
    CHECK(cost_weight(cfg, 100.0) == 0.01 * (100.0 - 50.0) / 100.0);
    CHECK(cost_weight(cfg, 30.0) == 0.01 * (30.0 - 50.0) / 100.0);
    CHECK(cost_weight(cfg, 100.0) == doctest::Approx(0.005).epsilon(1e-15));
    CHECK(cost_weight(cfg, 30.0) == doctest::Approx(-0.002).epsilon(1e-15));
  }
  SUBCASE("sign follows the budget gap and magnitude stays bounded") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> dist(0.0, 100.0);
    for (int i = 0; i < 200; ++i) {
      const double pt = dist(rng);
      const double w = cost_weight(cfg, pt);
      if (pt > cfg.budget) CHECK(w > 0.0);
      if (pt < cfg.budget) CHECK(w < 0.0);
      CHECK(w >= -cfg.lambda0);
      CHECK(w <= cfg.lambda0);
    }
  }
  SUBCASE("grid reproduces the formula exactly") {
    for (double p0 : {1.0, 64.0, 1e6}) {
      for (double pf : {0.1, 0.5, 1.0}) {
        BudgetConfig c;
        c.dense_flops = p0;
        c.budget = pf * p0;
        c.lambda0 = 0.01;
        c.total_filters = 1;
        c.gated_layers = 1;
        for (double ptf : {0.0, 0.25, 0.5, 0.75, 1.0}) {
          const double pt = ptf * p0;
          CHECK(cost_weight(c, pt) == 0.01 * (pt - c.budget) / p0);
        }
      }
    }
  }
  SUBCASE("estimates outside [0,p0] violate the invariant") {
    CHECK_THROWS_AS(cost_weight(cfg, -1.0), NumericError);
    CHECK_THROWS_AS(cost_weight(cfg, 101.0), NumericError);
  }
  SUBCASE("invalid budgets are config errors") {
    BudgetConfig bad = cfg;
    bad.budget = 120.0;
    CHECK_THROWS_AS(cost_weight(bad, 50.0), ConfigError);
  }
}

TEST_CASE("multi-task loss") {
  SUBCASE("zero weight leaves the classification loss untouched") {
    Tape tape;
    Tensor lcls = Tensor::scalar(1.25);
    Tensor s(Shape{1, 4}, std::vector<double>{1.0, -2.0, 0.5, 0.0});
    const Tensor sal[] = {s};
    Tensor loss = multi_task_loss(tape, lcls, sal, 0.0, 4);
    CHECK(loss.value() == 1.25);
  }
  SUBCASE("worked example") {
    Tape tape;
    Tensor lcls = Tensor::scalar(1.0);
    Tensor s(Shape{1, 5}, std::vector<double>{1.0, 1.0, 1.0, 1.0, 1.0});
    const Tensor sal[] = {s};
    Tensor loss = multi_task_loss(tape, lcls, sal, 0.01, 10);
    CHECK(loss.value() == doctest::Approx(1.005).epsilon(1e-15));
  }
  SUBCASE("negative weight with positive saliencies lowers the loss") {
    Tape tape;
    Tensor lcls = Tensor::scalar(1.0);
    Tensor s(Shape{1, 3}, std::vector<double>{0.5, 1.5, 2.0});
    const Tensor sal[] = {s};
    Tensor loss = multi_task_loss(tape, lcls, sal, -0.01, 3);
    CHECK(loss.value() < 1.0);
  }
  SUBCASE("non-positive filter count is a config error") {
    Tape tape;
    Tensor lcls = Tensor::scalar(1.0);
    Tensor s(Shape{1, 3});
    const Tensor sal[] = {s};
    CHECK_THROWS_AS(multi_task_loss(tape, lcls, sal, 0.01, 0), ConfigError);
  }
  SUBCASE("cost-term gradient is lambda*sign/N_c away from zero") {
    std::mt19937_64 rng(24);
    Tensor s = testutil::rand_tensor_away(Shape{2, 6}, rng, -2.0, 2.0, 0.0, 0.1);
    s.set_requires_grad(true);
    const double lambda = 0.37;
    const long long nc = 12;
    Tape tape;
    Tensor lcls = Tensor::scalar(0.0);
    const Tensor sal[] = {s};
    Tensor loss = multi_task_loss(tape, lcls, sal, lambda, nc);
    tape.backward(loss);
    auto sv = s.values();
    auto g = s.grad();
    for (size_t i = 0; i < sv.size(); ++i) {
      const double expected = lambda * (sv[i] > 0 ? 1.0 : -1.0) / static_cast<double>(nc);
      CHECK(g[i] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}
