#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "adaprune/ops.hpp"
#include "adaprune/optim.hpp"
#include "adaprune/rng.hpp"
#include "testutil.hpp"

using namespace adaprune;
using testutil::check_gradients;
using testutil::rand_tensor;
using testutil::rand_tensor_away;

TEST_CASE("tensor basics and invariants") {
  Tensor t(Shape{2, 3}, 0.5);
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 0.5);
  t.at({0, 1}) = -1.0;
  CHECK(t.at({0, 1}) == -1.0);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS((Tensor(Shape{2, 2}, std::vector<double>{1.0, 2.0})), ShapeError);
  CHECK_FALSE(Tensor().defined());

  Tensor s = Tensor::scalar(3.0);
  CHECK(s.value() == 3.0);

  // grad buffer appears with requires_grad and matches the shape
  CHECK_THROWS_AS(t.grad(), UsageError);
  t.set_requires_grad(true);
  CHECK(t.grad().size() == 6);
}

TEST_CASE("non-finite op outputs are rejected") {
  Tape tape;
  Tensor a(Shape{2}, std::vector<double>{1e308, 1e308});
  Tensor b(Shape{2}, std::vector<double>{1e308, 1e308});
  CHECK_THROWS_AS(add(tape, a, b), NumericError);
}

TEST_CASE("conv2d identity kernel passes input through") {
  Tape tape;
  std::mt19937_64 rng(1);
  Tensor x = rand_tensor(Shape{1, 1, 5, 4}, rng);
  Tensor w(Shape{1, 1, 1, 1}, 1.0);
  Tensor bias(Shape{1}, 0.0);
  Tensor y = conv2d(tape, x, w, bias, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 5, 4});
  for (int i = 0; i < 20; ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d all-zero weights give the bias everywhere") {
  Tape tape;
  std::mt19937_64 rng(2);
  Tensor x = rand_tensor(Shape{2, 3, 6, 6}, rng);
  Tensor w(Shape{4, 3, 3, 3}, 0.0);
  Tensor bias(Shape{4}, std::vector<double>{0.5, -1.0, 2.0, 0.0});
  Tensor y = conv2d(tape, x, w, bias, 1, 1);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 36; ++i)
        CHECK(y.values()[(static_cast<long>(n) * 4 + c) * 36 + i] == bias.values()[c]);
}

TEST_CASE("conv2d output geometry and shape errors") {
  Tape tape;
  Tensor x(Shape{1, 2, 7, 5});
  Tensor w(Shape{3, 2, 3, 3});
  Tensor y = conv2d(tape, x, w, Tensor(), 2, 1);
  CHECK(y.shape() == Shape{1, 3, 4, 3});  // floor((7+2-3)/2)+1, floor((5+2-3)/2)+1

  Tensor wrong(Shape{3, 4, 3, 3});
  CHECK_THROWS_AS(conv2d(tape, x, wrong, Tensor(), 1, 1), ShapeError);
  CHECK_THROWS_AS(conv2d(tape, x, w, Tensor(), 0, 1), ConfigError);
  Tensor big(Shape{1, 2, 9, 9});
  CHECK_THROWS_AS(conv2d(tape, x, big, Tensor(), 1, 0), ShapeError);
}

TEST_CASE("conv2d gradients match finite differences") {
  for (uint64_t seed = 0; seed < 4; ++seed) {
    std::mt19937_64 rng(100 + seed);
    Tensor x = rand_tensor(Shape{2, 1, 4, 4}, rng);
    Tensor w = rand_tensor(Shape{2, 1, 3, 3}, rng);
    Tensor bias = rand_tensor(Shape{2}, rng);
    const int stride = seed % 2 ? 2 : 1;
    Tensor* inputs[] = {&x, &w, &bias};
    check_gradients(inputs, [&](Tape& t) {
      Tensor y = conv2d(t, x, w, bias, stride, 1);
      return sum_all(t, elementwise_mul(t, y, y));
    });
  }
}

TEST_CASE("batch_norm eval with unit stats is (almost) the identity") {
  Tape tape;
  std::mt19937_64 rng(3);
  Tensor x = rand_tensor(Shape{1, 2, 3, 3}, rng);
  Tensor gamma(Shape{2}, 1.0), beta(Shape{2}, 0.0);
  BnBuffers buf(2);
  Tensor y = batch_norm(tape, x, gamma, beta, buf, false, 1e-5, 0.1);
  for (size_t i = 0; i < 18; ++i)
    CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-4));
}

TEST_CASE("batch_norm train mode normalizes per channel and updates running stats") {
  Tape tape;
  std::mt19937_64 rng(4);
  Tensor x = rand_tensor(Shape{4, 3, 5, 5}, rng, -2.0, 5.0);
  Tensor gamma(Shape{3}, 1.0), beta(Shape{3}, 0.0);
  BnBuffers buf(3);
  Tensor y = batch_norm(tape, x, gamma, beta, buf, true, 1e-5, 0.1);
  const long hw = 25, m = 4 * hw;
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (int n = 0; n < 4; ++n)
      for (long e = 0; e < hw; ++e) mean += y.values()[(n * 3 + c) * hw + e];
    mean /= m;
    for (int n = 0; n < 4; ++n)
      for (long e = 0; e < hw; ++e) {
        const double d = y.values()[(n * 3 + c) * hw + e] - mean;
        var += d * d;
      }
    var /= m;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(std::abs(mean) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(buf.running_mean.values()[c] != 0.0);  // updated from init
  }
  CHECK_THROWS_AS(batch_norm(tape, x, gamma, beta, buf, true, 0.0, 0.1), ConfigError);
  Tensor one(Shape{1, 3, 5, 5});
  CHECK_THROWS_AS(batch_norm(tape, one, gamma, beta, buf, true, 1e-5, 0.1), UsageError);
}

TEST_CASE("batch_norm gradients match finite differences") {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(200 + seed);
    Tensor x = rand_tensor(Shape{3, 2, 2, 2}, rng);
    Tensor gamma = rand_tensor(Shape{2}, rng, 0.5, 1.5);
    Tensor beta = rand_tensor(Shape{2}, rng);
    const bool batch_stats = seed != 1;
    Tensor* inputs[] = {&x, &gamma, &beta};
    check_gradients(inputs, [&](Tape& t) {
      BnBuffers buf(2);  // fresh buffers so train-mode updates cannot leak between probes
      buf.running_var = Tensor(Shape{2}, std::vector<double>{1.3, 0.7});
      buf.running_mean = Tensor(Shape{2}, std::vector<double>{0.2, -0.1});
      Tensor y = batch_norm(t, x, gamma, beta, buf, batch_stats, 1e-5, 0.1);
      return sum_all(t, elementwise_mul(t, y, y));
    });
  }
}

TEST_CASE("pointwise op examples") {
  Tape tape;
  Tensor x(Shape{2}, std::vector<double>{-1.0, 2.0});
  Tensor r = relu(tape, x);
  CHECK(r.values()[0] == 0.0);
  CHECK(r.values()[1] == 2.0);

  Tensor v(Shape{3}, std::vector<double>{1.0, -2.0, 3.0});
  CHECK(l1_norm(tape, v).value() == 6.0);

  Tensor z(Shape{1, 2}, std::vector<double>{0.0, 0.0});
  const int label0[] = {0};
  CHECK(softmax_cross_entropy(tape, z, label0).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor g(Shape{1, 1, 2, 2}, std::vector<double>{1.0, 2.0, 3.0, 4.0});
  CHECK(global_avg_pool(tape, g).value() == 2.5);
}

TEST_CASE("saturating sigmoid examples and saturation") {
  Tape tape;
  Tensor x(Shape{3}, std::vector<double>{0.0, 10.0, -10.0});
  Tensor y = saturating_sigmoid(tape, x, 1.2, 0.1);
  CHECK(y.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.values()[1] == 1.0);
  CHECK(y.values()[2] == 0.0);
}

TEST_CASE("elementwise and structural op gradients match finite differences") {
  std::mt19937_64 rng(300);
  SUBCASE("mul/add/scale/sigmoid chain") {
    Tensor a = rand_tensor(Shape{2, 3}, rng);
    Tensor b = rand_tensor(Shape{2, 3}, rng);
    Tensor* inputs[] = {&a, &b};
    check_gradients(inputs, [&](Tape& t) {
      Tensor y = elementwise_mul(t, sigmoid(t, a), add(t, a, b));
      return sum_all(t, scale(t, y, 1.7));
    });
  }
  SUBCASE("relu away from the kink") {
    Tensor a = rand_tensor_away(Shape{7}, rng, -1.0, 1.0, 0.0, 0.05);
    Tensor* inputs[] = {&a};
    check_gradients(inputs, [&](Tape& t) { return sum_all(t, relu(t, a)); });
  }
  SUBCASE("l1 away from zero") {
    Tensor a = rand_tensor_away(Shape{6}, rng, -2.0, 2.0, 0.0, 0.1);
    Tensor* inputs[] = {&a};
    check_gradients(inputs, [&](Tape& t) { return l1_norm(t, a); });
  }
  SUBCASE("linear with bias") {
    Tensor x = rand_tensor(Shape{3, 4}, rng);
    Tensor w = rand_tensor(Shape{2, 4}, rng);
    Tensor b = rand_tensor(Shape{2}, rng);
    Tensor* inputs[] = {&x, &w, &b};
    check_gradients(inputs, [&](Tape& t) {
      Tensor y = linear(t, x, w, b);
      return sum_all(t, elementwise_mul(t, y, y));
    });
  }
  SUBCASE("scale_channels") {
    Tensor x = rand_tensor(Shape{2, 3, 2, 2}, rng);
    Tensor gate = rand_tensor(Shape{2, 3}, rng);
    Tensor* inputs[] = {&x, &gate};
    check_gradients(inputs, [&](Tape& t) {
      return sum_all(t, elementwise_mul(t, scale_channels(t, x, gate),
                                        scale_channels(t, x, gate)));
    });
  }
  SUBCASE("broadcast_rows and unsqueeze") {
    Tensor v = rand_tensor(Shape{5}, rng);
    Tensor* inputs[] = {&v};
    check_gradients(inputs, [&](Tape& t) {
      Tensor row = unsqueeze0(t, v);
      Tensor b = broadcast_rows(t, row, 4);
      return sum_all(t, elementwise_mul(t, b, b));
    });
  }
  SUBCASE("global_avg_pool and flatten") {
    Tensor x = rand_tensor(Shape{2, 2, 3, 3}, rng);
    Tensor* inputs[] = {&x};
    check_gradients(inputs, [&](Tape& t) {
      Tensor p = global_avg_pool(t, x);
      Tensor f = flatten_spatial(t, x);
      return add(t, sum_all(t, elementwise_mul(t, p, p)), l1_norm(t, f));
    });
  }
  SUBCASE("softmax cross entropy") {
    Tensor z = rand_tensor(Shape{3, 5}, rng, -2.0, 2.0);
    const std::vector<int> labels{1, 4, 0};
    Tensor* inputs[] = {&z};
    check_gradients(inputs, [&](Tape& t) { return softmax_cross_entropy(t, z, labels); });
  }
  SUBCASE("saturating sigmoid away from clamp boundaries") {
    // gain*sigmoid(x)-shift hits 0 at x = logit(shift/gain) and 1 at
    // logit((1+shift)/gain); keep clear of both.
    const double lo = std::log((0.1 / 1.2) / (1 - 0.1 / 1.2));
    const double hi = std::log((1.1 / 1.2) / (1 - 1.1 / 1.2));
    std::mt19937_64 r2(301);
    Tensor a(Shape{9});
    std::uniform_real_distribution<double> dist(lo + 0.05, hi - 0.05);
    for (double& v : a.values()) v = dist(r2);
    Tensor* inputs[] = {&a};
    check_gradients(inputs, [&](Tape& t) {
      return sum_all(t, saturating_sigmoid(t, a, 1.2, 0.1));
    });
  }
}

TEST_CASE("backward contracts") {
  SUBCASE("sum gradient is ones") {
    Tape tape;
    Tensor x(Shape{3}, std::vector<double>{1.0, 2.0, 3.0});
    x.set_requires_grad(true);
    Tensor loss = sum_all(tape, x);
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("l1 gradient is the sign") {
    Tape tape;
    Tensor x(Shape{2}, std::vector<double>{2.0, -3.0});
    x.set_requires_grad(true);
    Tensor loss = l1_norm(tape, x);
    tape.backward(loss);
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == -1.0);
  }
  SUBCASE("gradient accumulation: y = x + x doubles the upstream") {
    Tape tape;
    Tensor x(Shape{2}, std::vector<double>{1.0, -1.0});
    x.set_requires_grad(true);
    Tensor loss = sum_all(tape, add(tape, x, x));
    tape.backward(loss);
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 2.0);
  }
  SUBCASE("backward on non-scalar or empty tape is a usage error") {
    Tape tape;
    Tensor x(Shape{2}, std::vector<double>{1.0, 2.0});
    x.set_requires_grad(true);
    Tensor y = relu(tape, x);
    CHECK_THROWS_AS(tape.backward(y), UsageError);
    Tape empty;
    Tensor s = Tensor::scalar(1.0);
    s.set_requires_grad(true);
    CHECK_THROWS_AS(empty.backward(s), UsageError);
  }
  SUBCASE("tape is consumed by backward") {
    Tape tape;
    Tensor x(Shape{2}, std::vector<double>{1.0, 2.0});
    x.set_requires_grad(true);
    Tensor loss = sum_all(tape, x);
    CHECK(tape.size() > 0);
    tape.backward(loss);
    CHECK(tape.size() == 0);
  }
}

TEST_CASE("binarize straight-through routes gradients to the soft value") {
  Tape tape;
  Tensor soft(Shape{3}, std::vector<double>{0.7, 0.2, 0.5});
  soft.set_requires_grad(true);
  Tensor hard = binarize_straight_through(tape, soft, true);
  CHECK(hard.values()[0] == 1.0);
  CHECK(hard.values()[1] == 0.0);
  CHECK(hard.values()[2] == 0.0);  // strict > 0.5
  Tensor loss = sum_all(tape, hard);
  tape.backward(loss);
  for (double g : soft.grad()) CHECK(g == 1.0);
}

TEST_CASE("sgd momentum examples") {
  SUBCASE("plain step") {
    Parameter p("p", Tensor(Shape{1}, std::vector<double>{1.0}));
    p.tensor.grad()[0] = 1.0;
    SgdMomentum opt(0.1, 0.0);
    Parameter* ps[] = {&p};
    opt.step(ps);
    CHECK(p.tensor.values()[0] == doctest::Approx(0.9).epsilon(1e-15));
  }
  SUBCASE("two-step classical momentum recurrence") {
    Parameter p("p", Tensor(Shape{1}, std::vector<double>{0.0}));
    SgdMomentum opt(0.1, 0.9);
    Parameter* ps[] = {&p};
    p.tensor.grad()[0] = 1.0;
    opt.step(ps);
    CHECK(p.tensor.values()[0] == doctest::Approx(-0.1).epsilon(1e-12));
    p.tensor.zero_grad();
    p.tensor.grad()[0] = 1.0;
    opt.step(ps);
    CHECK(p.tensor.values()[0] == doctest::Approx(-0.29).epsilon(1e-12));
  }
  SUBCASE("frozen parameters never move") {
    Parameter p("p", Tensor(Shape{1}, std::vector<double>{4.0}));
    p.frozen = true;
    p.tensor.grad()[0] = 5.0;
    SgdMomentum opt(0.1, 0.9);
    Parameter* ps[] = {&p};
    opt.step(ps);
    CHECK(p.tensor.values()[0] == 4.0);
  }
  SUBCASE("missing gradient on a live parameter is a usage error") {
    Parameter p;
    p.name = "q";
    p.tensor = Tensor(Shape{1}, std::vector<double>{1.0});  // requires_grad never set
    SgdMomentum opt(0.1, 0.9);
    Parameter* ps[] = {&p};
    CHECK_THROWS_AS(opt.step(ps), UsageError);
  }
}

TEST_CASE("forward passes are deterministic for identical seeds") {
  auto run = [](uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor x = rand_tensor(Shape{2, 3, 8, 8}, rng);
    Tensor w = rand_tensor(Shape{4, 3, 3, 3}, rng);
    Tape tape;
    tape.set_recording(false);
    Tensor y = conv2d(tape, x, w, Tensor(), 1, 1);
    return std::vector<double>(y.values().begin(), y.values().end());
  };
  CHECK(run(42) == run(42));
}
