#include <doctest.h>

#include <cmath>
#include <vector>

#include "pptlab/autodiff.hpp"
#include "pptlab/errors.hpp"
#include "pptlab/gradcheck.hpp"
#include "pptlab/optim.hpp"
#include "pptlab/rng.hpp"
#include "pptlab/selfcheck.hpp"

using namespace pptlab;
using namespace pptlab::ad;

namespace {

Tensor randn(Shape shape, std::uint64_t seed, double scale = 1.0, double shift = 0.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& x : t.data) x = shift + scale * sample_normal(rng, 0.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tape tape;
  auto y = softmax(tape.constant(Tensor({1, 3}, 0.0)));
  for (double v : y.value().data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("matmul by the identity returns the input") {
  Tape tape;
  Tensor eye({3, 3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const Tensor x = randn({3, 4}, 1);
  auto y = matmul(tape.constant(eye), tape.constant(x));
  CHECK(y.value() == x);
}

TEST_CASE("derivative of sum(x*x) at 3 is 6") {
  Tensor x = Tensor::scalar(3.0);
  Tape tape;
  auto v = tape.parameter(x);
  tape.backward(sum(mul(v, v)));
  REQUIRE(x.has_grad());
  CHECK(x.grad[0] == 6.0);
}

TEST_CASE("shape mismatch reports both shapes") {
  Tape tape;
  auto a = tape.constant(Tensor({2, 3}));
  auto b = tape.constant(Tensor({3, 2}));
  try {
    add(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[3, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  auto a = tape.constant(Tensor({2, 2}, 1.0));
  CHECK_THROWS_AS(tape.backward(a), DimensionError);
}

TEST_CASE("grad_check on simple functions") {
  Tensor x = Tensor::scalar(3.0);
  std::vector<Tensor*> ps{&x};
  Objective quad = [](Tape& t, std::vector<Tensor*>& p) {
    auto v = t.parameter(*p[0]);
    return sum(mul(v, v));
  };
  CHECK(grad_check(quad, ps, 1e-5).max_relative_error < 1e-8);

  Objective constant = [](Tape& t, std::vector<Tensor*>& p) {
    t.parameter(*p[0]);
    return t.constant(Tensor::scalar(2.5));
  };
  CHECK(grad_check(constant, ps, 1e-5).max_relative_error == 0.0);

  Objective blowup = [](Tape& t, std::vector<Tensor*>& p) { return sum(log(scale(t.parameter(*p[0]), -1.0))); };
  CHECK_THROWS_AS(grad_check(blowup, ps, 1e-5), NumericError);
}

TEST_CASE("every primitive passes a gradient check below 1e-6") {
  const auto checks = primitive_gradient_checks();
  CHECK(checks.size() >= 22);
  for (const auto& c : checks) {
    CAPTURE(c.name);
    CHECK(c.threshold == 1e-6);
    CHECK(c.value < 1e-6);
  }
}

TEST_CASE("add_bias at a column offset") {
  Tape tape;
  auto x = tape.constant(Tensor({2, 4}, 1.0));
  auto y = add_bias(x, tape.constant(Tensor({2}, std::vector<double>{10, 20})), 1);
  CHECK(y.value().data == std::vector<double>{1, 11, 21, 1, 1, 11, 21, 1});
  CHECK_THROWS_AS(add_bias(x, tape.constant(Tensor({2}, 0.0)), 3), DimensionError);
}

TEST_CASE("gradient of a sum of losses is the sum of gradients") {
  Tensor x = randn({3, 4}, 40);
  const std::vector<std::size_t> targets{0, 1, 2};
  const Tensor target = randn({3, 4}, 41);
  auto grad_of = [&](int which) {
    x.zero_grad();
    Tape tape;
    auto v = tape.parameter(x);
    Var loss = which == 0   ? cross_entropy(v, targets)
               : which == 1 ? squared_error(v, target)
                            : add(cross_entropy(v, targets), squared_error(v, target));
    tape.backward(loss);
    return x.grad;
  };
  const auto g1 = grad_of(0), g2 = grad_of(1), g12 = grad_of(2);
  for (std::size_t i = 0; i < g12.size(); ++i) CHECK(std::abs(g12[i] - (g1[i] + g2[i])) < 1e-12);
}

TEST_CASE("gradients accumulate across backward passes") {
  Tensor x = Tensor::scalar(2.0);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    auto v = tape.parameter(x);
    tape.backward(sum(mul(v, v)));
  }
  CHECK(x.grad[0] == 8.0);
}

// ---- AdamW ------------------------------------------------------------------------------------

TEST_CASE("adamw with zero grads and no decay leaves params unchanged") {
  Tensor p({2, 2}, std::vector<double>{1, -2, 3, 0.5});
  const Tensor before = p;
  p.ensure_grad();
  AdamW opt({.learning_rate = 1e-3, .weight_decay = 0.0});
  std::vector<Tensor*> ps{&p};
  opt.step(ps);
  CHECK(p == before);
  CHECK(opt.steps() == 1);
}

TEST_CASE("adamw decay is decoupled from the gradient") {
  Tensor p({3}, std::vector<double>{1.0, -2.0, 4.0});
  p.ensure_grad();
  AdamW opt({.learning_rate = 1.0, .weight_decay = 0.1});
  std::vector<Tensor*> ps{&p};
  opt.step(ps);
  CHECK(p.data[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(p.data[1] == doctest::Approx(-1.8).epsilon(1e-15));
  CHECK(p.data[2] == doctest::Approx(3.6).epsilon(1e-15));
}

TEST_CASE("adamw matches the hand recursion over two steps") {
  // w0 = 0.5, grads 0.2 then -0.4, lr 0.1, wd 0.01
  const double lr = 0.1, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double w = 0.5, m = 0.0, v = 0.0;
  const double grads[2] = {0.2, -0.4};
  Tensor p = Tensor::scalar(0.5);
  p.ensure_grad();
  AdamW opt({lr, wd, b1, b2, eps});
  std::vector<Tensor*> ps{&p};
  for (int t = 1; t <= 2; ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    w = w * (1 - lr * wd) - lr * mhat / (std::sqrt(vhat) + eps);
    p.grad[0] = g;
    opt.step(ps);
  }
  CHECK(std::abs(p.data[0] - w) < 1e-15);
  CHECK(std::abs(opt.first_moments()[0][0] - m) < 1e-15);
  CHECK(std::abs(opt.second_moments()[0][0] - v) < 1e-18);
}

TEST_CASE("adamw rejects non-finite grads without touching state") {
  Tensor p({2}, std::vector<double>{1.0, 2.0});
  p.ensure_grad();
  p.grad = {0.1, 0.2};
  AdamW opt;
  std::vector<Tensor*> ps{&p};
  opt.step(ps);
  const Tensor after_one = p;
  const auto m = opt.first_moments();
  p.grad = {0.1, std::nan("")};
  CHECK_THROWS_AS(opt.step(ps), NumericError);
  CHECK(p == after_one);
  CHECK(opt.steps() == 1);
  CHECK(opt.first_moments() == m);
}

TEST_CASE("adamw is deterministic") {
  auto run = [] {
    Tensor p = randn({4, 4}, 50);
    p.ensure_grad();
    AdamW opt;
    std::vector<Tensor*> ps{&p};
    for (int i = 0; i < 5; ++i) {
      p.grad = randn({4, 4}, 60 + i).data;
      opt.step(ps);
    }
    return p;
  };
  CHECK(run() == run());
}
