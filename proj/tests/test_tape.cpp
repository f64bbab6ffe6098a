#include <cmath>
#include <random>

#include "doctest.h"
#include "sahgnn/grad_check.hpp"
#include "sahgnn/tape.hpp"
#include "test_util.hpp"

using namespace sahgnn;
using ad::Tape;
using ad::Var;

TEST_CASE("matmul forward") {
  Tape tape;
  auto m = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(ad::matmul(tape.constant(Tensor::identity(2)), tape.constant(m)).value() == m);
  auto p = ad::matmul(tape.constant(Tensor::from_rows({{1, 0}, {0, 0}})),
                      tape.constant(Tensor::from_rows({{5, 6}, {7, 8}})));
  CHECK(p.value() == Tensor::from_rows({{5, 6}, {0, 0}}));
  CHECK_THROWS_AS(ad::matmul(tape.constant(Tensor(2, 3)), tape.constant(Tensor(2, 3))), ShapeError);
}

TEST_CASE("matmul gradient matches central differences") {
  std::mt19937_64 rng(1);
  const Tensor a = testutil::random_tensor(4, 3, rng);
  const Tensor b = testutil::random_tensor(3, 5, rng);
  testutil::UnaryScalar wrt_a = [&](Tape& t, Var x) { return ad::sum(ad::matmul(x, t.constant(b))); };
  testutil::UnaryScalar wrt_b = [&](Tape& t, Var x) { return ad::sum(ad::matmul(t.constant(a), x)); };
  CHECK(testutil::max_rel_error(testutil::tape_gradient(wrt_a, a), testutil::central_difference(wrt_a, a),
                                1e-12) < 1e-6);
  CHECK(testutil::max_rel_error(testutil::tape_gradient(wrt_b, b), testutil::central_difference(wrt_b, b),
                                1e-12) < 1e-6);
}

TEST_CASE("elementwise values and derivatives") {
  Tape tape;
  CHECK(ad::tanh(tape.constant(Tensor::scalar(0.0))).value().item() == 0.0);
  CHECK(ad::relu(tape.constant(Tensor::scalar(-3.0))).value().item() == 0.0);

  testutil::UnaryScalar f = [](Tape&, Var x) { return ad::tanh(x); };
  CHECK(testutil::tape_gradient(f, Tensor::scalar(0.0)).item() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(testutil::central_difference(f, Tensor::scalar(0.0)).item() == doctest::Approx(1.0).epsilon(1e-9));

  // relu subgradient at exactly zero is zero
  testutil::UnaryScalar r = [](Tape&, Var x) { return ad::sum(ad::relu(x)); };
  CHECK(testutil::tape_gradient(r, Tensor::scalar(0.0)).item() == 0.0);

  CHECK_THROWS_AS(ad::add(tape.constant(Tensor(2, 2)), tape.constant(Tensor(3, 2))), ShapeError);
  auto bcast = ad::mul(tape.constant(Tensor::scalar(2.0)), tape.constant(Tensor::from_rows({{1, 2}})));
  CHECK(bcast.value() == Tensor::from_rows({{2, 4}}));
}

TEST_CASE("every differentiable op matches finite differences on random inputs") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = testutil::random_tensor(3, 4, rng);
    const Tensor other = testutil::random_tensor(3, 4, rng);
    const Tensor scalar = testutil::random_tensor(1, 1, rng);
    const Tensor bias = testutil::random_tensor(1, 4, rng);
    const Tensor right = testutil::random_tensor(4, 2, rng);
    const Tensor weights = testutil::random_tensor(3, 4, rng);  // makes sums non-trivial
    const Tensor readout = testutil::random_tensor(8, 1, rng);

    std::vector<std::pair<std::string, testutil::UnaryScalar>> cases = {
        {"tanh", [&](Tape& t, Var v) { return ad::sum(ad::mul(ad::tanh(v), t.constant(weights))); }},
        {"relu", [&](Tape& t, Var v) { return ad::sum(ad::mul(ad::relu(v), t.constant(weights))); }},
        {"add", [&](Tape& t, Var v) { return ad::sum(ad::mul(ad::add(v, v), t.constant(weights))); }},
        {"sub", [&](Tape& t, Var v) { return ad::sum(ad::mul(ad::sub(t.constant(other), v), v)); }},
        {"mul", [&](Tape& t, Var v) { return ad::sum(ad::mul(v, t.constant(other))); }},
        {"mul_scalar", [&](Tape& t, Var v) { return ad::sum(ad::mul(t.constant(scalar), ad::mul(v, v))); }},
        {"scale", [&](Tape& t, Var v) { return ad::sum(ad::mul(ad::scale(v, -1.7), t.constant(weights))); }},
        {"add_bias", [&](Tape& t, Var v) { return ad::sum(ad::mul(ad::add_bias(v, t.constant(bias)), v)); }},
        {"row_softmax", [&](Tape& t, Var v) { return ad::sum(ad::mul(ad::row_softmax(v), t.constant(weights))); }},
        {"mean", [&](Tape&, Var v) { return ad::mean(ad::mul(v, v)); }},
        {"row_sum", [&](Tape& t, Var v) { return ad::sum(ad::mul(ad::row_sum(ad::mul(v, v)), t.constant(Tensor(3, 1, 0.3)))); }},
        {"transpose", [&](Tape& t, Var v) { return ad::sum(ad::matmul(ad::transpose(v), t.constant(weights))); }},
        {"concat_cols", [&](Tape& t, Var v) {
           auto c = ad::concat_cols(v, ad::tanh(v));
           return ad::sum(ad::matmul(c, t.constant(readout)));
         }},
        {"matmul", [&](Tape& t, Var v) { return ad::sum(ad::tanh(ad::matmul(v, t.constant(right)))); }},
    };
    for (auto& [name, f] : cases) {
      CAPTURE(name);
      CHECK(testutil::max_rel_error(testutil::tape_gradient(f, x), testutil::central_difference(f, x)) < 1e-5);
    }
  }
}

TEST_CASE("row_softmax") {
  Tape tape;
  auto s = ad::row_softmax(tape.constant(Tensor::from_rows({{0, 0, 0}, {1000, 0, 0}})));
  for (int j = 0; j < 3; ++j) CHECK(s.value()(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(s.value()(1, 0) == 1.0);
  CHECK(s.value()(1, 1) < 1e-300);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor x = testutil::random_tensor(5, 9, rng, -50.0, 50.0);
    Tape t;
    auto y = ad::row_softmax(t.constant(x));
    for (std::size_t i = 0; i < 5; ++i) {
      double total = 0.0;
      for (double v : y.value().row(i)) total += v;
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }

  const Tensor x = testutil::random_tensor(3, 4, rng);
  const Tensor w = testutil::random_tensor(3, 4, rng);
  testutil::UnaryScalar f = [&](Tape& t, Var v) { return ad::sum(ad::mul(ad::row_softmax(v), t.constant(w))); };
  CHECK(testutil::max_rel_error(testutil::tape_gradient(f, x), testutil::central_difference(f, x)) < 1e-6);
}

TEST_CASE("reductions") {
  Tape tape;
  auto m = tape.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  CHECK(ad::sum(m).value().item() == 10.0);
  CHECK(ad::mean(m).value().item() == 2.5);
  CHECK(ad::row_sum(m).value() == Tensor::from_rows({{3}, {7}}));
  CHECK_THROWS_AS(ad::mean(tape.constant(Tensor())), ShapeError);

  // row_sum gradient is the upstream gradient broadcast across each row
  Tape t2;
  auto x = t2.parameter(Tensor(2, 3, 1.0));
  auto rs = ad::row_sum(x);
  t2.backward(ad::sum(ad::mul(rs, t2.constant(Tensor::from_rows({{2}, {5}})))));
  CHECK(t2.grad(x) == Tensor::from_rows({{2, 2, 2}, {5, 5, 5}}));
}

TEST_CASE("concat_cols") {
  Tape tape;
  CHECK(ad::concat_cols(tape.constant(Tensor::scalar(1)), tape.constant(Tensor::scalar(2))).value() ==
        Tensor::from_rows({{1, 2}}));
  auto c = ad::concat_cols(tape.constant(Tensor(3, 2)), tape.constant(Tensor(3, 5)));
  CHECK(c.value().rows() == 3);
  CHECK(c.value().cols() == 7);
  CHECK_THROWS_AS(ad::concat_cols(tape.constant(Tensor(3, 2)), tape.constant(Tensor(2, 2))), ShapeError);
}

TEST_CASE("unused parameter receives a zero gradient") {
  Tape tape;
  auto used = tape.parameter(Tensor::from_rows({{1, 2}}));
  auto unused = tape.parameter(Tensor::from_rows({{3, 4}}));
  tape.backward(ad::sum(ad::tanh(used)));
  CHECK(tape.grad(unused) == Tensor(1, 2));
}

TEST_CASE("non-finite results are rejected with the op name") {
  Tape tape;
  auto big = tape.constant(Tensor::scalar(1e308));
  ad::Tape::Scope scope(tape, "head");
  try {
    ad::scale(big, 10.0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("scale") != std::string::npos);
    CHECK(std::string(e.what()).find("head") != std::string::npos);
  }
}

TEST_CASE("forward and backward are bitwise deterministic") {
  std::mt19937_64 rng(11);
  const Tensor a = testutil::random_tensor(6, 5, rng);
  const Tensor b = testutil::random_tensor(5, 4, rng);
  auto run = [&] {
    Tape t;
    auto x = t.parameter(a);
    auto y = ad::row_softmax(ad::matmul(ad::tanh(x), t.constant(b)));
    auto loss = ad::mean(ad::mul(y, y));
    t.backward(loss);
    return std::make_pair(loss.value().item(), t.grad(x));
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("grad_check reports") {
  std::mt19937_64 rng(5);
  std::vector<Tensor> params{testutil::random_tensor(2, 2, rng)};
  std::vector<std::string> names{"W"};
  auto report = ad::grad_check([](Tape&, std::span<const Var> p) { return ad::sum(ad::tanh(p[0])); },
                               params, names);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-6);
  REQUIRE(report.parameters.size() == 1);
  CHECK(report.parameters[0].entries == 4);

  auto constant = ad::grad_check(
      [](Tape& t, std::span<const Var>) { return t.constant(Tensor::scalar(3.0)); }, params, names);
  CHECK(constant.passed);
  CHECK(constant.parameters[0].worst_analytic == 0.0);
  CHECK(constant.parameters[0].worst_numeric == 0.0);

  ad::testing::inject_backward_fault("tanh");
  auto broken = ad::grad_check([](Tape&, std::span<const Var> p) { return ad::sum(ad::tanh(p[0])); },
                               params, names);
  ad::testing::inject_backward_fault("");
  CHECK_FALSE(broken.passed);
  CHECK(broken.worst_parameter == "W");

  auto overflow = [](Tape& t, std::span<const Var>) { return ad::scale(t.constant(Tensor::scalar(1e308)), 1e10); };
  CHECK_THROWS_AS(ad::grad_check(overflow, params, names), NumericError);
}

TEST_CASE("op self-check passes and localises an injected fault") {
  const auto clean = sahgnn::ad::check_ops();
  CHECK(clean.size() == 14);
  for (const auto& c : clean) {
    INFO(c.op);
    CHECK(c.passed);
  }
  sahgnn::ad::testing::inject_backward_fault("tanh");
  const auto broken = sahgnn::ad::check_ops();
  sahgnn::ad::testing::inject_backward_fault("");
  for (const auto& c : broken) {
    INFO(c.op);
    CHECK(c.passed == (c.op != "tanh"));
  }
}
