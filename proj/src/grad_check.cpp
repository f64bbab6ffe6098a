#include "sahgnn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sahgnn::ad {
namespace {

double evaluate(const ScalarFunction& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.constant(p));
  const double value = f(tape, leaves).value().item();
  if (!std::isfinite(value)) throw NumericError("grad_check: function value is not finite");
  return value;
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, std::span<const Tensor> params,
                           std::span<const std::string> names, const GradCheckOptions& options) {
  if (names.size() != params.size()) throw std::invalid_argument("grad_check: one name per parameter");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& p : params) leaves.push_back(tape.parameter(p));
    Var out = f(tape, leaves);
    if (!std::isfinite(out.value().item())) throw NumericError("grad_check: function value is not finite");
    tape.backward(out);
    for (const Var& leaf : leaves) analytic.push_back(tape.grad(leaf));
  }

  GradCheckReport report;
  std::vector<Tensor> work(params.begin(), params.end());
  for (std::size_t p = 0; p < work.size(); ++p) {
    ParameterReport pr;
    pr.name = names[p];
    pr.entries = work[p].size();
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double original = work[p][i];
      work[p][i] = original + options.step;
      const double up = evaluate(f, work);
      work[p][i] = original - options.step;
      const double down = evaluate(f, work);
      work[p][i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double err = std::abs(a - numeric) / denom;
      if (err > pr.max_rel_error || i == 0) {
        pr.max_rel_error = std::max(pr.max_rel_error, err);
        if (err >= pr.max_rel_error) {
          pr.worst_entry = i;
          pr.worst_analytic = a;
          pr.worst_numeric = numeric;
        }
      }
    }
    if (pr.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = pr.max_rel_error;
      report.worst_parameter = pr.name;
    }
    report.parameters.push_back(std::move(pr));
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

std::vector<OpCheck> check_ops(const GradCheckOptions& options) {
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> dist(-1.5, 1.5);
  auto rand = [&](std::size_t r, std::size_t c) {
    Tensor t(r, c);
    for (double& v : t.values()) {
      v = dist(rng);
      if (std::abs(v) < 0.05) v += 0.1;  // keep relu away from its kink
    }
    return t;
  };
  // Each op is read out through a fixed random weighting so every output
  // entry contributes to the scalar.
  struct Case {
    std::string op;
    std::vector<Tensor> inputs;
    std::function<Var(std::span<const Var>)> build;
  };
  const Tensor w34 = rand(3, 4), w33 = rand(3, 3), w43 = rand(4, 3), w31 = rand(3, 1), w36 = rand(3, 6);
  auto readout = [](const Tensor& w) {
    return [w](Var v) { return sum(mul(v, v.tape().constant(w))); };
  };
  std::vector<Case> cases;
  cases.push_back({"matmul", {rand(3, 2), rand(2, 4)}, [&](auto x) { return readout(w34)(matmul(x[0], x[1])); }});
  cases.push_back({"transpose", {rand(3, 4)}, [&](auto x) { return readout(w43)(transpose(x[0])); }});
  cases.push_back({"tanh", {rand(3, 4)}, [&](auto x) { return readout(w34)(tanh(x[0])); }});
  cases.push_back({"relu", {rand(3, 4)}, [&](auto x) { return readout(w34)(relu(x[0])); }});
  cases.push_back({"add", {rand(3, 4), rand(3, 4)}, [&](auto x) { return readout(w34)(add(x[0], x[1])); }});
  cases.push_back({"sub", {rand(3, 4), rand(3, 4)}, [&](auto x) { return readout(w34)(sub(x[0], x[1])); }});
  cases.push_back({"mul", {rand(3, 4), rand(3, 4)}, [&](auto x) { return readout(w34)(mul(x[0], x[1])); }});
  cases.push_back({"scale", {rand(3, 4)}, [&](auto x) { return readout(w34)(scale(x[0], -1.7)); }});
  cases.push_back({"add_bias", {rand(3, 4), rand(1, 4)}, [&](auto x) { return readout(w34)(add_bias(x[0], x[1])); }});
  cases.push_back({"row_softmax", {rand(3, 3)}, [&](auto x) { return readout(w33)(row_softmax(x[0])); }});
  cases.push_back({"sum", {rand(3, 4)}, [&](auto x) { return scale(sum(x[0]), 0.7); }});
  cases.push_back({"mean", {rand(3, 4)}, [&](auto x) { return scale(mean(x[0]), 0.7); }});
  cases.push_back({"row_sum", {rand(3, 4)}, [&](auto x) { return readout(w31)(row_sum(x[0])); }});
  cases.push_back({"concat_cols", {rand(3, 2), rand(3, 4)}, [&](auto x) { return readout(w36)(concat_cols(x[0], x[1])); }});

  std::vector<OpCheck> out;
  for (const auto& c : cases) {
    std::vector<std::string> names(c.inputs.size(), c.op);
    const auto report =
        grad_check([&](Tape&, std::span<const Var> x) { return c.build(x); }, c.inputs, names, options);
    out.push_back({c.op, report.max_rel_error, report.passed});
  }
  return out;
}

}  // namespace sahgnn::ad
