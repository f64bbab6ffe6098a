#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sahgnn/tape.hpp"

namespace sahgnn::ad {

/// Builds a scalar on `tape` from parameter leaves (same order as passed to
/// grad_check). Must be a deterministic function of the parameter values.
using ScalarFunction = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-6;
  /// Denominator floor: the error of entry i is
  /// |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-3;
};

struct ParameterReport {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  std::size_t worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParameterReport> parameters;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  bool passed = false;
};

/// Compares tape gradients of f against central differences
/// (f(x+h) - f(x-h)) / 2h for every entry of every parameter.
/// Throws NumericError if f is non-finite at any evaluation point.
GradCheckReport grad_check(const ScalarFunction& f, std::span<const Tensor> params,
                           std::span<const std::string> names, const GradCheckOptions& options = {});

struct OpCheck {
  std::string op;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Checks every primitive tape op in isolation on small seeded random
/// inputs, so a failing end-to-end check can be traced to an op.
std::vector<OpCheck> check_ops(const GradCheckOptions& options = {});

}  // namespace sahgnn::ad
