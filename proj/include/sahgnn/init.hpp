#pragma once

#include <cmath>

#include "sahgnn/rng.hpp"
#include "sahgnn/tensor.hpp"

namespace sahgnn {

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor w(fan_in, fan_out);
  for (double& v : w.values()) v = dist(rng);
  return w;
}

}  // namespace sahgnn
