#pragma once

#include <cmath>
#include <vector>

#include "blockplan/nn/tensor.hpp"
#include "blockplan/rng.hpp"

namespace blockplan::nn {

/// Zero-mean Gaussian parameter with standard deviation sqrt(gain / fan_in).
/// gain 2 precedes a ReLU; gain 1 precedes a sigmoid or a linear output.
inline Tensor gaussian_parameter(Shape shape, double fan_in, double gain, SplitMix64& rng) {
  const double stddev = std::sqrt(gain / fan_in);
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal() * stddev);
  return Tensor::parameter(std::move(shape), std::move(v));
}

inline Tensor zero_parameter(Shape shape) {
  return Tensor::parameter(shape, std::vector<float>(numel(shape), 0.0f));
}

}  // namespace blockplan::nn
