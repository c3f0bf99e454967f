#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "blockplan/nn/tensor.hpp"

namespace blockplan::nn {

/// A named trainable tensor.
template <class T>
struct NamedParameter {
  std::string name;
  BasicTensor<T> tensor;
};

template <class T>
using ParameterList = std::vector<NamedParameter<T>>;

struct RMSPropConfig {
  double learning_rate = 2e-4;
  double decay = 0.95;
  double epsilon = 1e-6;
};

/// RMSProp:  acc <- decay * acc + (1 - decay) g^2
///           theta <- theta - lr * g / (sqrt(acc) + eps)
/// A parameter whose gradient holds a non-finite value is left untouched for
/// that step (accumulator included) and reported by name.
template <class T>
class BasicRMSProp {
 public:
  BasicRMSProp(ParameterList<T> params, RMSPropConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) accumulators_.emplace_back(p.tensor.size(), T(0));
  }

  /// Applies one update from the current gradients; returns names of skipped
  /// parameters.
  std::vector<std::string> step() {
    std::vector<std::string> skipped;
    const T lr = static_cast<T>(config_.learning_rate);
    const T rho = static_cast<T>(config_.decay);
    const T eps = static_cast<T>(config_.epsilon);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].tensor;
      if (!p.has_grad()) continue;
      const auto g = p.grad();
      bool finite = true;
      for (T v : g)
        if (!std::isfinite(v)) {
          finite = false;
          break;
        }
      if (!finite) {
        skipped.push_back(params_[i].name);
        continue;
      }
      auto& acc = accumulators_[i];
      auto theta = p.values();
      for (std::size_t j = 0; j < acc.size(); ++j) {
        acc[j] = rho * acc[j] + (T(1) - rho) * g[j] * g[j];
        theta[j] -= lr * g[j] / (std::sqrt(acc[j]) + eps);
      }
    }
    return skipped;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  const ParameterList<T>& parameters() const { return params_; }
  const RMSPropConfig& config() const { return config_; }
  std::vector<std::vector<T>>& accumulators() { return accumulators_; }
  const std::vector<std::vector<T>>& accumulators() const { return accumulators_; }

  /// Accumulators as tensors named after their parameters.
  ParameterList<T> state_tensors() const {
    ParameterList<T> out;
    for (std::size_t i = 0; i < params_.size(); ++i)
      out.push_back({params_[i].name, BasicTensor<T>::from(params_[i].tensor.shape(), accumulators_[i])});
    return out;
  }

 private:
  ParameterList<T> params_;
  RMSPropConfig config_;
  std::vector<std::vector<T>> accumulators_;
};

using RMSProp = BasicRMSProp<float>;

}  // namespace blockplan::nn
