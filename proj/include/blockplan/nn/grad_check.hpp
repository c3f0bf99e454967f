#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "blockplan/nn/ops.hpp"
#include "blockplan/nn/tensor.hpp"
#include "blockplan/rng.hpp"

namespace blockplan::nn {

struct GradCheckOptions {
  double step = 1e-3;
  /// Denominator floor for the relative error, so two near-zero derivatives
  /// compare by absolute difference.
  double abs_floor = 1e-6;
  /// 0 checks every entry; otherwise a seeded random subset per tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t sample_seed = 1;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

namespace detail {

class ReplayScope {
 public:
  ReplayScope() { reset(); }
  ~ReplayScope() { reset(); }
  ReplayScope(const ReplayScope&) = delete;
  ReplayScope& operator=(const ReplayScope&) = delete;

  void record() {
    reset();
    stop_gradient_replay().mode = StopGradientReplay::Mode::Record;
  }
  void replay() {
    stop_gradient_replay().mode = StopGradientReplay::Mode::Replay;
    stop_gradient_replay().cursor = 0;
  }
  void off() { stop_gradient_replay().mode = StopGradientReplay::Mode::Off; }

 private:
  static void reset() {
    auto& r = stop_gradient_replay();
    r.mode = StopGradientReplay::Mode::Off;
    r.values.clear();
    r.cursor = 0;
  }
};

}  // namespace detail

/// Compares reverse-mode gradients of a scalar-valued fragment against central
/// differences (f(x + h) - f(x - h)) / 2h for every entry of `wrt`.
///
/// stop_gradient boundaries are frozen at their unperturbed values during the
/// numeric passes, so blocked branches contribute nothing to either side.
template <class T, class Fragment>
GradCheckResult grad_check(Fragment&& fragment, std::vector<BasicTensor<T>> wrt, GradCheckOptions opts = {}) {
  detail::ReplayScope scope;
  for (auto& t : wrt) t.zero_grad();

  scope.record();
  BasicTensor<T> loss = fragment();
  scope.off();
  loss.backward();

  std::vector<std::vector<T>> analytic;
  for (auto& t : wrt) {
    if (t.has_grad())
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    else
      analytic.emplace_back(t.size(), T(0));
  }

  GradCheckResult result;
  SplitMix64 sampler = SplitMix64::from_seed(opts.sample_seed);
  NoGradGuard no_grad;
  const T h = static_cast<T>(opts.step);
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto values = wrt[ti].values();
    std::vector<std::size_t> entries;
    if (opts.max_entries_per_tensor == 0 || values.size() <= opts.max_entries_per_tensor) {
      for (std::size_t i = 0; i < values.size(); ++i) entries.push_back(i);
    } else {
      for (std::size_t i = 0; i < opts.max_entries_per_tensor; ++i) entries.push_back(sampler.below(values.size()));
    }
    for (std::size_t idx : entries) {
      const T original = values[idx];
      values[idx] = original + h;
      scope.replay();
      const double f_plus = static_cast<double>(fragment().item());
      values[idx] = original - h;
      scope.replay();
      const double f_minus = static_cast<double>(fragment().item());
      values[idx] = original;
      // Central difference over the actually representable step.
      const double span = static_cast<double>(original + h) - static_cast<double>(original - h);
      const double numeric = (f_plus - f_minus) / span;
      const double a = static_cast<double>(analytic[ti][idx]);
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (result.entries_checked == 1 || rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_tensor = ti;
        result.worst_index = idx;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace blockplan::nn
