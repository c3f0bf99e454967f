#pragma once

// Randomized numeric checks for the tensor engine, shared by the unit tests
// and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "blockplan/nn/grad_check.hpp"
#include "blockplan/nn/ops.hpp"
#include "blockplan/rng.hpp"
#include "support/conv_oracle.hpp"

namespace blockplan::testing {

using DTensor = nn::BasicTensor<double>;

inline std::vector<double> random_values(std::size_t n, SplitMix64& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = (2.0 * rng.uniform01() - 1.0) * scale;
  return v;
}

/// Keeps values at least `margin` away from zero (ReLU kink).
inline std::vector<double> away_from_zero(std::vector<double> v, double margin) {
  for (auto& x : v)
    if (std::abs(x) < margin) x = x < 0 ? x - margin : x + margin;
  return v;
}

inline DTensor dparam(nn::Shape shape, SplitMix64& rng, double scale = 1.0) {
  auto n = nn::numel(shape);
  return DTensor::parameter(std::move(shape), random_values(n, rng, scale));
}

struct SmallConvCase {
  int batch, cin, cout, h, w, k, stride, pad;
};

inline SmallConvCase random_conv_case(SplitMix64& rng, int max_channels = 3, int max_side = 8) {
  SmallConvCase c{};
  c.batch = 1 + static_cast<int>(rng.below(2));
  c.cin = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_channels)));
  c.cout = 1 + static_cast<int>(rng.below(3));
  c.h = 3 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_side - 2)));
  c.w = 3 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_side - 2)));
  c.k = 1 + static_cast<int>(rng.below(3));
  c.stride = 1 + static_cast<int>(rng.below(2));
  c.pad = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.k)));
  return c;
}

/// Worst |conv2d - nested loops| over random float cases up to 3x8x8.
inline double conv_oracle_max_abs_error(int cases, std::uint64_t seed) {
  SplitMix64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < cases; ++i) {
    const auto c = random_conv_case(rng);
    const auto xd = random_values(static_cast<std::size_t>(c.batch * c.cin * c.h * c.w), rng);
    const auto wd = random_values(static_cast<std::size_t>(c.cout * c.cin * c.k * c.k), rng);
    const auto bd = random_values(static_cast<std::size_t>(c.cout), rng);
    auto to_f = [](const std::vector<double>& v) { return std::vector<float>(v.begin(), v.end()); };
    auto x = nn::Tensor::from({c.batch, c.cin, c.h, c.w}, to_f(xd));
    auto w = nn::Tensor::from({c.cout, c.cin, c.k, c.k}, to_f(wd));
    auto b = nn::Tensor::from({c.cout}, to_f(bd));
    const auto y = nn::conv2d(x, {c.cin, c.cout, c.k, c.stride, c.pad, 0}, w, b);
    // Oracle sees the same float-rounded inputs.
    std::vector<double> xr(x.values().begin(), x.values().end()), wr(w.values().begin(), w.values().end()),
        br(b.values().begin(), b.values().end());
    int oh = 0, ow = 0;
    const auto ref = naive_conv2d(xr, c.batch, c.cin, c.h, c.w, wr, br, c.cout, c.k, c.stride, c.pad, oh, ow);
    if (y.shape() != nn::Shape{c.batch, c.cout, oh, ow}) return INFINITY;
    for (std::size_t j = 0; j < ref.size(); ++j) worst = std::max(worst, std::abs(ref[j] - y.values()[j]));
  }
  return worst;
}

/// Worst relative gap in <conv(x), y> = <x, deconv(y)> over random cases.
inline double adjointness_max_relative_error(int cases, std::uint64_t seed) {
  SplitMix64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < cases; ++i) {
    auto c = random_conv_case(rng);
    const nn::ConvSpec conv{c.cin, c.cout, c.k, c.stride, c.pad, 0};
    const int oh = nn::conv_output_size(c.h, conv), ow = nn::conv_output_size(c.w, conv);
    // Output padding recovering the original size; needs equal residue on both axes.
    const int op_h = c.h - ((oh - 1) * c.stride - 2 * c.pad + c.k);
    const int op_w = c.w - ((ow - 1) * c.stride - 2 * c.pad + c.k);
    if (op_h != op_w) {
      --i;
      continue;
    }
    const nn::ConvSpec deconv{c.cout, c.cin, c.k, c.stride, c.pad, op_h};
    auto x = DTensor::from({c.batch, c.cin, c.h, c.w}, random_values(static_cast<std::size_t>(c.batch * c.cin * c.h * c.w), rng));
    auto y = DTensor::from({c.batch, c.cout, oh, ow}, random_values(static_cast<std::size_t>(c.batch * c.cout * oh * ow), rng));
    auto w = DTensor::from({c.cout, c.cin, c.k, c.k}, random_values(static_cast<std::size_t>(c.cout * c.cin * c.k * c.k), rng));
    auto zero_out = DTensor::zeros({c.cout});
    auto zero_in = DTensor::zeros({c.cin});
    const auto cx = nn::conv2d(x, conv, w, zero_out);
    const auto dy = nn::deconv2d(y, deconv, w, zero_in);
    if (dy.shape() != x.shape()) return INFINITY;
    double lhs = 0, rhs = 0;
    for (std::size_t j = 0; j < cx.size(); ++j) lhs += cx.values()[j] * y.values()[j];
    for (std::size_t j = 0; j < x.size(); ++j) rhs += x.values()[j] * dy.values()[j];
    worst = std::max(worst, std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-12}));
  }
  return worst;
}

/// Finite-difference checks of every differentiable op over `cases` random
/// small shapes each, in double precision. Returns op name -> worst error.
inline std::map<std::string, double> finite_difference_errors(int cases, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::map<std::string, double> worst;
  nn::GradCheckOptions opts;
  opts.step = 1e-5;
  auto note = [&](const std::string& op, const nn::GradCheckResult& r) {
    worst[op] = std::max(worst[op], r.max_relative_error);
  };

  for (int i = 0; i < cases; ++i) {
    {
      const auto c = random_conv_case(rng);
      auto x = dparam({c.batch, c.cin, c.h, c.w}, rng);
      auto w = dparam({c.cout, c.cin, c.k, c.k}, rng);
      auto b = dparam({c.cout}, rng);
      const nn::ConvSpec spec{c.cin, c.cout, c.k, c.stride, c.pad, 0};
      const int oh = nn::conv_output_size(c.h, spec), ow = nn::conv_output_size(c.w, spec);
      auto proj = random_values(static_cast<std::size_t>(c.batch * c.cout * oh * ow), rng);
      note("conv2d", nn::grad_check<double>([&] { return nn::weighted_sum(nn::conv2d(x, spec, w, b), proj); }, {x, w, b}, opts));
    }
    {
      const auto c = random_conv_case(rng, 3, 5);
      const int op = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.stride)));
      const nn::ConvSpec spec{c.cin, c.cout, c.k, c.stride, c.pad, op};
      const int h = std::max(2, c.h - 2), w_ = std::max(2, c.w - 2);
      if (nn::deconv_output_size(h, spec) <= 0 || nn::deconv_output_size(w_, spec) <= 0) { --i; continue; }
      auto x = dparam({c.batch, c.cin, h, w_}, rng);
      auto w = dparam({c.cin, c.cout, c.k, c.k}, rng);
      auto b = dparam({c.cout}, rng);
      const int oh = nn::deconv_output_size(h, spec), ow = nn::deconv_output_size(w_, spec);
      auto proj = random_values(static_cast<std::size_t>(c.batch * c.cout * oh * ow), rng);
      note("deconv2d", nn::grad_check<double>([&] { return nn::weighted_sum(nn::deconv2d(x, spec, w, b), proj); }, {x, w, b}, opts));
    }
    {
      const int batch = 1 + static_cast<int>(rng.below(3));
      const int n = 1 + static_cast<int>(rng.below(7)), m = 1 + static_cast<int>(rng.below(7));
      auto x = dparam({batch, n}, rng);
      auto w = dparam({m, n}, rng);
      auto b = dparam({m}, rng);
      auto proj = random_values(static_cast<std::size_t>(batch * m), rng);
      note("affine", nn::grad_check<double>([&] { return nn::weighted_sum(nn::affine(x, w, b), proj); }, {x, w, b}, opts));
    }
    {
      const int n = 1 + static_cast<int>(rng.below(30));
      auto x = DTensor::parameter({n}, away_from_zero(random_values(static_cast<std::size_t>(n), rng), 1e-2));
      auto proj = random_values(static_cast<std::size_t>(n), rng);
      note("relu", nn::grad_check<double>([&] { return nn::weighted_sum(nn::relu(x), proj); }, {x}, opts));
      note("sigmoid", nn::grad_check<double>([&] { return nn::weighted_sum(nn::sigmoid(x), proj); }, {x}, opts));
    }
    {
      const int n = 1 + static_cast<int>(rng.below(12));
      auto p = dparam({n}, rng);
      auto t = DTensor::from({n}, random_values(static_cast<std::size_t>(n), rng));
      std::vector<double> m(static_cast<std::size_t>(n));
      for (auto& v : m) v = rng.bernoulli(0.6) ? 1.0 : 0.0;
      m[rng.below(static_cast<std::uint64_t>(n))] = 1.0;
      auto mask = DTensor::from({n}, m);
      note("mse", nn::grad_check<double>([&] { return nn::mse(p, t, mask); }, {p}, opts));
      note("mse", nn::grad_check<double>([&] { return nn::mse(p, t); }, {p}, opts));
    }
    {
      const int batch = 1 + static_cast<int>(rng.below(3));
      const int na = 1 + static_cast<int>(rng.below(5)), nb = 1 + static_cast<int>(rng.below(5));
      auto a = dparam({batch, na}, rng);
      auto b = dparam({batch, nb}, rng);
      auto proj = random_values(static_cast<std::size_t>(batch * (na + nb)), rng);
      note("concat_columns", nn::grad_check<double>(
                                 [&] { return nn::weighted_sum(nn::reshape(nn::concat_columns(a, b), {batch * (na + nb)}), proj); },
                                 {a, b}, opts));
      auto c = dparam({batch, na}, rng);
      auto proj2 = random_values(static_cast<std::size_t>(batch * na), rng);
      note("add", nn::grad_check<double>([&] { return nn::weighted_sum(nn::add(a, c), proj2); }, {a, c}, opts));
    }
  }
  return worst;
}

}  // namespace blockplan::testing
