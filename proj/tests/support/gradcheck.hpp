#pragma once

// Central finite-difference oracle for the autograd tape (float64 only).

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "xlate/ops.hpp"

namespace xlate::testing {

using LossFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
};

/// Relative error |a - n| / max(|a| + |n|, floor) over every input element.
inline GradCheckResult grad_check(std::vector<Tensor<double>> inputs, const LossFn& loss_fn, double step = 1e-5,
                                  double floor = 1e-6) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<double> loss = loss_fn(inputs);
  backward(loss);

  GradCheckResult result;
  for (auto& t : inputs) {
    Vec<double> analytic = t.has_grad() ? t.grad() : Vec<double>::Zero(t.size());
    for (Index i = 0; i < t.size(); ++i) {
      const double saved = t.data()[i];
      double plus, minus;
      {
        NoGradGuard guard;
        t.mutable_data()[i] = saved + step;
        plus = loss_fn(inputs).item();
        t.mutable_data()[i] = saved - step;
        minus = loss_fn(inputs).item();
        t.mutable_data()[i] = saved;
      }
      const double numeric = (plus - minus) / (2 * step);
      const double err = std::abs(analytic[i] - numeric) / std::max(std::abs(analytic[i]) + std::abs(numeric), floor);
      result.max_rel_error = std::max(result.max_rel_error, err);
      result.max_abs_grad = std::max(result.max_abs_grad, std::abs(analytic[i]));
    }
  }
  return result;
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Vec<double> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return Tensor<double>(std::move(shape), std::move(v));
}

/// Fixed random projection so vector-valued ops reduce to a generic scalar.
inline Tensor<double> project(const Tensor<double>& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<double> w = random_tensor(x.shape(), rng);
  return sum(mul(x, w));
}

}  // namespace xlate::testing
