#pragma once

// Central finite-difference check of reverse-mode gradients at 64-bit.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "woundseg/autodiff/ops.hpp"
#include "woundseg/core/random.hpp"

namespace testing_support {

using TensorD = woundseg::ad::Tensor<double>;
using OpFn = std::function<TensorD(const std::vector<TensorD>&)>;

struct GradcheckResult {
  double max_rel_error = 0.0;  // worst over inputs
  std::size_t checked = 0;     // scalar entries compared
};

// Projection onto fixed random weights turns any output into a scalar, so
// every entry of the Jacobian contributes. Relative error per input is
// ||analytic - numeric|| / (||analytic|| + ||numeric||).
inline GradcheckResult gradcheck(const OpFn& op, std::vector<TensorD> inputs, std::uint64_t seed,
                                 double step = 1e-6) {
  namespace ad = woundseg::ad;
  for (auto& t : inputs) t = t.detach_copy(true);
  const TensorD probe = op(inputs);
  woundseg::Rng rng(seed);
  std::vector<double> w(probe.numel());
  for (auto& x : w) x = woundseg::uniform(rng, -1.0, 1.0);
  const TensorD weights = TensorD::from(probe.shape(), w);
  auto objective = [&](const std::vector<TensorD>& in) { return ad::sum(ad::mul(op(in), weights)); };

  ad::backward(objective(inputs));
  GradcheckResult r;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(t.numel());
    auto vals = t.mutable_values();
    for (std::size_t j = 0; j < t.numel(); ++j) {
      const double orig = vals[j];
      vals[j] = orig + step;
      const double up = objective(inputs).item();
      vals[j] = orig - step;
      const double down = objective(inputs).item();
      vals[j] = orig;
      numeric[j] = (up - down) / (2.0 * step);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      diff += (analytic[j] - numeric[j]) * (analytic[j] - numeric[j]);
      na += analytic[j] * analytic[j];
      nn += numeric[j] * numeric[j];
    }
    const double denom = std::sqrt(na) + std::sqrt(nn);
    const double rel = denom > 0.0 ? std::sqrt(diff) / denom : 0.0;
    r.max_rel_error = std::max(r.max_rel_error, rel);
    r.checked += numeric.size();
  }
  return r;
}

inline TensorD random_tensor(const woundseg::ad::Shape& shape, woundseg::Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  std::vector<double> v(woundseg::ad::shape_numel(shape));
  for (auto& x : v) x = woundseg::uniform(rng, lo, hi);
  return TensorD::from(shape, std::move(v));
}

// Values bounded away from zero, for ops with a kink at 0.
inline TensorD random_tensor_avoiding_zero(const woundseg::ad::Shape& shape, woundseg::Rng& rng,
                                           double margin = 1e-3) {
  auto t = random_tensor(shape, rng);
  for (auto& x : t.mutable_values())
    if (std::abs(x) < margin) x = x < 0 ? -margin - 0.1 : margin + 0.1;
  return t;
}

// Distinct values spaced far apart relative to the finite-difference step,
// so max-pool argmax choices are stable under perturbation.
inline TensorD random_distinct_tensor(const woundseg::ad::Shape& shape, woundseg::Rng& rng) {
  const std::size_t n = woundseg::ad::shape_numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i) * 0.01;
  woundseg::shuffle_in_place(v, rng);
  return TensorD::from(shape, std::move(v));
}

inline TensorD binary_targets(const woundseg::ad::Shape& shape, woundseg::Rng& rng) {
  std::vector<double> v(woundseg::ad::shape_numel(shape));
  for (auto& x : v) x = woundseg::uniform01(rng) < 0.5 ? 1.0 : 0.0;
  return TensorD::from(shape, std::move(v));
}

}  // namespace testing_support
