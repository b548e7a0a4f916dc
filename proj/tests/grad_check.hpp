#pragma once

// Finite-difference gradient checks in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "novo/tensor.hpp"

namespace novo::testing {

inline Tensor64 random_tensor64(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor64(std::move(shape), std::move(v), requires_grad);
}

// Largest per-tensor relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
// between tape gradients and central differences at step h. Tensors whose
// gradients are both below `floor` in norm are compared absolutely.
struct GradCheck {
  double max_rel_error = 0;
  std::string worst;
};

inline GradCheck check_gradients(const std::function<Tensor64()>& loss_fn, std::vector<std::pair<std::string, Tensor64>> leaves,
                                 double h = 1e-3, double floor = 1e-9) {
  for (auto& [_, t] : leaves) t.zero_grad();
  {
    Tape64 tape;
    TapeScope<double> scope(tape);
    const auto loss = loss_fn();
    tape.backward(loss);
  }
  GradCheck result;
  for (auto& [name, t] : leaves) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    auto values = t.mutable_values();
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = loss_fn().item();
      values[i] = orig - h;
      const double down = loss_fn().item();
      values[i] = orig;
      const double numeric = (up - down) / (2 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(na), std::sqrt(nn));
    const double err = denom < floor ? std::sqrt(diff) : std::sqrt(diff) / denom;
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst = name;
    }
    t.zero_grad();
  }
  return result;
}

}  // namespace novo::testing
