// Shared helpers for the unit tests: central-difference gradient checking
// and random tensor construction.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "myow/rng.hpp"
#include "myow/tensor.hpp"

namespace testsupport {

inline myow::Tensor random_leaf(std::vector<std::size_t> shape, myow::Rng& rng,
                                double lo = -1.0, double hi = 1.0) {
  myow::Tensor t = myow::rand_uniform(std::move(shape), lo, hi, rng);
  t.set_requires_grad(true);
  return t;
}

/// Compares reverse-mode gradients of a scalar-valued function against
/// central finite differences over every entry of every leaf. Returns the
/// worst relative error (denominator floored at 1 so near-zero gradients are
/// compared absolutely).
inline double max_grad_error(const std::function<myow::Tensor()>& f,
                             std::vector<myow::Tensor> leaves,
                             double h = 1e-5) {
  for (auto& leaf : leaves) leaf.zero_grad();
  myow::Tensor loss = f();
  loss.backward();
  double worst = 0.0;
  for (auto& leaf : leaves) {
    for (std::size_t i = 0; i < leaf.size(); ++i) {
      const double analytic = leaf.has_grad() ? leaf.grad()[i] : 0.0;
      const double orig = leaf.values()[i];
      leaf.mutable_values()[i] = orig + h;
      const double up = f().value();
      leaf.mutable_values()[i] = orig - h;
      const double down = f().value();
      leaf.mutable_values()[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double denom =
          std::max({1.0, std::abs(analytic), std::abs(fd)});
      worst = std::max(worst, std::abs(analytic - fd) / denom);
    }
    leaf.zero_grad();
  }
  return worst;
}

}  // namespace testsupport
