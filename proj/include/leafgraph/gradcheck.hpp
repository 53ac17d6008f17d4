#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <string>
#include <utility>

#include "leafgraph/error.hpp"
#include "leafgraph/tensor.hpp"

namespace leafgraph {

// Max over coordinates of |fd - analytic| / max(1, |fd|, |analytic|) where fd is the
// central difference (f(x + h e_i) - f(x - h e_i)) / 2h.
template <typename F>
  requires std::invocable<F&, const Tensor&>
double finite_diff_check(F&& f, const Tensor& x, const Tensor& analytic_grad, double h) {
  require_same_shape(x, analytic_grad, "finite_diff_check");
  if (!(h >= 1e-6 && h <= 1e-2)) throw RangeError("finite_diff_check: h must be in [1e-6, 1e-2]");
  Tensor probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = static_cast<double>(f(std::as_const(probe)));
    probe[i] = orig - h;
    const double fm = static_cast<double>(f(std::as_const(probe)));
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw DivergenceError("finite_diff_check: non-finite function value at coordinate " +
                            std::to_string(i));
    }
    const double fd = (fp - fm) / (2.0 * h);
    const double an = analytic_grad[i];
    const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

}  // namespace leafgraph
