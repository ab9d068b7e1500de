#pragma once

// Shared finite-difference helpers for the gradient tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "fff/numeric.hpp"

namespace fff::testing {

/// Relative error with a floor on the denominator; below the floor the
/// comparison is effectively absolute, which is where central differences
/// with h = 1e-6 stop resolving anything.
inline double rel_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  ///< entries whose perturbation changed a discrete routing choice
  std::string worst;
};

/// Central differences of `loss` w.r.t. every entry of `param`, compared to
/// `analytic`. `stable()` is queried after each perturbed evaluation; entries where it
/// returns false (a hard routing decision flipped) are skipped and counted.
inline void check_entries(GradCheck& out, const std::string& name, Matrix& param,
                          const Matrix& analytic, const std::function<double()>& loss,
                          double h = 1e-6, const std::function<bool()>& stable = {}) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double orig = param[i];
    param[i] = orig + h;
    const double up = loss();
    bool ok = !stable || stable();
    param[i] = orig - h;
    const double down = loss();
    ok = ok && (!stable || stable());
    param[i] = orig;
    if (!ok) {
      ++out.skipped;
      continue;
    }
    const double numeric = (up - down) / (2 * h);
    const double err = rel_error(analytic[i], numeric);
    ++out.checked;
    if (err > out.max_rel) {
      out.max_rel = err;
      out.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic[i]) +
                  " numeric=" + std::to_string(numeric);
    }
  }
}

/// L = Σ y² / 2 and its gradient y.
inline double half_sum_squares(const Matrix& y) { return 0.5 * frobenius_norm_sq(y); }

}  // namespace fff::testing
