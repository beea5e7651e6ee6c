#pragma once

// Central finite-difference oracle used to verify analytic gradients.
// Independent of the reverse-mode path: it only re-evaluates the forward
// closure at perturbed parameter values.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "tonguerx/rng.hpp"
#include "tonguerx/tensor.hpp"

namespace gradcheck {

struct Report {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst;  // where the max was observed
};

// Relative error with a floor so finite-difference noise on near-zero
// gradients does not register as disagreement.
inline double rel_err(double analytic, double numeric) {
  const double denom =
      std::max(std::max(std::fabs(analytic), std::fabs(numeric)), 1e-3);
  return std::fabs(analytic - numeric) / denom;
}

// Checks d(loss)/d(param[i]) for up to `coords` sampled coordinates of one
// tensor. `eval` must recompute the scalar loss from scratch (same seeds,
// same masks) with the current contents of `param`.
inline void check_tensor(tonguerx::Tensor& param, const tonguerx::Tensor& analytic,
                         const std::function<double()>& eval, std::size_t coords,
                         tonguerx::Rng& rng, double h, Report& report,
                         const std::string& name) {
  const std::size_t n = param.size();
  std::vector<std::size_t> picks;
  if (n <= coords) {
    picks.resize(n);
    for (std::size_t i = 0; i < n; ++i) picks[i] = i;
  } else {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    rng.shuffle(all);
    picks.assign(all.begin(), all.begin() + coords);
  }
  for (std::size_t i : picks) {
    const double saved = param[i];
    param[i] = saved + h;
    const double up = eval();
    param[i] = saved - h;
    const double down = eval();
    param[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = rel_err(analytic[i], numeric);
    ++report.checked;
    if (err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst = name + "[" + std::to_string(i) + "] analytic=" +
                     std::to_string(analytic[i]) + " fd=" + std::to_string(numeric);
    }
  }
}

}  // namespace gradcheck
