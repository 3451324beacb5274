#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "dgcvc/autodiff.hpp"

// Central finite-difference gradient check. build_loss must rebuild the graph
// from scratch on every call (it reads the current values of the checked
// parameters). Returns the max relative error over all coordinates of target.
inline double fd_max_rel_err(const std::function<dgcvc::ad::Var()>& build_loss, const dgcvc::ad::Var& target,
                             double step = 1e-4) {
  using namespace dgcvc;
  ad::Var loss = build_loss();
  for (auto& v : target->grad.data) v = 0.0;
  target->ensure_grad();
  target->zero_grad();
  ad::backward(loss);
  Mat analytic = target->grad;

  double max_rel = 0.0;
  for (size_t i = 0; i < target->value.size(); ++i) {
    const double orig = target->value.data[i];
    target->value.data[i] = orig + step;
    const double lp = build_loss()->value(0, 0);
    target->value.data[i] = orig - step;
    const double lm = build_loss()->value(0, 0);
    target->value.data[i] = orig;
    const double fd = (lp - lm) / (2.0 * step);
    const double an = analytic.data[i];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
    max_rel = std::max(max_rel, std::abs(fd - an) / denom);
  }
  return max_rel;
}
