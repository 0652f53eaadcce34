#pragma once

#include <functional>
#include <vector>

#include "urbanpulse/numerics/tensor.hpp"

namespace urbanpulse::num {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
  std::size_t checked = 0;
};

// Compares the analytic gradient of `f` w.r.t. `param` against central
// differences. Error per entry is |analytic - fd| / max(1e-8, |analytic|).
// `entries` restricts the check to a subset of flat indices (all when empty).
inline GradCheckReport grad_check(const std::function<Tensor()>& f, Tensor param, double h, double tolerance,
                                  const std::vector<std::size_t>& entries = {}) {
  const bool had = param.requires_grad();
  param.set_requires_grad(true);
  param.zero_grad();
  {
    Tensor loss = f();
    backward(loss);
  }
  std::vector<double> analytic(param.numel(), 0.0);
  if (param.has_grad()) analytic.assign(param.grad().begin(), param.grad().end());
  param.zero_grad();

  std::vector<std::size_t> idx = entries;
  if (idx.empty()) {
    idx.resize(param.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  auto vals = param.mutable_values();
  for (std::size_t i : idx) {
    const double orig = vals[i];
    vals[i] = orig + h;
    const double fp = f().item();
    vals[i] = orig - h;
    const double fm = f().item();
    vals[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double err = std::fabs(analytic[i] - fd) / std::max(1e-8, std::fabs(analytic[i]));
    if (report.checked == 0 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
    }
    ++report.checked;
  }
  report.passed = report.max_rel_error <= tolerance;
  param.set_requires_grad(had);
  return report;
}

}  // namespace urbanpulse::num
