#pragma once

#include <functional>
#include <vector>

#include "phytrack/autodiff.hpp"

// Central finite-difference gradient check. build() must construct a fresh
// graph from the given parameter Vars and return a scalar loss Var.
// Returns the worst relative error over all checked entries.
struct FdReport {
  double worst_rel = 0.0;
  double worst_abs = 0.0;
};

inline FdReport fd_check(std::vector<phytrack::Var> params,
                         const std::function<phytrack::Var()>& build,
                         double step = 1e-4, int max_per_param = -1) {
  using namespace phytrack;
  for (auto& p : params) p->grad = Tensor();
  Var loss = build();
  backward(loss);

  FdReport rep;
  for (auto& p : params) {
    Tensor analytic = p->grad.size() ? p->grad : Tensor(p->val.shape());
    const std::size_t n = p->val.size();
    const std::size_t stride =
        (max_per_param > 0 && n > static_cast<std::size_t>(max_per_param))
            ? n / max_per_param
            : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = p->val[i];
      p->val[i] = orig + step;
      const double lp = build()->val[0];
      p->val[i] = orig - step;
      const double lm = build()->val[0];
      p->val[i] = orig;
      const double fd = (lp - lm) / (2.0 * step);
      const double a = analytic[i];
      const double abs_err = std::abs(fd - a);
      const double rel = abs_err / std::max({std::abs(fd), std::abs(a), 1e-6});
      rep.worst_abs = std::max(rep.worst_abs, abs_err);
      rep.worst_rel = std::max(rep.worst_rel, rel);
    }
  }
  return rep;
}
