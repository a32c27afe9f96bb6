#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "fedet/tensor.hpp"

namespace fedet {

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t worst_param = 0;   // index into the params span
  int64_t worst_entry = 0;  // flat index within that tensor
};

// Central-difference audit of the reverse pass. `f` must be a deterministic
// function of the params (rebuilt graph per call). Relative error per entry:
//   |analytic - central| / max(1, |central|)
// Non-finite intermediate values are rejected, naming the offending entry.
inline GradCheckReport grad_check(const std::function<Tensor()>& f,
                                  std::span<Tensor> params, double step) {
  FEDET_CHECK(step > 0.0, "grad_check: step must be positive, got " << step);

  for (auto& p : params) p.zero_grad();
  Tensor loss = f();
  FEDET_CHECK(loss.numel() == 1, "grad_check: f() must return a scalar");
  FEDET_CHECK(std::isfinite(loss.value()), "grad_check: non-finite loss value");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params)
    analytic.push_back(p.has_grad() ? p.grad()
                                    : std::vector<double>(p.data().size(), 0.0));

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    for (int64_t i = 0; i < p.numel(); ++i) {
      p.perturb(i, step);
      double f_plus = f().value();
      p.perturb(i, -2.0 * step);
      double f_minus = f().value();
      p.perturb(i, step);
      FEDET_CHECK(std::isfinite(f_plus) && std::isfinite(f_minus),
                  "grad_check: non-finite value at param " << pi << " entry " << i);
      double central = (f_plus - f_minus) / (2.0 * step);
      double a = analytic[pi][static_cast<size_t>(i)];
      double rel = std::abs(a - central) / std::max(1.0, std::abs(central));
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = pi;
        report.worst_entry = i;
      }
    }
  }
  return report;
}

}  // namespace fedet
