#include "quad/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "quad/errors.hpp"

namespace quad {

double GradCheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const auto& r : inputs) worst = std::max(worst, r.max_relative_error);
  return worst;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           GradCheckOptions options) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = f();
  if (out.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  backward(out);

  GradCheckReport report;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    auto& t = inputs[which];
    const auto analytic = t.grad();
    InputGradReport r;
    r.input = which;
    auto values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + options.step;
        plus = f().item();
        values[i] = saved - options.step;
        minus = f().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
        r.finite = false;
        r.worst_index = i;
        report.passed = false;
        report.failure = "non-finite gradient at input " + std::to_string(which) + " index " +
                         std::to_string(i);
        break;
      }
      const double denom =
          std::max({std::abs(numeric), std::abs(analytic[i]), options.min_scale});
      const double rel = std::abs(numeric - analytic[i]) / denom;
      if (rel > r.max_relative_error) {
        r.max_relative_error = rel;
        r.worst_index = i;
      }
    }
    if (r.finite && r.max_relative_error > options.tolerance) {
      report.passed = false;
      if (report.failure.empty()) {
        report.failure = "input " + std::to_string(which) + " index " +
                         std::to_string(r.worst_index) + " relative error " +
                         std::to_string(r.max_relative_error);
      }
    }
    report.inputs.push_back(r);
  }
  return report;
}

}  // namespace quad
