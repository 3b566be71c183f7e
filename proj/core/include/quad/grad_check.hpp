#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "quad/tensor.hpp"

namespace quad {

struct InputGradReport {
  std::size_t input = 0;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  bool finite = true;
};

struct GradCheckReport {
  bool passed = true;
  std::vector<InputGradReport> inputs;
  std::string failure;

  double max_relative_error() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Denominator floor of the relative error, so that gradients that are
  // zero up to round-off compare by absolute difference.
  double min_scale = 1e-5;
};

// Compares analytic gradients of the scalar returned by `f` against central
// differences, perturbing every element of every tensor in `inputs`. `f`
// must rebuild its graph from the current input values on every call.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           GradCheckOptions options = {});

}  // namespace quad
