// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mvtf/autodiff.hpp"

namespace mvtf {

struct GradCheckReport {
  std::string op_name;
  double max_rel_error = 0.0;
  std::vector<Shape> tested_shapes;
  std::size_t worst_input = 0;    // where max_rel_error was seen
  std::size_t worst_element = 0;
};

using DifferentiableFn = std::function<VarXd(const std::vector<VarXd>&)>;

/// Compares reverse-mode gradients with central differences
/// (f(x+eps) - f(x-eps)) / (2 eps) for every element of every input.
/// Non-scalar outputs are reduced by a fixed random linear readout.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
/// Throws NumericalError on a non-finite forward value.
GradCheckReport grad_check(const std::string& op_name, const DifferentiableFn& op,
                           const std::vector<TensorXd>& inputs, double eps = 1e-5);

}  // namespace mvtf
