// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/grad_check.hpp"

#include <cmath>
#include <random>

#include "mvtf/ops.hpp"

namespace mvtf {
namespace {

VarXd readout(const VarXd& out) {
  if (out.size() == 1) return out;
  std::mt19937_64 rng(0x5eedULL + out.size());
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  TensorXd weights(out.shape());
  for (double& w : weights.values()) w = dist(rng);
  return sum_all(mul(out, VarXd::constant(std::move(weights))));
}

double evaluate(const DifferentiableFn& op, const std::vector<TensorXd>& inputs) {
  NoGradGuard guard;
  std::vector<VarXd> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(VarXd::constant(t));
  const double value = readout(op(vars)).value()[0];
  if (!std::isfinite(value)) throw NumericalError("grad_check: non-finite forward value");
  return value;
}

}  // namespace

GradCheckReport grad_check(const std::string& op_name, const DifferentiableFn& op,
                           const std::vector<TensorXd>& inputs, double eps) {
  GradCheckReport report;
  report.op_name = op_name;
  for (const auto& t : inputs) report.tested_shapes.push_back(t.shape());

  std::vector<VarXd> vars;
  for (const auto& t : inputs) vars.push_back(VarXd::parameter(t));
  VarXd out = readout(op(vars));
  if (!std::isfinite(out.value()[0])) throw NumericalError("grad_check: non-finite forward value");
  out.backward();

  std::vector<TensorXd> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const TensorXd analytic = vars[i].grad();
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double original = probe[i][j];
      probe[i][j] = original + eps;
      const double plus = evaluate(op, probe);
      probe[i][j] = original - eps;
      const double minus = evaluate(op, probe);
      probe[i][j] = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[j] - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = i;
        report.worst_element = j;
      }
    }
  }
  return report;
}

}  // namespace mvtf
