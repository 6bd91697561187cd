#pragma once

#include <functional>
#include <span>
#include <vector>

#include "faultseg/autodiff.hpp"

namespace faultseg {

/// Builds a scalar-valued function of `x` on a fresh graph and returns its node.
using ScalarFunction = std::function<Var(Graph<double>& g, Var x)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::int64_t worst_index = -1;  ///< component with the largest error
  double analytic = 0.0;          ///< values at worst_index
  double numeric = 0.0;
};

/// Compares the reverse-mode gradient of f at `point` with central differences
/// (f(x+h) - f(x-h)) / 2h, componentwise. Relative error per component uses the
/// denominator max(|analytic|, |numeric|, 1e-8). Throws NumericError if f is
/// non-finite at any evaluated point.
GradCheckReport grad_check_report(const ScalarFunction& f, const Tensor<double>& point, double step);

/// Worst relative error of grad_check_report().
double grad_check(const ScalarFunction& f, const Tensor<double>& point, double step);

/// Scalar function of several leaves (e.g. every parameter tensor of a model).
using MultiFunction = std::function<Var(Graph<double>& g, std::span<const Var> leaves)>;

/// Componentwise check over every entry of every leaf; worst_index counts
/// entries across the leaves in order. The error denominator is
/// max(|analytic|, |numeric|, relative_floor * max_j |analytic_j|, 1e-8), so
/// entries far below the gradient's scale, where the difference quotient
/// carries only roundoff, are judged against that scale.
GradCheckReport grad_check_report(const MultiFunction& f, const std::vector<Tensor<double>>& points,
                                  double step, double relative_floor = 0.0);

/// Directional check: compares <grad, v> with (f(x + h v) - f(x - h v)) / 2h
/// for a direction v over all leaves, relative error against
/// max(|analytic|, |numeric|, 1e-8).
GradCheckReport directional_grad_check(const MultiFunction& f, const std::vector<Tensor<double>>& points,
                                       const std::vector<Tensor<double>>& direction, double step);

}  // namespace faultseg
