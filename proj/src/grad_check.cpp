#include "faultseg/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace faultseg {

namespace {

double evaluate(const ScalarFunction& f, const Tensor<double>& x) {
  Graph<double> g;
  const Var root = f(g, g.constant(x));
  const double v = g.value(root)[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

double evaluate(const MultiFunction& f, const std::vector<Tensor<double>>& xs) {
  Graph<double> g;
  std::vector<Var> leaves;
  for (const auto& x : xs) leaves.push_back(g.constant(x));
  const Var root = f(g, leaves);
  const double v = g.value(root)[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

std::vector<Tensor<double>> analytic_grads(const MultiFunction& f, const std::vector<Tensor<double>>& xs) {
  Graph<double> g;
  std::vector<Var> leaves;
  for (const auto& x : xs) leaves.push_back(g.leaf(x));
  const Var root = f(g, leaves);
  if (!std::isfinite(g.value(root)[0])) throw NumericError("grad_check: function value is not finite");
  g.backward(root);
  std::vector<Tensor<double>> out;
  for (Var v : leaves) out.push_back(g.grad(v));
  return out;
}

void update(GradCheckReport& r, std::int64_t index, double analytic, double numeric, double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  const double err = std::abs(analytic - numeric) / denom;
  if (err > r.max_rel_error || r.worst_index < 0) {
    r.max_rel_error = err;
    r.worst_index = index;
    r.analytic = analytic;
    r.numeric = numeric;
  }
}

}  // namespace

GradCheckReport grad_check_report(const MultiFunction& f, const std::vector<Tensor<double>>& points,
                                  double step, double relative_floor) {
  const auto grads = analytic_grads(f, points);
  double largest = 0.0;
  for (const auto& g : grads)
    for (double v : g.data()) largest = std::max(largest, std::abs(v));
  const double floor = std::max(1e-8, relative_floor * largest);
  GradCheckReport report;
  std::vector<Tensor<double>> probe = points;
  std::int64_t flat = 0;
  for (std::size_t t = 0; t < points.size(); ++t) {
    for (std::int64_t i = 0; i < points[t].numel(); ++i, ++flat) {
      probe[t][i] = points[t][i] + step;
      const double up = evaluate(f, probe);
      probe[t][i] = points[t][i] - step;
      const double down = evaluate(f, probe);
      probe[t][i] = points[t][i];
      update(report, flat, grads[t][i], (up - down) / (2.0 * step), floor);
    }
  }
  return report;
}

GradCheckReport directional_grad_check(const MultiFunction& f, const std::vector<Tensor<double>>& points,
                                       const std::vector<Tensor<double>>& direction, double step) {
  if (direction.size() != points.size()) throw ShapeError("direction needs one tensor per leaf");
  const auto grads = analytic_grads(f, points);
  double analytic = 0.0;
  std::vector<Tensor<double>> up = points, down = points;
  for (std::size_t t = 0; t < points.size(); ++t) {
    if (direction[t].shape() != points[t].shape()) throw ShapeError("direction shape mismatch");
    for (std::int64_t i = 0; i < points[t].numel(); ++i) {
      analytic += grads[t][i] * direction[t][i];
      up[t][i] += step * direction[t][i];
      down[t][i] -= step * direction[t][i];
    }
  }
  GradCheckReport report;
  update(report, 0, analytic, (evaluate(f, up) - evaluate(f, down)) / (2.0 * step));
  return report;
}

GradCheckReport grad_check_report(const ScalarFunction& f, const Tensor<double>& point,
                                  double step) {
  Graph<double> g;
  const Var x = g.leaf(point);
  const Var root = f(g, x);
  if (!std::isfinite(g.value(root)[0])) {
    throw NumericError("grad_check: function value is not finite");
  }
  g.backward(root);
  const Tensor<double> analytic = g.grad(x);

  GradCheckReport report;
  Tensor<double> probe = point;
  for (std::int64_t i = 0; i < point.numel(); ++i) {
    probe[i] = point[i] + step;
    const double up = evaluate(f, probe);
    probe[i] = point[i] - step;
    const double down = evaluate(f, probe);
    probe[i] = point[i];
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double err = std::abs(analytic[i] - numeric) / denom;
    if (err > report.max_rel_error || report.worst_index < 0) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.analytic = analytic[i];
      report.numeric = numeric;
    }
  }
  return report;
}

double grad_check(const ScalarFunction& f, const Tensor<double>& point, double step) {
  return grad_check_report(f, point, step).max_rel_error;
}

}  // namespace faultseg
