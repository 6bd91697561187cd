#pragma once

#include <optional>
#include <string>
#include <vector>

#include "faultseg/autodiff.hpp"
#include "faultseg/model.hpp"
#include "faultseg/volume.hpp"

namespace faultseg {

inline constexpr double kProbabilityClamp = 1e-7;

/// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
double smooth_l1(double x);

/// -sum_i w_i [y_i log p_i + (1 - y_i) log(1 - p_i)] with p clamped to
/// [1e-7, 1 - 1e-7]. Voxels with w_i = 0 are skipped, so their label and
/// probability receive exactly zero gradient. labels may require a gradient.
template <typename T>
Var lambda_bce(Graph<T>& g, Var prob, Var labels, const Tensor<T>& weights);

/// sum_i mask_i smooth_l1(theta_hat_i - theta_i).
template <typename T>
Var lambda_smooth_l1(Graph<T>& g, Var theta_hat, const Tensor<T>& theta, const Tensor<T>& mask);

/// Per-sample supervision, each tensor shaped (1, D, H, W) at its level.
template <typename T>
struct LossTargets {
  Tensor<T> labels;   ///< sparse {-1, 0, 1}
  Tensor<T> weights;  ///< lambda
  std::vector<Tensor<T>> theta, mask;  ///< one per AAM level, ascending
};

struct LossBreakdown {
  double total = 0.0;
  double seg = 0.0;
  std::vector<double> attention;
  double alpha = 1.0;

  double attention_sum() const;
};

struct LossVars {
  Var total, seg;
  std::vector<Var> attention;
};

/// total = seg + alpha * (att_0 + att_1 + ...), summed in that order.
template <typename T>
LossVars total_loss(Graph<T>& g, const ForwardVars& f, Var labels, const LossTargets<T>& t, T alpha);

template <typename T>
LossBreakdown read_breakdown(const Graph<T>& g, const LossVars& v, double alpha);

struct MetricReport {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0, recall = 0.0, iou = 0.0, dice = 0.0;
  std::optional<double> hausdorff;  ///< undefined when either set is empty

  std::string to_text() const;  ///< flat key=value lines
  static MetricReport from_text(const std::string& text);
};

/// Confusion counts with prediction = P > threshold and truth = label == 1.
MetricReport evaluate(const Volume& prob, const Volume& truth, double threshold = 0.5);

/// Area metrics from counts. With no positives in prediction or truth all
/// four are 1.
void fill_area_metrics(MetricReport& r);

/// Exact symmetric Hausdorff distance between the nonzero voxels of a and b,
/// in voxel units; nullopt if either set is empty.
std::optional<double> hausdorff(const Volume& a, const Volume& b);

/// Binary mask of P > threshold, as a label volume.
Volume threshold_volume(const Volume& prob, double threshold = 0.5);

}  // namespace faultseg
