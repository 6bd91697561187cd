#pragma once

// Shared builders for the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "faultseg/grad_check.hpp"
#include "faultseg/labels.hpp"
#include "faultseg/losses.hpp"
#include "faultseg/model.hpp"
#include "faultseg/random.hpp"

namespace faultseg::testing {

inline Volume random_binary(Dims dims, double p, std::uint64_t seed) {
  Rng rng(seed);
  Volume v(dims, VolumeKind::label);
  for (auto& x : v.voxels) x = uniform01(rng) < p ? 1.0f : 0.0f;
  return v;
}

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.depth = 1;
  c.base_channels = 2;
  c.aam_levels = {0};
  c.edge = 6;
  return c;
}

/// Sparse supervision for a cubic dense label, attention targets per level.
template <typename T>
LossTargets<T> make_targets(const Volume& dense, const LabelingMode& mode, const ModelConfig& c) {
  const Volume sparse = sparsify(dense, mode);
  LossTargets<T> t;
  t.labels = to_tensor<T>(sparse);
  t.weights = to_tensor<T>(lambda_weights(sparse));
  const AttentionLabel att = attention_label(sparse, c.sigma);
  for (int l : c.aam_levels) {
    const AttentionLabel a = downsample_attention(att, 1 << l);
    t.theta.push_back(to_tensor<T>(a.theta));
    t.mask.push_back(to_tensor<T>(a.mask));
  }
  return t;
}

/// Nonzero biases keep every pre-activation off the ReLU kink at exactly 0,
/// which zero biases on dead inputs otherwise hit.
inline ModelParams with_random_biases(ModelParams p, std::uint64_t seed, double scale = 0.1) {
  Rng rng(seed);
  for (auto& t : p.tensors)
    if (t.name.ends_with(".b"))
      for (auto& v : t.value.data()) v = static_cast<float>(scale * normal(rng));
  return p;
}

/// Model params in double precision, as leaf values.
inline std::vector<Tensor<double>> params_f64(const ModelParams& p) {
  std::vector<Tensor<double>> out;
  for (const auto& t : p.tensors) out.push_back(t.value.cast<double>());
  return out;
}

/// Distance of a recorded forward pass from the nondifferentiable points of
/// its ops, over differentiable nodes after the first `skip`: the smallest
/// nonzero magnitude (ReLU inputs) and the smallest gap between the two
/// largest positive values of any aligned 2x2x2 window (max-pool ties).
/// Finite differences are only meaningful when this is well above the step.
inline double kink_margin(const Graph<double>& g, std::size_t skip) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = skip; i < g.size(); ++i) {
    const Var v{static_cast<std::int32_t>(i)};
    if (!g.requires_grad(v)) continue;
    const Tensor<double>& t = g.value(v);
    for (double x : t.data())
      if (x != 0.0) m = std::min(m, std::abs(x));
    const Shape& s = t.shape();
    if (s.size() != 4 || s[1] % 2 || s[2] % 2 || s[3] % 2) continue;
    for (std::int64_t c = 0; c < s[0]; ++c)
      for (std::int64_t z = 0; z < s[1]; z += 2)
        for (std::int64_t y = 0; y < s[2]; y += 2)
          for (std::int64_t x = 0; x < s[3]; x += 2) {
            double hi = 0.0, second = 0.0;
            for (int k = 0; k < 8; ++k) {
              const double w = t[((c * s[1] + z + (k >> 2)) * s[2] + y + ((k >> 1) & 1)) * s[3] + x + (k & 1)];
              if (w > hi) second = hi, hi = w;
              else if (w > second) second = w;
            }
            if (second > 0.0 && hi > second) m = std::min(m, hi - second);
          }
  }
  return m;
}

/// Scalar-loop weighted BCE, no clamping, for p strictly inside (0, 1).
inline double reference_bce(const std::vector<double>& p, const std::vector<double>& y,
                            const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (w[i] != 0.0) s += -w[i] * (y[i] * std::log(p[i]) + (1.0 - y[i]) * std::log(1.0 - p[i]));
  return s;
}

inline double reference_smooth_l1(const std::vector<double>& a, const std::vector<double>& b,
                                  const std::vector<double>& mask) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = std::abs(a[i] - b[i]);
    if (mask[i] != 0.0) s += mask[i] * (r < 1.0 ? 0.5 * r * r : r - 0.5);
  }
  return s;
}

/// Random sparse-label BCE check point: probabilities in [0.02, 0.98].
struct BceTrial {
  Tensor<double> prob, labels, weights;
};

inline BceTrial make_bce_trial(std::uint64_t seed, Dims dims = {6, 6, 6}) {
  Rng rng(seed);
  const Volume dense = random_binary(dims, 0.3, seed + 1);
  const Volume sparse = sparsify(dense, seed % 2 ? parse_mode(std::string(1, char('A' + seed % 8))) : mode_all());
  BceTrial t;
  t.labels = to_tensor<double>(sparse);
  t.weights = to_tensor<double>(lambda_weights(sparse));
  t.prob = Tensor<double>(t.labels.shape());
  for (auto& v : t.prob.data()) v = uniform(rng, 0.02, 0.98);
  return t;
}

/// Random attention check point: residuals spread over both smooth-L1 branches.
struct SmoothL1Trial {
  Tensor<double> theta_hat, theta, mask;
};

inline SmoothL1Trial make_smooth_l1_trial(std::uint64_t seed, Shape shape = {1, 4, 5, 6}) {
  Rng rng(seed);
  SmoothL1Trial t{Tensor<double>(shape), Tensor<double>(shape), Tensor<double>(shape)};
  for (std::int64_t i = 0; i < t.theta.numel(); ++i) {
    t.theta[i] = uniform01(rng);
    double r;
    do r = uniform(rng, -2.5, 2.5);
    while (std::abs(std::abs(r) - 1.0) < 0.05);
    t.theta_hat[i] = t.theta[i] + r;
    t.mask[i] = uniform01(rng) < 0.6 ? 1.0 : 0.0;
  }
  return t;
}

inline constexpr double kNetGradStep = 2e-5;
inline constexpr double kNetGradFloor = 1e-4;

/// One randomized full-loss gradient check point for the tiny network.
struct NetGradTrial {
  ModelConfig config;
  std::vector<Tensor<double>> params;
  Tensor<double> x;
  LossTargets<double> targets;
  int redraws = 0;

  MultiFunction loss() const {
    return [this](Graph<double>& g, std::span<const Var> leaves) {
      const ForwardVars f = forward(g, config, leaves, g.constant(x));
      return total_loss(g, f, g.constant(targets.labels), targets, 1.0).total;
    };
  }
};

/// Labels and mode come from `trial`; parameters and input are redrawn until
/// the point sits at least 10 steps from every kink and no probability is
/// within 1e-3 of 0 or 1, where log(1 - p) loses most of its digits.
inline NetGradTrial make_net_grad_trial(std::uint64_t trial) {
  NetGradTrial t;
  t.config = tiny_config();
  const Volume dense = random_binary({6, 6, 6}, 0.2, 200 + trial);
  t.targets = make_targets<double>(dense, trial % 2 ? parse_mode("B") : mode_all(), t.config);
  t.x = Tensor<double>({1, 6, 6, 6});
  for (std::uint64_t draw = 0;; ++draw, ++t.redraws) {
    const std::uint64_t seed = splitmix64(trial * 7919 + draw);
    t.params = params_f64(with_random_biases(init_params(t.config, seed), seed + 1));
    Rng rng(seed + 2);
    for (auto& v : t.x.data()) v = normal(rng);
    Graph<double> g;
    std::vector<Var> leaves;
    for (const auto& q : t.params) leaves.push_back(g.leaf(q));
    const ForwardVars f = forward(g, t.config, leaves, g.constant(t.x));
    total_loss(g, f, g.constant(t.targets.labels), t.targets, 1.0);
    const auto& p = g.value(f.prob).data();
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    if (kink_margin(g, leaves.size()) > 10 * kNetGradStep && *lo > 1e-3 && *hi < 1 - 1e-3) return t;
  }
}

}  // namespace faultseg::testing
