#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "faultseg/labels.hpp"
#include "faultseg/losses.hpp"

namespace faultseg {

namespace {

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape " + shape_str(a) + " vs " + shape_str(b));
}

void require_same(const Dims& a, const Dims& b, const char* what) {
  if (!(a == b))
    throw ShapeError(std::string(what) + ": dims " + std::to_string(a.d) + "x" + std::to_string(a.h) +
                     "x" + std::to_string(a.w) + " vs " + std::to_string(b.d) + "x" +
                     std::to_string(b.h) + "x" + std::to_string(b.w));
}

std::vector<bool> positives(const Volume& v) {
  std::vector<bool> s(v.voxels.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = v.voxels[i] != 0.0f;
  return s;
}

// max over a's sites of the distance to the nearest site of b
double directed(const std::vector<bool>& a, const std::vector<bool>& b, const Dims& dims) {
  const auto d2 = squared_distance_3d(b, dims);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i]) worst = std::max(worst, d2[i]);
  return std::sqrt(worst);
}

}  // namespace

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

template <typename T>
Var lambda_bce(Graph<T>& g, Var prob, Var labels, const Tensor<T>& weights) {
  const Tensor<T>& p = g.value(prob);
  const Tensor<T>& y = g.value(labels);
  require_same(p.shape(), y.shape(), "lambda_bce labels");
  require_same(p.shape(), weights.shape(), "lambda_bce weights");
  const T lo = static_cast<T>(kProbabilityClamp), hi = T{1} - lo;
  double loss = 0.0;
  for (std::int64_t i = 0; i < p.numel(); ++i) {
    const T w = weights[i];
    if (w == T{0}) continue;
    const T pc = std::clamp(p[i], lo, hi);
    loss -= double(w) * (double(y[i]) * std::log(double(pc)) + (1.0 - double(y[i])) * std::log(1.0 - double(pc)));
  }
  return g.record(Tensor<T>({1}, static_cast<T>(loss)), {prob, labels},
                  [prob, labels, weights, lo, hi](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& gout) {
                    const Tensor<T>& pv = gr.value(prob);
                    const Tensor<T>& yv = gr.value(labels);
                    const T s = gout[0];
                    if (gr.requires_grad(prob)) {
                      Tensor<T>& gp = gr.grad_of(prob);
                      for (std::int64_t i = 0; i < pv.numel(); ++i) {
                        const T w = weights[i];
                        if (w == T{0} || pv[i] < lo || pv[i] > hi) continue;
                        gp[i] += s * w * (-yv[i] / pv[i] + (T{1} - yv[i]) / (T{1} - pv[i]));
                      }
                    }
                    if (gr.requires_grad(labels)) {
                      Tensor<T>& gy = gr.grad_of(labels);
                      for (std::int64_t i = 0; i < pv.numel(); ++i) {
                        const T w = weights[i];
                        if (w == T{0}) continue;
                        const T pc = std::clamp(pv[i], lo, hi);
                        gy[i] -= s * w * (std::log(pc) - std::log(T{1} - pc));
                      }
                    }
                  });
}

template <typename T>
Var lambda_smooth_l1(Graph<T>& g, Var theta_hat, const Tensor<T>& theta, const Tensor<T>& mask) {
  const Tensor<T>& th = g.value(theta_hat);
  require_same(th.shape(), theta.shape(), "lambda_smooth_l1 target");
  require_same(th.shape(), mask.shape(), "lambda_smooth_l1 mask");
  double loss = 0.0;
  for (std::int64_t i = 0; i < th.numel(); ++i) {
    if (mask[i] == T{0}) continue;
    loss += double(mask[i]) * smooth_l1(double(th[i]) - double(theta[i]));
  }
  return g.record(Tensor<T>({1}, static_cast<T>(loss)), {theta_hat},
                  [theta_hat, theta, mask](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& gout) {
                    const Tensor<T>& tv = gr.value(theta_hat);
                    Tensor<T>& gt = gr.grad_of(theta_hat);
                    for (std::int64_t i = 0; i < tv.numel(); ++i) {
                      if (mask[i] == T{0}) continue;
                      const T r = tv[i] - theta[i];
                      const T d = std::abs(r) < T{1} ? r : (r > T{0} ? T{1} : T{-1});
                      gt[i] += gout[0] * mask[i] * d;
                    }
                  });
}

double LossBreakdown::attention_sum() const {
  double s = 0.0;
  for (double a : attention) s += a;
  return s;
}

template <typename T>
LossVars total_loss(Graph<T>& g, const ForwardVars& f, Var labels, const LossTargets<T>& t, T alpha) {
  if (t.theta.size() != f.theta_hats.size() || t.mask.size() != f.theta_hats.size())
    throw ShapeError("attention targets: " + std::to_string(t.theta.size()) + " levels for " +
                     std::to_string(f.theta_hats.size()) + " attention heads");
  LossVars v;
  v.seg = lambda_bce(g, f.prob, labels, t.weights);
  v.total = v.seg;
  if (!f.theta_hats.empty()) {
    Var sum;
    for (std::size_t i = 0; i < f.theta_hats.size(); ++i) {
      const Var a = lambda_smooth_l1(g, f.theta_hats[i], t.theta[i], t.mask[i]);
      v.attention.push_back(a);
      sum = i == 0 ? a : add(g, sum, a);
    }
    v.total = add(g, v.seg, scale(g, sum, alpha));
  }
  return v;
}

template <typename T>
LossBreakdown read_breakdown(const Graph<T>& g, const LossVars& v, double alpha) {
  LossBreakdown b;
  b.total = double(g.value(v.total)[0]);
  b.seg = double(g.value(v.seg)[0]);
  for (Var a : v.attention) b.attention.push_back(double(g.value(a)[0]));
  b.alpha = alpha;
  return b;
}

#define FAULTSEG_INSTANTIATE_LOSSES(T)                                                          \
  template Var lambda_bce(Graph<T>&, Var, Var, const Tensor<T>&);                               \
  template Var lambda_smooth_l1(Graph<T>&, Var, const Tensor<T>&, const Tensor<T>&);            \
  template LossVars total_loss(Graph<T>&, const ForwardVars&, Var, const LossTargets<T>&, T);   \
  template LossBreakdown read_breakdown(const Graph<T>&, const LossVars&, double);

FAULTSEG_INSTANTIATE_LOSSES(float)
FAULTSEG_INSTANTIATE_LOSSES(double)

void fill_area_metrics(MetricReport& r) {
  if (r.tp + r.fp + r.fn == 0) {
    r.precision = r.recall = r.iou = r.dice = 1.0;
    return;
  }
  const auto ratio = [](std::int64_t a, std::int64_t b) { return b == 0 ? 0.0 : double(a) / double(b); };
  r.precision = ratio(r.tp, r.tp + r.fp);
  r.recall = ratio(r.tp, r.tp + r.fn);
  r.iou = ratio(r.tp, r.tp + r.fp + r.fn);
  r.dice = ratio(2 * r.tp, 2 * r.tp + r.fp + r.fn);
}

Volume threshold_volume(const Volume& prob, double threshold) {
  Volume out(prob.dims, VolumeKind::label);
  for (std::size_t i = 0; i < out.voxels.size(); ++i) out.voxels[i] = prob.voxels[i] > threshold ? 1.0f : 0.0f;
  return out;
}

MetricReport evaluate(const Volume& prob, const Volume& truth, double threshold) {
  require_same(prob.dims, truth.dims, "evaluate");
  MetricReport r;
  std::vector<bool> pred(prob.voxels.size()), gt(prob.voxels.size());
  for (std::size_t i = 0; i < prob.voxels.size(); ++i) {
    const float t = truth.voxels[i];
    if (t != 0.0f && t != 1.0f) throw DataError("evaluate needs a binary truth volume");
    pred[i] = prob.voxels[i] > threshold;
    gt[i] = t == 1.0f;
    if (pred[i] && gt[i]) ++r.tp;
    else if (pred[i]) ++r.fp;
    else if (gt[i]) ++r.fn;
    else ++r.tn;
  }
  fill_area_metrics(r);
  if (r.tp + r.fp > 0 && r.tp + r.fn > 0)
    r.hausdorff = std::max(directed(pred, gt, prob.dims), directed(gt, pred, prob.dims));
  return r;
}

std::optional<double> hausdorff(const Volume& a, const Volume& b) {
  require_same(a.dims, b.dims, "hausdorff");
  const auto sa = positives(a), sb = positives(b);
  if (std::find(sa.begin(), sa.end(), true) == sa.end() || std::find(sb.begin(), sb.end(), true) == sb.end())
    return std::nullopt;
  return std::max(directed(sa, sb, a.dims), directed(sb, sa, a.dims));
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "tp=" << tp << "\nfp=" << fp << "\nfn=" << fn << "\ntn=" << tn << "\nprecision=" << num(precision)
      << "\nrecall=" << num(recall) << "\niou=" << num(iou) << "\ndice=" << num(dice)
      << "\nhausdorff=" << (hausdorff ? num(*hausdorff) : std::string("undefined")) << '\n';
  return out.str();
}

MetricReport MetricReport::from_text(const std::string& text) {
  MetricReport r;
  std::istringstream in(text);
  std::string line;
  int seen = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("metric line without '=': " + line);
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    try {
      if (k == "tp") r.tp = std::stoll(v);
      else if (k == "fp") r.fp = std::stoll(v);
      else if (k == "fn") r.fn = std::stoll(v);
      else if (k == "tn") r.tn = std::stoll(v);
      else if (k == "precision") r.precision = std::stod(v);
      else if (k == "recall") r.recall = std::stod(v);
      else if (k == "iou") r.iou = std::stod(v);
      else if (k == "dice") r.dice = std::stod(v);
      else if (k == "hausdorff") {
        if (v == "undefined") r.hausdorff.reset();
        else r.hausdorff = std::stod(v);
      } else {
        throw DataError("unknown metric key " + k);
      }
    } catch (const std::logic_error&) {
      throw DataError("bad metric value " + line);
    }
    ++seen;
  }
  if (seen != 9) throw DataError("metric report needs 9 keys, got " + std::to_string(seen));
  return r;
}

}  // namespace faultseg
