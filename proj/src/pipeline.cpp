#include "faultseg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace faultseg {

namespace {

Volume crop(const Volume& v, const std::array<std::int64_t, 3>& o, std::int64_t edge) {
  Volume out({edge, edge, edge}, v.kind);
  for (std::int64_t z = 0; z < edge; ++z)
    for (std::int64_t y = 0; y < edge; ++y) {
      const float* src = &v.voxels[static_cast<std::size_t>(v.index(o[0] + z, o[1] + y, o[2]))];
      std::copy(src, src + edge, &out.voxels[static_cast<std::size_t>(out.index(z, y, 0))]);
    }
  return out;
}

void require_fits(const Dims& dims, std::int64_t edge, const char* what) {
  if (edge < 1) throw ConfigError(std::string(what) + ": edge must be positive");
  for (int a = 0; a < 3; ++a)
    if (dims[a] < edge)
      throw ShapeError(std::string(what) + ": axis " + std::to_string(a) + " has " + std::to_string(dims[a]) +
                       " voxels, smaller than the edge " + std::to_string(edge));
}

LossTargets<float> targets_of(const CuboidSample& s) {
  LossTargets<float> t;
  t.labels = to_tensor<float>(s.sparse);
  t.weights = to_tensor<float>(s.weights);
  for (const auto& a : s.attention) {
    t.theta.push_back(to_tensor<float>(a.theta));
    t.mask.push_back(to_tensor<float>(a.mask));
  }
  return t;
}

std::string format_line(const LogLine& l, bool timed) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "step=%lld loss=%.9g seg=%.9g att=%.9g val=%.9g", static_cast<long long>(l.step),
                l.loss, l.seg, l.att, l.val);
  std::string s(buf);
  if (timed) {
    std::snprintf(buf, sizeof buf, " t=%.3f", l.seconds);
    s += buf;
  }
  return s;
}

}  // namespace

std::vector<std::int64_t> window_origins(std::int64_t length, std::int64_t edge, std::int64_t stride) {
  if (stride < 1) throw ConfigError("stride must be positive");
  if (length < edge) throw ShapeError("window longer than the axis");
  std::vector<std::int64_t> o;
  for (std::int64_t s = 0; s + edge < length; s += stride) o.push_back(s);
  if (o.empty() || o.back() != length - edge) o.push_back(length - edge);
  return o;
}

CuboidSample make_sample(const Volume& amplitude, const Volume& dense, const LabelingMode& mode,
                         const ModelConfig& model) {
  if (!(amplitude.dims == dense.dims)) throw ShapeError("amplitude and label dims differ");
  CuboidSample s;
  s.input = standardize(amplitude);
  s.dense = dense;
  s.dense.kind = VolumeKind::label;
  s.sparse = sparsify(dense, mode);
  s.weights = lambda_weights(s.sparse);
  if (!model.aam_levels.empty()) {
    const AttentionLabel att = attention_label(s.sparse, model.sigma);
    for (int l : model.aam_levels) s.attention.push_back(downsample_attention(att, 1 << l));
  }
  return s;
}

std::vector<CuboidSample> extract_samples(const Volume& amplitude, const Volume& dense,
                                          const SampleOptions& opt, const ModelConfig& model,
                                          const std::string& source) {
  if (!(amplitude.dims == dense.dims)) throw ShapeError("amplitude and label dims differ");
  require_fits(amplitude.dims, opt.edge, "extract_samples");
  std::array<std::vector<std::int64_t>, 3> origins;
  for (int a = 0; a < 3; ++a) origins[a] = window_origins(amplitude.dims[a], opt.edge, opt.stride);
  std::vector<CuboidSample> out;
  for (std::int64_t z : origins[0])
    for (std::int64_t y : origins[1])
      for (std::int64_t x : origins[2]) {
        const std::array<std::int64_t, 3> o{z, y, x};
        const Volume lbl = crop(dense, o, opt.edge);
        const Volume sparse = sparsify(lbl, opt.mode);
        if (count_labels(sparse).positives < opt.min_fault_voxels) continue;
        CuboidSample s = make_sample(crop(amplitude, o, opt.edge), lbl, opt.mode, model);
        s.origin = o;
        s.source = source;
        out.push_back(std::move(s));
      }
  return out;
}

std::vector<CuboidSample> load_split(const std::filesystem::path& corpus_dir, const Manifest& manifest,
                                     bool train, const SampleOptions& opt, const ModelConfig& model) {
  std::vector<CuboidSample> out;
  for (const ManifestEntry* e : manifest.split(train)) {
    const Volume amp = load_volume(amplitude_path(corpus_dir, *e));
    const Volume lbl = load_volume(label_path(corpus_dir, *e));
    auto s = extract_samples(amp, lbl, opt, model, e->stem);
    std::move(s.begin(), s.end(), std::back_inserter(out));
  }
  return out;
}

CuboidSample rotate_sample(const CuboidSample& s, const CubeRotation& r) {
  if (!s.input.dims.cubic()) throw ShapeError("rotation needs a cubic sample");
  CuboidSample out;
  out.input = rotate(s.input, r);
  out.dense = rotate(s.dense, r);
  out.sparse = rotate(s.sparse, r);
  out.weights = rotate(s.weights, r);
  for (const auto& a : s.attention) out.attention.push_back({rotate(a.theta, r), rotate(a.mask, r)});
  out.origin = s.origin;
  out.source = s.source;
  return out;
}

CuboidSample random_rotation(const CuboidSample& s, Rng& rng) {
  return rotate_sample(s, cube_rotations()[static_cast<std::size_t>(uniform_int(rng, 0, kRotationCount - 1))]);
}

Adam::Adam(const AdamConfig& cfg, const ModelParams& p) : cfg_(cfg) {
  for (const auto& t : p.tensors) {
    m_.emplace_back(t.value.shape());
    v_.emplace_back(t.value.shape());
  }
}

void Adam::step(ModelParams& p, const std::vector<Tensor<float>>& grads) {
  if (grads.size() != p.tensors.size() || m_.size() != p.tensors.size())
    throw ShapeError("adam: gradient count does not match the parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  const float b1 = float(cfg_.beta1), b2 = float(cfg_.beta2);
  const float step = float(cfg_.lr / c1), corr = float(1.0 / std::sqrt(c2)), eps = float(cfg_.eps);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    Tensor<float>& w = p.tensors[k].value;
    if (grads[k].shape() != w.shape()) throw ShapeError("adam: gradient shape mismatch for " + p.tensors[k].name);
    float* m = m_[k].ptr();
    float* v = v_[k].ptr();
    const float* g = grads[k].ptr();
    float* x = w.ptr();
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      x[i] -= step * m[i] / (std::sqrt(v[i]) * corr + eps);
    }
  }
}

void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.val_every < 1) throw ConfigError("val_every must be >= 1");
  if (!(c.adam.lr >= 0.0) || !std::isfinite(c.adam.lr)) throw ConfigError("lr must be finite and >= 0");
  if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0) || !(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(c.adam.eps > 0.0)) throw ConfigError("adam eps must be positive");
  if (!(c.alpha >= 0.0) || !std::isfinite(c.alpha)) throw ConfigError("alpha must be finite and >= 0");
  if (c.max_steps < 0) throw ConfigError("max_steps must be >= 0");
}

std::string LogLine::to_text() const { return format_line(*this, true); }
std::string LogLine::to_text_untimed() const { return format_line(*this, false); }

LossBreakdown sample_loss(const ModelParams& p, const CuboidSample& s, double alpha) {
  Graph<float> g;
  const auto vars = bind_params(g, p, false);
  const ForwardVars f = forward(g, p.config, vars, g.constant(to_tensor<float>(s.input)));
  const LossTargets<float> t = targets_of(s);
  const LossVars l = total_loss(g, f, g.constant(t.labels), t, float(alpha));
  return read_breakdown(g, l, alpha);
}

double validation_loss(const ModelParams& p, const std::vector<CuboidSample>& samples) {
  if (samples.empty()) throw ConfigError("validation set is empty");
  double sum = 0.0;
  for (const auto& s : samples) {
    Graph<float> g;
    const auto vars = bind_params(g, p, false);
    const ForwardVars f = forward(g, p.config, vars, g.constant(to_tensor<float>(s.input)));
    sum += double(g.value(lambda_bce(g, f.prob, g.constant(to_tensor<float>(s.sparse)),
                                     to_tensor<float>(s.weights)))[0]);
  }
  return sum / double(samples.size());
}

MetricReport evaluate_samples(const ModelParams& p, const std::vector<CuboidSample>& samples) {
  MetricReport pooled;
  double hd = 0.0;
  int defined = 0;
  for (const auto& s : samples) {
    const MetricReport r = evaluate(predict(p, s.input), s.dense);
    pooled.tp += r.tp, pooled.fp += r.fp, pooled.fn += r.fn, pooled.tn += r.tn;
    if (r.hausdorff) hd += *r.hausdorff, ++defined;
  }
  fill_area_metrics(pooled);
  if (defined) pooled.hausdorff = hd / defined;
  return pooled;
}

TrainResult train(const std::vector<CuboidSample>& train_set, const std::vector<CuboidSample>& val_set,
                  const ModelConfig& model, const TrainConfig& cfg, const TrainObserver& observer) {
  return train(init_params(model, cfg.seed), train_set, val_set, cfg, observer);
}

TrainResult train(ModelParams params, const std::vector<CuboidSample>& train_set,
                  const std::vector<CuboidSample>& val_set, const TrainConfig& cfg,
                  const TrainObserver& observer) {
  validate(cfg);
  validate(params.config);
  if (train_set.empty()) throw ConfigError("training set is empty");
  if (val_set.empty()) throw ConfigError("validation set is empty");
  for (const auto& s : train_set)
    if (s.attention.size() != params.config.aam_levels.size())
      throw ConfigError("sample attention pyramid does not match the model's attention levels");

  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  const std::size_t n = train_set.size(), batch = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t per_epoch = std::int64_t((n + batch - 1) / batch);
  std::int64_t total = per_epoch * cfg.epochs;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);

  Rng rng(splitmix64(cfg.seed ^ 0x5be9d1c3a7f04e21ULL));
  Adam adam(cfg.adam, params);
  TrainResult result;
  std::vector<Tensor<float>> grads;
  for (const auto& t : params.tensors) grads.emplace_back(t.value.shape());

  std::int64_t step = 0, bad = 0;
  double acc_loss = 0.0, acc_seg = 0.0, acc_att = 0.0;
  std::int64_t acc_n = 0;
  for (int epoch = 0; epoch < cfg.epochs && step < total; ++epoch) {
    const auto order = shuffled_indices(n, rng);
    for (std::size_t b0 = 0; b0 < n && step < total; b0 += batch) {
      ++step;
      const std::size_t b1 = std::min(n, b0 + batch);
      const float inv = 1.0f / float(b1 - b0);
      for (auto& g : grads) std::fill(g.data().begin(), g.data().end(), 0.0f);
      LossBreakdown mean;
      mean.alpha = cfg.alpha;
      bool finite = true;
      for (std::size_t k = b0; k < b1; ++k) {
        const CuboidSample& src = train_set[order[k]];
        const CuboidSample s = cfg.rotate ? random_rotation(src, rng) : src;
        Graph<float> g;
        const auto vars = bind_params(g, params, true);
        const ForwardVars f = forward(g, params.config, vars, g.constant(to_tensor<float>(s.input)));
        const LossTargets<float> t = targets_of(s);
        const LossVars l = total_loss(g, f, g.constant(t.labels), t, float(cfg.alpha));
        const LossBreakdown part = read_breakdown(g, l, cfg.alpha);
        if (!std::isfinite(part.total)) {
          finite = false;
          break;
        }
        mean.total += part.total * inv, mean.seg += part.seg * inv;
        if (mean.attention.size() < part.attention.size()) mean.attention.resize(part.attention.size());
        for (std::size_t a = 0; a < part.attention.size(); ++a) mean.attention[a] += part.attention[a] * inv;
        g.backward(l.total, inv);
        for (std::size_t i = 0; i < vars.size(); ++i) {
          const Tensor<float> gi = g.grad(vars[i]);
          float* dst = grads[i].ptr();
          for (std::int64_t j = 0; j < gi.numel(); ++j) dst[j] += gi[j];
        }
      }
      if (!finite) {
        if (++bad >= 3) throw DivergenceError("loss was non-finite for 3 consecutive steps (step " +
                                              std::to_string(step) + ")");
        mean.total = mean.seg = NAN;
      } else {
        bad = 0;
        adam.step(params, grads);
        acc_loss += mean.total, acc_seg += mean.seg, acc_att += mean.attention_sum(), ++acc_n;
      }
      result.history.push_back({step, mean});

      if (step % cfg.val_every == 0 || step == total) {
        LogLine line;
        line.step = step;
        if (acc_n) line.loss = acc_loss / acc_n, line.seg = acc_seg / acc_n, line.att = acc_att / acc_n;
        line.val = validation_loss(params, val_set);
        line.seconds = elapsed();
        acc_loss = acc_seg = acc_att = 0.0, acc_n = 0;
        const bool best = result.log.empty() || line.val < result.best_val;
        if (best) {
          result.best = params;
          result.best_val = line.val;
          result.best_step = step;
        }
        result.log.push_back(line);
        if (observer) observer(line, best, params);
      }
    }
  }
  result.last = std::move(params);
  return result;
}

Volume gaussian_weight_field(std::int64_t edge, std::int64_t overlap) {
  if (edge < 1) throw ConfigError("edge must be positive");
  if (overlap < 0 || 2 * overlap > edge)
    throw ConfigError("overlap " + std::to_string(overlap) + " must satisfy 0 <= 2 w <= edge " + std::to_string(edge));
  std::vector<double> profile(static_cast<std::size_t>(edge), 1.0);
  const double sigma = double(overlap) / 3.0;
  for (std::int64_t i = 0; i < edge; ++i) {
    const std::int64_t t = std::min(i, edge - 1 - i);
    if (t < overlap) {
      const double d = double(overlap - t);
      profile[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    }
  }
  Volume w({edge, edge, edge}, VolumeKind::weight);
  for (std::int64_t z = 0; z < edge; ++z)
    for (std::int64_t y = 0; y < edge; ++y)
      for (std::int64_t x = 0; x < edge; ++x)
        w.at(z, y, x) = static_cast<float>(profile[std::size_t(z)] * profile[std::size_t(y)] * profile[std::size_t(x)]);
  return w;
}

StitchPlan make_stitch_plan(const Dims& dims, std::int64_t edge, std::int64_t overlap) {
  StitchPlan plan;
  plan.edge = edge;
  plan.overlap = overlap;
  plan.weight = gaussian_weight_field(edge, overlap);
  require_fits(dims, edge, "stitch");
  for (int a = 0; a < 3; ++a) plan.origins[a] = window_origins(dims[a], edge, edge - overlap);
  return plan;
}

Volume coverage_count(const StitchPlan& plan, const Dims& dims) {
  Volume c(dims, VolumeKind::weight);
  for (std::int64_t oz : plan.origins[0])
    for (std::int64_t oy : plan.origins[1])
      for (std::int64_t ox : plan.origins[2])
        for (std::int64_t z = 0; z < plan.edge; ++z)
          for (std::int64_t y = 0; y < plan.edge; ++y)
            for (std::int64_t x = 0; x < plan.edge; ++x) c.at(oz + z, oy + y, ox + x) += 1.0f;
  return c;
}

Volume stitch(const TilePredictor& predict, const Volume& volume, const StitchPlan& plan,
              const std::vector<std::size_t>& order) {
  require_fits(volume.dims, plan.edge, "stitch");
  std::vector<std::array<std::int64_t, 3>> tiles;
  for (std::int64_t oz : plan.origins[0])
    for (std::int64_t oy : plan.origins[1])
      for (std::int64_t ox : plan.origins[2]) tiles.push_back({oz, oy, ox});
  std::vector<std::size_t> visit = order;
  if (visit.empty()) {
    visit.resize(tiles.size());
    std::iota(visit.begin(), visit.end(), std::size_t{0});
  }
  if (visit.size() != tiles.size()) throw ConfigError("tile order does not list every tile once");

  const std::size_t nvox = static_cast<std::size_t>(volume.numel());
  std::vector<double> num(nvox, 0.0), den(nvox, 0.0);
  const std::int64_t e = plan.edge;
  for (std::size_t idx : visit) {
    const auto& o = tiles.at(idx);
    const Volume p = predict(crop(volume, o, e));
    if (!(p.dims == Dims{e, e, e})) throw ShapeError("tile predictor returned the wrong dims");
    for (std::int64_t z = 0; z < e; ++z)
      for (std::int64_t y = 0; y < e; ++y)
        for (std::int64_t x = 0; x < e; ++x) {
          const auto dst = static_cast<std::size_t>(volume.index(o[0] + z, o[1] + y, o[2] + x));
          const double phi = plan.weight.at(z, y, x);
          num[dst] += phi * double(p.at(z, y, x));
          den[dst] += phi;
        }
  }
  Volume out(volume.dims, VolumeKind::probability);
  for (std::size_t i = 0; i < nvox; ++i) out.voxels[i] = static_cast<float>(num[i] / den[i]);
  return out;
}

Volume predict_volume(const TilePredictor& predict, const Volume& volume, std::int64_t edge, std::int64_t overlap) {
  return stitch(predict, volume, make_stitch_plan(volume.dims, edge, overlap));
}

Volume predict_volume(const ModelParams& p, const Volume& volume, std::int64_t edge, std::int64_t overlap) {
  return predict_volume([&](const Volume& tile) { return predict(p, standardize(tile)); }, volume, edge, overlap);
}

std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("kfold needs k >= 2");
  if (n < k) throw ConfigError("kfold needs n >= k, got n=" + std::to_string(n) + " k=" + std::to_string(k));
  Rng rng(seed);
  const auto idx = shuffled_indices(n, rng);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(idx.begin() + std::ptrdiff_t(pos), idx.begin() + std::ptrdiff_t(pos + size));
    pos += size;
  }
  return folds;
}

}  // namespace faultseg
