#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "faultseg/labels.hpp"
#include "faultseg/losses.hpp"
#include "faultseg/model.hpp"
#include "faultseg/random.hpp"
#include "faultseg/rotation.hpp"
#include "faultseg/synth.hpp"

namespace faultseg {

/// One training cuboid with its supervision.
struct CuboidSample {
  Volume input;    ///< standardized amplitude
  Volume dense;    ///< full binary label, kept for evaluation only
  Volume sparse;   ///< {-1, 0, 1}
  Volume weights;  ///< lambda
  std::vector<AttentionLabel> attention;  ///< one per AAM level, ascending
  std::array<std::int64_t, 3> origin{0, 0, 0};
  std::string source;
};

struct SampleOptions {
  LabelingMode mode = parse_mode("B");
  std::int64_t edge = 64;
  std::int64_t stride = 25;
  std::int64_t min_fault_voxels = 64;  ///< counted on the sparse label
};

/// Window origins along one axis: 0, stride, 2 stride, ... with the final
/// window shifted inward so it ends at the boundary.
std::vector<std::int64_t> window_origins(std::int64_t length, std::int64_t edge, std::int64_t stride);

/// Builds sparse label, weights and attention pyramid for one cuboid.
CuboidSample make_sample(const Volume& amplitude, const Volume& dense, const LabelingMode& mode,
                         const ModelConfig& model);

/// Slides a window over the volume and keeps cuboids with at least
/// min_fault_voxels labeled fault voxels. Throws ShapeError if the volume is
/// smaller than the edge on any axis.
std::vector<CuboidSample> extract_samples(const Volume& amplitude, const Volume& dense,
                                          const SampleOptions& opt, const ModelConfig& model,
                                          const std::string& source = "");

/// Cuboids from every corpus volume of one split.
std::vector<CuboidSample> load_split(const std::filesystem::path& corpus_dir, const Manifest& manifest,
                                     bool train, const SampleOptions& opt, const ModelConfig& model);

/// Applies the same rotation to every constituent. Throws ShapeError for a
/// non-cubic sample.
CuboidSample rotate_sample(const CuboidSample& s, const CubeRotation& r);

/// rotate_sample with one of the 24 rotations drawn uniformly.
CuboidSample random_rotation(const CuboidSample& s, Rng& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

class Adam {
 public:
  Adam(const AdamConfig& cfg, const ModelParams& p);
  /// One bias-corrected update of every tensor from the matching gradient.
  void step(ModelParams& p, const std::vector<Tensor<float>>& grads);
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor<float>> m_, v_;
  std::int64_t t_ = 0;
};

struct TrainConfig {
  int epochs = 35;
  int batch_size = 8;
  AdamConfig adam;
  int val_every = 200;
  bool rotate = true;
  double alpha = 1.0;         ///< attention loss weight
  std::uint64_t seed = 0;
  std::int64_t max_steps = 0;  ///< stop early after this many steps; 0 = no limit

  bool operator==(const TrainConfig&) const = default;
};

/// Throws ConfigError.
void validate(const TrainConfig& c);

struct StepRecord {
  std::int64_t step = 0;
  LossBreakdown train;  ///< batch mean
};

struct LogLine {
  std::int64_t step = 0;
  double loss = 0.0, seg = 0.0, att = 0.0;  ///< mean over steps since the previous line
  double val = 0.0;                         ///< mean validation lambda-BCE
  double seconds = 0.0;

  /// step=<n> loss=<f> seg=<f> att=<f> val=<f> t=<secs>
  std::string to_text() const;
  /// The same line without the wall time.
  std::string to_text_untimed() const;
};

struct TrainResult {
  ModelParams best;  ///< lowest validation loss
  double best_val = 0.0;
  std::int64_t best_step = 0;
  ModelParams last;
  std::vector<StepRecord> history;
  std::vector<LogLine> log;
};

/// Called after each validation with the new line and whether it is the best.
using TrainObserver = std::function<void(const LogLine&, bool best, const ModelParams& current)>;

/// Adam on the mean total loss of each batch, validation lambda-BCE every
/// val_every steps and at the last step. Throws DivergenceError after three
/// consecutive non-finite steps (those steps leave the parameters untouched).
TrainResult train(const std::vector<CuboidSample>& train_set, const std::vector<CuboidSample>& val_set,
                  const ModelConfig& model, const TrainConfig& cfg, const TrainObserver& observer = {});

/// Training from given starting parameters.
TrainResult train(ModelParams init, const std::vector<CuboidSample>& train_set,
                  const std::vector<CuboidSample>& val_set, const TrainConfig& cfg,
                  const TrainObserver& observer = {});

/// Loss terms of one sample under params, no gradient.
LossBreakdown sample_loss(const ModelParams& p, const CuboidSample& s, double alpha);

/// Mean lambda-BCE of params over the samples.
double validation_loss(const ModelParams& p, const std::vector<CuboidSample>& samples);

/// Metrics on every sample's dense label, pooled: counts are summed and the
/// area metrics recomputed from the totals; hausdorff is the mean over
/// samples where it is defined.
MetricReport evaluate_samples(const ModelParams& p, const std::vector<CuboidSample>& samples);

/// exp(-(w - t)^2 / (2 (w/3)^2)) within w voxels of each face, 1 elsewhere,
/// as the product of the three axis profiles. Throws ConfigError unless
/// 0 <= 2 w <= edge.
Volume gaussian_weight_field(std::int64_t edge, std::int64_t overlap);

struct StitchPlan {
  std::int64_t edge = 64;
  std::int64_t overlap = 16;
  std::array<std::vector<std::int64_t>, 3> origins;  ///< per axis
  Volume weight;                                      ///< one tile's field

  std::size_t tile_count() const { return origins[0].size() * origins[1].size() * origins[2].size(); }
};

/// Tile stride edge - overlap, last tile clamped to the boundary. Throws
/// ShapeError if the volume is smaller than the edge.
StitchPlan make_stitch_plan(const Dims& dims, std::int64_t edge, std::int64_t overlap);

/// Number of tiles covering each voxel.
Volume coverage_count(const StitchPlan& plan, const Dims& dims);

using TilePredictor = std::function<Volume(const Volume& tile)>;

/// sum_i phi_i P_i / sum_i phi_i over the tiles of the plan, accumulated in
/// double. Tiles are visited in `order` when given (default: raster order).
Volume stitch(const TilePredictor& predict, const Volume& volume, const StitchPlan& plan,
              const std::vector<std::size_t>& order = {});

Volume predict_volume(const TilePredictor& predict, const Volume& volume, std::int64_t edge = 64,
                      std::int64_t overlap = 16);

/// Each tile is standardized, then passed through the network.
Volume predict_volume(const ModelParams& p, const Volume& volume, std::int64_t edge = 64,
                      std::int64_t overlap = 16);

/// k disjoint folds from a seeded shuffle of 0..n-1, sizes differing by at
/// most one. Throws ConfigError if n < k or k < 2.
std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

}  // namespace faultseg
