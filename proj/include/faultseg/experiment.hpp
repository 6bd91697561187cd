#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "faultseg/pipeline.hpp"

namespace faultseg {

/// Everything a run depends on, stored as flat `key=value` lines.
struct ExperimentConfig {
  SynthParams synth;
  std::size_t corpus_count = 120;
  double train_fraction = 100.0 / 120.0;
  ModelConfig model;
  TrainConfig train;
  LabelingMode mode = parse_mode("B");
  std::int64_t stride = 25;
  std::int64_t min_fault_voxels = 64;
  std::int64_t overlap = 16;
  std::size_t folds = 5;
  std::vector<LabelingMode> ablate_modes{mode_all(), parse_mode("B")};
  std::filesystem::path corpus_dir = "corpus";
  std::filesystem::path run_dir = "runs/default";

  bool operator==(const ExperimentConfig&) const = default;
};

/// Every key with its value, one per line, in a fixed order.
std::string to_text(const ExperimentConfig& c);

/// Applies `key=value` lines over `base`. Blank lines and lines starting
/// with '#' are skipped. Throws ConfigError on unknown keys or bad values.
ExperimentConfig parse_experiment(const std::string& text, const ExperimentConfig& base = {});

/// Applies one key. Throws ConfigError.
void set_key(ExperimentConfig& c, const std::string& key, const std::string& value);

std::vector<std::string> experiment_keys();

ExperimentConfig load_experiment(const std::filesystem::path& path);
void save_experiment(const ExperimentConfig& c, const std::filesystem::path& path);

/// Throws ConfigError.
void validate(const ExperimentConfig& c);

SampleOptions sample_options(const ExperimentConfig& c);

/// 32^3 cuboids, depth 2, 8 base channels, batch 1, a 120-volume corpus
/// split 100 / 20.
ExperimentConfig quick_profile();

/// 64^3 cuboids, depth 3, a 120-volume corpus split 100 / 20.
ExperimentConfig desk_profile();

/// Generates the corpus described by the config into corpus_dir.
Manifest generate_corpus(const ExperimentConfig& c);

struct RunSummary {
  TrainResult result;
  MetricReport val_metrics;  ///< best checkpoint on the validation cuboids
  std::size_t train_samples = 0, val_samples = 0;
};

/// Trains on the corpus, writing config.txt, train.log, best.fck, last.fck
/// and metrics.txt under `dir`. Progress lines go to `progress` if given.
RunSummary run_training(const ExperimentConfig& c, const std::filesystem::path& dir,
                        std::ostream* progress = nullptr);

/// Same, on prepared sample sets.
RunSummary run_training(const ExperimentConfig& c, const std::vector<CuboidSample>& train_set,
                        const std::vector<CuboidSample>& val_set, const std::filesystem::path& dir,
                        std::ostream* progress = nullptr);

struct AblationCell {
  bool aam = true, rotate = true;
  LabelingMode mode;
  MetricReport metrics;
};

struct AblationTable {
  std::vector<LabelingMode> modes;
  std::vector<AblationCell> cells;  ///< row-major: (aam, rotate) rows, mode columns

  const AblationCell& at(bool aam, bool rotate, const LabelingMode& mode) const;
  /// One row per (AAM, rotation), one IOU column per mode.
  std::string to_text() const;
};

/// The {AAM on/off} x {rotation on/off} x modes grid, one training run per cell.
AblationTable run_ablation(const ExperimentConfig& c, const std::filesystem::path& dir,
                           std::ostream* progress = nullptr);

struct CrossValidation {
  std::vector<MetricReport> folds;
  MetricReport mean;  ///< arithmetic mean of the fold metrics

  /// Per-fold rows and a mean row of precision, recall, IOU, Dice, Hausdorff.
  std::string to_text() const;
};

/// K-fold over all corpus volumes: each fold is held out once.
CrossValidation run_cross_validation(const ExperimentConfig& c, const std::filesystem::path& dir,
                                     std::ostream* progress = nullptr);

/// Throws ConfigError if the checkpoint was trained with a different model config.
void require_compatible(const ModelConfig& expected, const ModelParams& checkpoint);

}  // namespace faultseg
