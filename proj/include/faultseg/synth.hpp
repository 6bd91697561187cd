#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "faultseg/volume.hpp"

namespace faultseg {

struct RealRange {
  double lo = 0.0, hi = 0.0;
  bool operator==(const RealRange&) const = default;
};
struct IntRange {
  int lo = 0, hi = 0;
  bool operator==(const IntRange&) const = default;
};

struct SynthParams {
  std::uint64_t seed = 0;
  int size = 64;
  IntRange layer_count{24, 40};   ///< reflectors over the padded depth span
  RealRange fold_amplitude{0.0, 6.0};
  IntRange fault_count{1, 3};
  RealRange dip{60.0, 85.0};       ///< degrees from horizontal
  RealRange strike{0.0, 360.0};    ///< degrees
  RealRange throw_voxels{2.0, 6.0};
  double peak_frequency = 0.11;    ///< cycles per voxel
  RealRange noise_std{0.1, 0.5};   ///< relative to signal std

  bool operator==(const SynthParams&) const = default;
};

/// Throws ConfigError for empty ranges or out-of-domain values.
void validate(const SynthParams& p);

/// Plane n . x = offset in voxel-center coordinates (axis0, axis1, axis2);
/// n has unit length. The side with n . x > offset is shifted by throw_.
struct FaultPlane {
  std::array<double, 3> normal{0.0, 0.0, 1.0};
  double offset = 0.0;
  double throw_ = 0.0;

  double signed_distance(double z, double y, double x) const {
    return normal[0] * z + normal[1] * y + normal[2] * x - offset;
  }
};

struct SynthVolume {
  Volume amplitude;  ///< standardized
  Volume label;      ///< {0, 1}
  std::vector<FaultPlane> faults;
  double noise_level = 0.0;
};

/// Pure function of the parameters.
SynthVolume generate(const SynthParams& p);

double ricker(double t, double peak_frequency);

struct ManifestEntry {
  std::string stem;
  std::uint64_t seed = 0;
  bool train = true;
  std::vector<FaultPlane> faults;
  std::int64_t fault_voxels = 0;
};

struct Manifest {
  int size = 0;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split(bool train) const;
};

/// Per-volume seed derived from the corpus seed and the volume index.
std::uint64_t volume_seed(std::uint64_t corpus_seed, std::size_t index);

/// Seed-deterministic train/val assignment: round(n * train_fraction)
/// volumes go to train, chosen by a seeded shuffle.
std::vector<bool> split_assignment(std::size_t n, double train_fraction, std::uint64_t seed);

/// Writes <stem>_amp.fvl / <stem>_lbl.fvl for each volume and manifest.txt.
Manifest make_corpus(std::size_t n, const SynthParams& params, double train_fraction,
                     const std::filesystem::path& dir);

void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

std::filesystem::path amplitude_path(const std::filesystem::path& dir, const ManifestEntry& e);
std::filesystem::path label_path(const std::filesystem::path& dir, const ManifestEntry& e);

}  // namespace faultseg
