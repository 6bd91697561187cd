#pragma once

#include <array>
#include <string>
#include <vector>

#include "faultseg/volume.hpp"

namespace faultseg {

/// Slice-annotation prescription. Slices are perpendicular to axis 0
/// (inline-like) or axis 1 (crossline-like). `all` labels every voxel.
struct LabelingMode {
  char id = 'B';  ///< 'A'..'H', or '*' for ALL
  int n0 = 0, n1 = 0;
  bool all = false;

  std::string name() const { return all ? "ALL" : std::string(1, id); }
  bool operator==(const LabelingMode&) const = default;
};

/// Parses "A".."H" or "ALL" (case-insensitive); throws ConfigError otherwise.
LabelingMode parse_mode(const std::string& s);
LabelingMode mode_all();

/// Slice indices floor((i + 0.5) L / n) for i < n; ALL yields every index.
std::vector<std::int64_t> slice_indices(int n, std::int64_t length);

/// Selected planes for axis 0 and axis 1.
struct ModeSlices {
  std::vector<std::int64_t> axis0, axis1;
};
ModeSlices mode_slice_indices(const LabelingMode& mode, std::int64_t len0, std::int64_t len1);
inline ModeSlices mode_slice_indices(const LabelingMode& mode, std::int64_t length) {
  return mode_slice_indices(mode, length, length);
}

/// Copies the dense {0,1} labels on the selected planes and marks every
/// other voxel -1. ALL returns the dense volume unchanged.
Volume sparsify(const Volume& dense, const LabelingMode& mode);

/// Per-voxel balance weights: S_f/S_p at labeled positives, 1 at labeled
/// negatives, 0 at unlabeled voxels. Counts are per volume.
Volume lambda_weights(const Volume& sparse);

struct LabelCounts {
  std::int64_t positives = 0, negatives = 0, unlabeled = 0;
};
LabelCounts count_labels(const Volume& sparse);

struct AttentionLabel {
  Volume theta;  ///< probability kind
  Volume mask;   ///< weight kind, {0, 1}
};

/// A plane perpendicular to `axis` at `index`.
struct SlicePlane {
  int axis = 0;
  std::int64_t index = 0;
  bool operator==(const SlicePlane&) const = default;
};

/// Planes on which every voxel is labeled (value != -1), over all three axes.
std::vector<SlicePlane> labeled_planes(const Volume& sparse);

/// Gaussian attention target exp(-d^2 / sigma^2), where d is the 2D distance
/// within a labeled plane to that plane's nearest fault voxel. A voxel lying
/// on several labeled planes takes the maximum; planes without faults
/// contribute 0. mask is 1 on labeled planes.
AttentionLabel attention_label(const Volume& sparse, double sigma);

/// Max-pools theta and mask by `factor` (a power of two dividing every dim).
AttentionLabel downsample_attention(const AttentionLabel& att, int factor);

/// Exact squared Euclidean distance transform of a 2D binary grid
/// (row-major, rows x cols) to the nearest `true` cell; +inf when none.
std::vector<double> squared_distance_2d(const std::vector<bool>& sites, std::int64_t rows,
                                        std::int64_t cols);

/// 3D version over a (D, H, W) grid, W fastest.
std::vector<double> squared_distance_3d(const std::vector<bool>& sites, const Dims& dims);

}  // namespace faultseg
