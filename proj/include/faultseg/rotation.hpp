#pragma once

#include <array>

#include "faultseg/volume.hpp"

namespace faultseg {

/// Orientation-preserving 90-degree rotation of the grid, stored as a signed
/// axis permutation: output axis i reads input axis perm[i], reversed when
/// flip[i] is set.
struct CubeRotation {
  std::array<int, 3> perm{0, 1, 2};
  std::array<bool, 3> flip{false, false, false};
  bool operator==(const CubeRotation&) const = default;
};

inline constexpr int kRotationCount = 24;

/// The 24 proper rotations in a fixed order; index 0 is the identity.
const std::array<CubeRotation, kRotationCount>& cube_rotations();

/// Quarter turn about `axis`, mapping the next axis onto the one after it.
CubeRotation quarter_turn(int axis);

CubeRotation compose(const CubeRotation& outer, const CubeRotation& inner);
CubeRotation inverse(const CubeRotation& r);

Dims rotate_dims(const Dims& d, const CubeRotation& r);
Volume rotate(const Volume& v, const CubeRotation& r);

}  // namespace faultseg
