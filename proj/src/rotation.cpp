#include <algorithm>

#include "faultseg/rotation.hpp"

namespace faultseg {

namespace {

int determinant(const CubeRotation& r) {
  // sign of the permutation times the product of flips
  int inversions = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) inversions += r.perm[i] > r.perm[j];
  int s = inversions % 2 ? -1 : 1;
  for (bool f : r.flip) s *= f ? -1 : 1;
  return s;
}

}  // namespace

const std::array<CubeRotation, kRotationCount>& cube_rotations() {
  static const std::array<CubeRotation, kRotationCount> table = [] {
    std::array<CubeRotation, kRotationCount> t{};
    std::array<int, 3> perm{0, 1, 2};
    int n = 0;
    do {
      for (int mask = 0; mask < 8; ++mask) {
        CubeRotation r{perm, {bool(mask & 1), bool(mask & 2), bool(mask & 4)}};
        if (determinant(r) == 1) t[n++] = r;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return t;
  }();
  return table;
}

CubeRotation quarter_turn(int axis) {
  const int a = (axis + 1) % 3, b = (axis + 2) % 3;
  CubeRotation r;
  r.perm[axis] = axis;
  // new_b = old_a, new_a = reversed old_b
  r.perm[b] = a;
  r.perm[a] = b;
  r.flip[a] = true;
  return r;
}

CubeRotation compose(const CubeRotation& outer, const CubeRotation& inner) {
  CubeRotation r;
  for (int i = 0; i < 3; ++i) {
    r.perm[i] = inner.perm[outer.perm[i]];
    r.flip[i] = outer.flip[i] != inner.flip[outer.perm[i]];
  }
  return r;
}

CubeRotation inverse(const CubeRotation& r) {
  CubeRotation inv;
  for (int i = 0; i < 3; ++i) {
    inv.perm[r.perm[i]] = i;
    inv.flip[r.perm[i]] = r.flip[i];
  }
  return inv;
}

Dims rotate_dims(const Dims& d, const CubeRotation& r) {
  return {d[r.perm[0]], d[r.perm[1]], d[r.perm[2]]};
}

Volume rotate(const Volume& v, const CubeRotation& r) {
  const Dims od = rotate_dims(v.dims, r);
  Volume out(od, v.kind);
  std::int64_t o[3], src[3];
  for (o[0] = 0; o[0] < od.d; ++o[0])
    for (o[1] = 0; o[1] < od.h; ++o[1])
      for (o[2] = 0; o[2] < od.w; ++o[2]) {
        for (int i = 0; i < 3; ++i) {
          const int a = r.perm[i];
          src[a] = r.flip[i] ? v.dims[a] - 1 - o[i] : o[i];
        }
        out.at(o[0], o[1], o[2]) = v.at(src[0], src[1], src[2]);
      }
  return out;
}

}  // namespace faultseg
