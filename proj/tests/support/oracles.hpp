#pragma once

// Slow reference implementations shared by the unit and acceptance tests.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "faultseg/labels.hpp"
#include "faultseg/losses.hpp"

namespace faultseg::testing {

// Brute-force max over the fault voxels of each labeled plane.
inline AttentionLabel brute_attention(const Volume& sparse, double sigma) {
  const Dims& dm = sparse.dims;
  AttentionLabel att{Volume(dm, VolumeKind::probability), Volume(dm, VolumeKind::weight)};
  for (const SlicePlane& p : labeled_planes(sparse)) {
    std::vector<std::array<std::int64_t, 3>> plane, faults;
    for (std::int64_t z = 0; z < dm.d; ++z)
      for (std::int64_t y = 0; y < dm.h; ++y)
        for (std::int64_t x = 0; x < dm.w; ++x) {
          const std::array<std::int64_t, 3> c{z, y, x};
          if (c[p.axis] != p.index) continue;
          plane.push_back(c);
          if (sparse.at(z, y, x) == 1.0f) faults.push_back(c);
        }
    for (const auto& c : plane) {
      att.mask.at(c[0], c[1], c[2]) = 1.0f;
      double best = 0.0;
      for (const auto& f : faults) {
        double d2 = 0;
        for (int i = 0; i < 3; ++i) d2 += double(c[i] - f[i]) * double(c[i] - f[i]);
        best = std::max(best, std::exp(-d2 / (sigma * sigma)));
      }
      float& t = att.theta.at(c[0], c[1], c[2]);
      t = std::max(t, static_cast<float>(best));
    }
  }
  return att;
}

struct Point {
  std::int64_t z, y, x;
};

inline double brute_hausdorff(const std::vector<Point>& a, const std::vector<Point>& b) {
  const auto dist = [](Point p, Point q) {
    const double dz = double(p.z - q.z), dy = double(p.y - q.y), dx = double(p.x - q.x);
    return std::sqrt(dz * dz + dy * dy + dx * dx);
  };
  const auto directed = [&](const std::vector<Point>& s, const std::vector<Point>& t) {
    double worst = 0.0;
    for (Point p : s) {
      double best = INFINITY;
      for (Point q : t) best = std::min(best, dist(p, q));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(a, b), directed(b, a));
}

// Confusion counts by a plain triple loop.
inline MetricReport voxel_loop_counts(const Volume& prob, const Volume& truth, float threshold = 0.5f) {
  MetricReport r;
  for (std::int64_t z = 0; z < prob.dims.d; ++z)
    for (std::int64_t y = 0; y < prob.dims.h; ++y)
      for (std::int64_t x = 0; x < prob.dims.w; ++x) {
        const bool p = prob.at(z, y, x) > threshold, t = truth.at(z, y, x) == 1.0f;
        r.tp += p && t, r.fp += p && !t, r.fn += !p && t, r.tn += !p && !t;
      }
  return r;
}

}  // namespace faultseg::testing
