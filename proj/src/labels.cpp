#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "faultseg/labels.hpp"

namespace faultseg {

namespace {

constexpr double kFar = 1e20;

// 1D lower envelope of parabolas (Felzenszwalb & Huttenlocher).
void edt_1d(const double* f, double* d, std::int64_t n, std::int64_t* v, double* z) {
  auto cross = [&](std::int64_t q, std::int64_t p) {
    return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * double(q - p));
  };
  std::int64_t k = 0;
  v[0] = 0;
  z[0] = -kFar;
  z[1] = kFar;
  for (std::int64_t q = 1; q < n; ++q) {
    double s = cross(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = cross(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kFar;
  }
  k = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[k + 1] < double(q)) ++k;
    const double dq = double(q - v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

std::int64_t plane_voxel(const Dims& dims, const SlicePlane& p, std::int64_t r, std::int64_t c) {
  std::int64_t x[3];
  const int ra = p.axis == 0 ? 1 : 0;
  const int ca = p.axis == 2 ? 1 : 2;
  x[p.axis] = p.index;
  x[ra] = r;
  x[ca] = c;
  return (x[0] * dims.h + x[1]) * dims.w + x[2];
}

}  // namespace

LabelingMode parse_mode(const std::string& s) {
  std::string u;
  for (char c : s) u += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u == "ALL") return mode_all();
  static const std::array<std::array<int, 2>, 8> counts = {
      {{1, 0}, {2, 0}, {3, 0}, {6, 0}, {0, 3}, {0, 6}, {3, 3}, {6, 6}}};
  if (u.size() == 1 && u[0] >= 'A' && u[0] <= 'H') {
    const auto& c = counts[static_cast<std::size_t>(u[0] - 'A')];
    return LabelingMode{u[0], c[0], c[1], false};
  }
  throw ConfigError("unknown labeling mode '" + s + "' (expected A-H or ALL)");
}

LabelingMode mode_all() { return LabelingMode{'*', 0, 0, true}; }

std::vector<std::int64_t> slice_indices(int n, std::int64_t length) {
  if (n < 0) throw ConfigError("negative slice count");
  if (n > length)
    throw ConfigError(std::to_string(n) + " slices do not fit an axis of length " +
                      std::to_string(length));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  // exact integer form of floor((i + 0.5) L / n)
  for (int i = 0; i < n; ++i) idx[i] = ((2 * i + 1) * length) / (2 * std::int64_t{n});
  return idx;
}

ModeSlices mode_slice_indices(const LabelingMode& mode, std::int64_t len0, std::int64_t len1) {
  if (mode.all)
    return {slice_indices(static_cast<int>(len0), len0), slice_indices(static_cast<int>(len1), len1)};
  return {slice_indices(mode.n0, len0), slice_indices(mode.n1, len1)};
}

Volume sparsify(const Volume& dense, const LabelingMode& mode) {
  if (mode.all) return dense;
  const Dims& dm = dense.dims;
  const ModeSlices s = mode_slice_indices(mode, dm.d, dm.h);
  Volume out(dm, VolumeKind::label, -1.0f);
  for (std::int64_t z : s.axis0)
    for (std::int64_t y = 0; y < dm.h; ++y)
      for (std::int64_t x = 0; x < dm.w; ++x) out.at(z, y, x) = dense.at(z, y, x);
  for (std::int64_t y : s.axis1)
    for (std::int64_t z = 0; z < dm.d; ++z)
      for (std::int64_t x = 0; x < dm.w; ++x) out.at(z, y, x) = dense.at(z, y, x);
  return out;
}

LabelCounts count_labels(const Volume& sparse) {
  LabelCounts c;
  for (float v : sparse.voxels) {
    if (v == 1.0f) ++c.positives;
    else if (v == 0.0f) ++c.negatives;
    else ++c.unlabeled;
  }
  return c;
}

Volume lambda_weights(const Volume& sparse) {
  const LabelCounts c = count_labels(sparse);
  const float pos = c.positives > 0 ? static_cast<float>(double(c.negatives) / double(c.positives)) : 0.0f;
  Volume w(sparse.dims, VolumeKind::weight);
  for (std::size_t i = 0; i < w.voxels.size(); ++i) {
    const float v = sparse.voxels[i];
    w.voxels[i] = v == 1.0f ? pos : v == 0.0f ? 1.0f : 0.0f;
  }
  return w;
}

std::vector<double> squared_distance_3d(const std::vector<bool>& sites, const Dims& dims) {
  const std::int64_t n = std::max({dims.d, dims.h, dims.w});
  std::vector<double> f(static_cast<std::size_t>(n)), d(static_cast<std::size_t>(n)),
      z(static_cast<std::size_t>(n + 1));
  std::vector<std::int64_t> v(static_cast<std::size_t>(n));
  std::vector<double> grid(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) grid[i] = sites[i] ? 0.0 : kFar;
  const std::int64_t len[3] = {dims.d, dims.h, dims.w};
  const std::int64_t stride[3] = {dims.h * dims.w, dims.w, 1};
  for (int axis = 2; axis >= 0; --axis) {
    if (len[axis] == 1) continue;
    const int a = axis == 0 ? 1 : 0, b = axis == 2 ? 1 : 2;
    for (std::int64_t i = 0; i < len[a]; ++i)
      for (std::int64_t j = 0; j < len[b]; ++j) {
        const std::int64_t base = i * stride[a] + j * stride[b];
        for (std::int64_t q = 0; q < len[axis]; ++q) f[q] = grid[base + q * stride[axis]];
        edt_1d(f.data(), d.data(), len[axis], v.data(), z.data());
        for (std::int64_t q = 0; q < len[axis]; ++q) grid[base + q * stride[axis]] = d[q];
      }
  }
  for (double& g : grid)
    if (g >= kFar / 2) g = std::numeric_limits<double>::infinity();
  return grid;
}

std::vector<double> squared_distance_2d(const std::vector<bool>& sites, std::int64_t rows,
                                        std::int64_t cols) {
  return squared_distance_3d(sites, Dims{1, rows, cols});
}

std::vector<SlicePlane> labeled_planes(const Volume& sparse) {
  const Dims& dm = sparse.dims;
  std::vector<SlicePlane> planes;
  for (int axis = 0; axis < 3; ++axis) {
    const int ra = axis == 0 ? 1 : 0;
    const int ca = axis == 2 ? 1 : 2;
    for (std::int64_t i = 0; i < dm[axis]; ++i) {
      const SlicePlane p{axis, i};
      bool full = true;
      for (std::int64_t r = 0; r < dm[ra] && full; ++r)
        for (std::int64_t c = 0; c < dm[ca] && full; ++c)
          full = sparse.voxels[static_cast<std::size_t>(plane_voxel(dm, p, r, c))] != -1.0f;
      if (full) planes.push_back(p);
    }
  }
  return planes;
}

AttentionLabel attention_label(const Volume& sparse, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("attention sigma must be positive");
  const Dims& dm = sparse.dims;
  AttentionLabel att{Volume(dm, VolumeKind::probability), Volume(dm, VolumeKind::weight)};
  const double inv = 1.0 / (sigma * sigma);
  for (const SlicePlane& p : labeled_planes(sparse)) {
    const int ra = p.axis == 0 ? 1 : 0;
    const int ca = p.axis == 2 ? 1 : 2;
    const std::int64_t rows = dm[ra], cols = dm[ca];
    std::vector<bool> sites(static_cast<std::size_t>(rows * cols));
    bool any = false;
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c) {
        const bool s = sparse.voxels[static_cast<std::size_t>(plane_voxel(dm, p, r, c))] == 1.0f;
        sites[r * cols + c] = s;
        any = any || s;
      }
    std::vector<double> d2;
    if (any) d2 = squared_distance_2d(sites, rows, cols);
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c) {
        const auto idx = static_cast<std::size_t>(plane_voxel(dm, p, r, c));
        att.mask.voxels[idx] = 1.0f;
        if (!any) continue;
        const float t = static_cast<float>(std::exp(-d2[r * cols + c] * inv));
        att.theta.voxels[idx] = std::max(att.theta.voxels[idx], t);
      }
  }
  return att;
}

AttentionLabel downsample_attention(const AttentionLabel& att, int factor) {
  if (factor < 1 || (factor & (factor - 1)) != 0)
    throw ConfigError("downsample factor must be a power of two");
  const Dims& dm = att.theta.dims;
  if (dm.d % factor || dm.h % factor || dm.w % factor)
    throw ShapeError("dims " + std::to_string(dm.d) + "x" + std::to_string(dm.h) + "x" +
                     std::to_string(dm.w) + " are not divisible by " + std::to_string(factor));
  if (factor == 1) return att;
  const Dims od{dm.d / factor, dm.h / factor, dm.w / factor};
  AttentionLabel out{Volume(od, att.theta.kind), Volume(od, att.mask.kind)};
  for (std::int64_t z = 0; z < od.d; ++z)
    for (std::int64_t y = 0; y < od.h; ++y)
      for (std::int64_t x = 0; x < od.w; ++x) {
        float t = 0.0f, m = 0.0f;
        for (int a = 0; a < factor; ++a)
          for (int b = 0; b < factor; ++b)
            for (int c = 0; c < factor; ++c) {
              t = std::max(t, att.theta.at(z * factor + a, y * factor + b, x * factor + c));
              m = std::max(m, att.mask.at(z * factor + a, y * factor + b, x * factor + c));
            }
        out.theta.at(z, y, x) = t;
        out.mask.at(z, y, x) = m;
      }
  return out;
}

}  // namespace faultseg
