#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "faultseg/volume.hpp"

namespace faultseg {

namespace {

constexpr char kMagic[4] = {'F', 'V', 'L', '1'};
// 2^34 voxels (64 GiB of payload) is far beyond anything this code handles.
constexpr std::uint64_t kMaxVoxels = std::uint64_t{1} << 34;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
         std::uint32_t{p[3]} << 24;
}

void check_dims(std::uint64_t d, std::uint64_t h, std::uint64_t w) {
  if (d == 0 || h == 0 || w == 0) throw FormatError("volume has a zero dimension");
  if (d > kMaxVoxels / h || d * h > kMaxVoxels / w)
    throw FormatError("volume dimensions overflow: " + std::to_string(d) + "x" +
                      std::to_string(h) + "x" + std::to_string(w));
}

}  // namespace

std::string to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::amplitude: return "amplitude";
    case VolumeKind::probability: return "probability";
    case VolumeKind::label: return "label";
    case VolumeKind::weight: return "weight";
  }
  return "unknown";
}

void validate(const Volume& v) {
  if (v.dims.d < 0 || v.dims.h < 0 || v.dims.w < 0) throw DataError("negative volume dimension");
  if (static_cast<std::int64_t>(v.voxels.size()) != v.numel())
    throw DataError("voxel buffer holds " + std::to_string(v.voxels.size()) + " values, dims need " +
                    std::to_string(v.numel()));
  for (std::size_t i = 0; i < v.voxels.size(); ++i) {
    const float x = v.voxels[i];
    bool ok = true;
    switch (v.kind) {
      case VolumeKind::probability: ok = x >= 0.0f && x <= 1.0f; break;
      case VolumeKind::label: ok = x == -1.0f || x == 0.0f || x == 1.0f; break;
      default: ok = !std::isnan(x);
    }
    if (!ok) {
      std::ostringstream msg;
      msg << to_string(v.kind) << " volume has invalid value " << x << " at voxel " << i;
      throw DataError(msg.str());
    }
  }
}

template <typename T>
Tensor<T> to_tensor(const Volume& v) {
  Tensor<T> t({1, v.dims.d, v.dims.h, v.dims.w});
  std::copy(v.voxels.begin(), v.voxels.end(), t.ptr());
  return t;
}

template <typename T>
Volume from_tensor(const Tensor<T>& t, VolumeKind kind) {
  const Shape& s = t.shape();
  Dims dims;
  if (s.size() == 4 && s[0] == 1) {
    dims = {s[1], s[2], s[3]};
  } else if (s.size() == 3) {
    dims = {s[0], s[1], s[2]};
  } else {
    throw ShapeError("volume needs a (1, D, H, W) or (D, H, W) tensor, got " + shape_str(s));
  }
  Volume v(dims, kind);
  std::transform(t.ptr(), t.ptr() + t.numel(), v.voxels.begin(),
                 [](T x) { return static_cast<float>(x); });
  return v;
}

template Tensor<float> to_tensor<float>(const Volume&);
template Tensor<double> to_tensor<double>(const Volume&);
template Volume from_tensor<float>(const Tensor<float>&, VolumeKind);
template Volume from_tensor<double>(const Tensor<double>&, VolumeKind);

std::vector<std::uint8_t> encode_volume(const Volume& v) {
  if (static_cast<std::int64_t>(v.voxels.size()) != v.numel())
    throw DataError("voxel buffer does not match dims");
  check_dims(static_cast<std::uint64_t>(v.dims.d), static_cast<std::uint64_t>(v.dims.h),
             static_cast<std::uint64_t>(v.dims.w));
  if (v.dims.d > std::numeric_limits<std::uint32_t>::max() ||
      v.dims.h > std::numeric_limits<std::uint32_t>::max() ||
      v.dims.w > std::numeric_limits<std::uint32_t>::max())
    throw FormatError("volume dimension exceeds u32");
  std::vector<std::uint8_t> out;
  out.reserve(kVolumeHeaderBytes + 4 * v.voxels.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(static_cast<std::uint8_t>(v.kind));
  out.insert(out.end(), 3, 0);
  put_u32(out, static_cast<std::uint32_t>(v.dims.d));
  put_u32(out, static_cast<std::uint32_t>(v.dims.h));
  put_u32(out, static_cast<std::uint32_t>(v.dims.w));
  for (float x : v.voxels) {
    std::uint32_t bits;
    std::memcpy(&bits, &x, 4);
    put_u32(out, bits);
  }
  return out;
}

Volume decode_volume(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kVolumeHeaderBytes)
    throw FormatError("truncated volume header: expected " + std::to_string(kVolumeHeaderBytes) +
                      " bytes, got " + std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic, not an FVL1 volume");
  const std::uint8_t kind = bytes[4];
  if (kind > 3) throw FormatError("unknown volume kind code " + std::to_string(kind));
  if (bytes[5] != 0 || bytes[6] != 0 || bytes[7] != 0)
    throw FormatError("reserved header bytes are not zero");
  const std::uint64_t d = get_u32(bytes.data() + 8), h = get_u32(bytes.data() + 12),
                      w = get_u32(bytes.data() + 16);
  check_dims(d, h, w);
  const std::uint64_t expected = kVolumeHeaderBytes + 4 * d * h * w;
  if (bytes.size() != expected)
    throw FormatError((bytes.size() < expected ? "truncated volume payload: expected "
                                               : "trailing bytes after volume payload: expected ") +
                      std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
  Volume v(Dims{static_cast<std::int64_t>(d), static_cast<std::int64_t>(h),
                static_cast<std::int64_t>(w)},
           static_cast<VolumeKind>(kind));
  const std::uint8_t* p = bytes.data() + kVolumeHeaderBytes;
  for (std::size_t i = 0; i < v.voxels.size(); ++i, p += 4) {
    const std::uint32_t bits = get_u32(p);
    std::memcpy(&v.voxels[i], &bits, 4);
  }
  return v;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  const auto bytes = encode_volume(v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Volume load_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_volume(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Moments moments(const Volume& v) {
  Moments m;
  if (v.voxels.empty()) return m;
  double sum = 0.0;
  for (float x : v.voxels) sum += x;
  m.mean = sum / static_cast<double>(v.voxels.size());
  double ss = 0.0;
  for (float x : v.voxels) ss += (x - m.mean) * (x - m.mean);
  m.stddev = std::sqrt(ss / static_cast<double>(v.voxels.size()));
  return m;
}

Volume standardize(const Volume& v) {
  if (v.kind != VolumeKind::amplitude)
    throw std::invalid_argument("standardize expects an amplitude volume, got " + to_string(v.kind));
  if (v.voxels.size() < 2) throw std::invalid_argument("standardize needs at least 2 voxels");
  const Moments m = moments(v);
  Volume out(v.dims, v.kind);
  // tiny spreads are float noise around a constant
  if (m.stddev <= 1e-12 * std::max(1.0, std::abs(m.mean))) return out;
  for (std::size_t i = 0; i < v.voxels.size(); ++i)
    out.voxels[i] = static_cast<float>((v.voxels[i] - m.mean) / m.stddev);
  return out;
}

SliceImage slice_image(const Volume& v, int axis, std::int64_t index) {
  if (axis < 0 || axis > 2) throw std::out_of_range("slice axis must be 0, 1 or 2");
  if (index < 0 || index >= v.dims[axis])
    throw std::out_of_range("slice index " + std::to_string(index) + " outside [0, " +
                            std::to_string(v.dims[axis]) + ") on axis " + std::to_string(axis));
  const int ra = axis == 0 ? 1 : 0;
  const int ca = axis == 2 ? 1 : 2;
  SliceImage img;
  img.height = v.dims[ra];
  img.width = v.dims[ca];
  std::vector<float> vals(static_cast<std::size_t>(img.width * img.height));
  for (std::int64_t r = 0; r < img.height; ++r) {
    for (std::int64_t c = 0; c < img.width; ++c) {
      std::int64_t p[3];
      p[axis] = index;
      p[ra] = r;
      p[ca] = c;
      vals[static_cast<std::size_t>(r * img.width + c)] = v.at(p[0], p[1], p[2]);
    }
  }
  const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
  const double mn = *lo, range = static_cast<double>(*hi) - mn;
  img.pixels.resize(vals.size(), 0);
  if (range > 0.0) {
    for (std::size_t i = 0; i < vals.size(); ++i)
      img.pixels[i] = static_cast<std::uint8_t>(std::lround((vals[i] - mn) / range * 255.0));
  }
  return img;
}

void export_slice(const Volume& v, int axis, std::int64_t index, const std::filesystem::path& path) {
  const SliceImage img = slice_image(v, axis, index);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace faultseg
