#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "faultseg/tensor.hpp"

namespace faultseg {

enum class VolumeKind : std::uint8_t { amplitude = 0, probability = 1, label = 2, weight = 3 };

std::string to_string(VolumeKind kind);

struct Dims {
  std::int64_t d = 0, h = 0, w = 0;

  std::int64_t numel() const { return d * h * w; }
  std::int64_t operator[](int axis) const { return axis == 0 ? d : axis == 1 ? h : w; }
  bool cubic() const { return d == h && h == w; }
  bool operator==(const Dims&) const = default;
};

/// Dense scalar field on a (D, H, W) grid, W fastest. Axis 2 is the depth
/// (time) axis; axes 0 and 1 are the inline- and crossline-like horizontal
/// directions.
struct Volume {
  Dims dims;
  VolumeKind kind = VolumeKind::amplitude;
  std::vector<float> voxels;

  Volume() = default;
  Volume(Dims dims, VolumeKind kind, float fill = 0.0f)
      : dims(dims), kind(kind), voxels(static_cast<std::size_t>(dims.numel()), fill) {}

  std::int64_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return (z * dims.h + y) * dims.w + x;
  }
  float& at(std::int64_t z, std::int64_t y, std::int64_t x) {
    return voxels[static_cast<std::size_t>(index(z, y, x))];
  }
  float at(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return voxels[static_cast<std::size_t>(index(z, y, x))];
  }
  std::int64_t numel() const { return dims.numel(); }

  bool operator==(const Volume&) const = default;
};

/// Throws DataError when the voxels violate the kind's value domain
/// (probability in [0, 1], label in {-1, 0, 1}) or the buffer size is wrong.
void validate(const Volume& v);

/// One-channel (1, D, H, W) tensor view of a volume, converted to T.
template <typename T>
Tensor<T> to_tensor(const Volume& v);

/// Volume from a (1, D, H, W) or (D, H, W) tensor.
template <typename T>
Volume from_tensor(const Tensor<T>& t, VolumeKind kind);

// FVOL container: "FVL1", kind u8, 3 zero bytes, D/H/W as little-endian u32,
// then D*H*W little-endian float32 voxels, W fastest.
inline constexpr std::size_t kVolumeHeaderBytes = 20;

std::vector<std::uint8_t> encode_volume(const Volume& v);
Volume decode_volume(std::span<const std::uint8_t> bytes);

void save_volume(const Volume& v, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);

/// Zero-mean, unit population standard deviation. A constant volume maps to
/// all zeros.
Volume standardize(const Volume& v);

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;  ///< population
};
Moments moments(const Volume& v);

/// 8-bit slice image, min-max scaled over the slice; a constant slice maps to 0.
struct SliceImage {
  std::int64_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  ///< row-major
};

/// Slice perpendicular to `axis` at `index`. Rows and columns are the two
/// remaining axes in increasing order.
SliceImage slice_image(const Volume& v, int axis, std::int64_t index);

/// Writes slice_image() as a binary P5 PGM with maxval 255.
void export_slice(const Volume& v, int axis, std::int64_t index, const std::filesystem::path& path);

}  // namespace faultseg
