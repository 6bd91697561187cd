// 3D cross-correlation kernels.
//
// Stride-1 convolutions work on the zero-padded input flattened to one axis
// per channel. Every kernel tap is then a constant offset, and output column q
// accumulates W[:, :, tap] * X[:, q + offset(tap)]. Columns outside the valid
// output box are computed and discarded during compaction.
//
//   forward      register-blocked direct kernel (8 output channels x 2 vectors)
//   input grad   the same kernel applied to the padded output gradient with the
//                kernel flipped and its channel axes swapped
//   weight grad  blocked dot products over cache-sized column chunks
//
// 1x1x1 convolutions go through BLAS; strided ones take a direct loop path.

#include <cblas.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <string>
#include <vector>

#include "faultseg/autodiff.hpp"

namespace faultseg::kernels {

namespace {

template <typename T>
struct SimdTraits {
  typedef T vec __attribute__((vector_size(64)));
  static constexpr int lanes = 64 / sizeof(T);
};

template <typename T>
using vec_t = typename SimdTraits<T>::vec;

template <typename T>
inline vec_t<T> load(const T* p) {
  vec_t<T> v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <typename T>
inline T hsum(const vec_t<T>& v) {
  T s{0};
  for (int i = 0; i < SimdTraits<T>::lanes; ++i) s += v[i];
  return s;
}

void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

constexpr int kOutBlock = 8;

struct Box {
  std::int64_t d, h, w;
  std::int64_t numel() const { return d * h * w; }
};

// Flattened, zero-padded multi-channel volume with tail slack so vector loads
// past the last column stay in bounds.
template <typename T>
struct PaddedVolume {
  std::int64_t channels = 0;
  Box dims{};  // padded extent
  std::int64_t stride = 0;  // per-channel stride (== dims.numel())
  std::vector<T> data;

  static constexpr std::int64_t slack() { return 4 * SimdTraits<T>::lanes; }
};

template <typename T>
PaddedVolume<T> make_padded(const T* src, std::int64_t channels, Box in, std::array<std::int64_t, 3> pad) {
  PaddedVolume<T> out;
  out.channels = channels;
  out.dims = {in.d + 2 * pad[0], in.h + 2 * pad[1], in.w + 2 * pad[2]};
  out.stride = out.dims.numel();
  out.data.assign(static_cast<std::size_t>(channels * out.stride + PaddedVolume<T>::slack()), T{0});
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t z = 0; z < in.d; ++z) {
      for (std::int64_t y = 0; y < in.h; ++y) {
        const T* s = src + ((c * in.d + z) * in.h + y) * in.w;
        T* d = out.data.data() + c * out.stride + ((z + pad[0]) * out.dims.h + (y + pad[1])) * out.dims.w + pad[2];
        std::copy(s, s + in.w, d);
      }
    }
  }
  return out;
}

// Kernel taps of a padded volume for a (kD, kH, kW) kernel.
template <typename T>
std::vector<std::int64_t> tap_offsets(const PaddedVolume<T>& x, std::int64_t kd, std::int64_t kh,
                                      std::int64_t kw) {
  std::vector<std::int64_t> off;
  off.reserve(static_cast<std::size_t>(kd * kh * kw));
  for (std::int64_t a = 0; a < kd; ++a)
    for (std::int64_t b = 0; b < kh; ++b)
      for (std::int64_t c = 0; c < kw; ++c) off.push_back((a * x.dims.h + b) * x.dims.w + c);
  return off;
}

// Flattened column count covering an output box inside a padded volume.
std::int64_t span_of(Box out, Box padded) {
  return ((out.d - 1) * padded.h + (out.h - 1)) * padded.w + out.w;
}

// acc[o][q] = sum_i sum_t w[i][t][o] * x[i][q + off[t]] for q < span. The
// packed kernel has out-channel count rounded up to kOutBlock.
template <typename T>
void correlate_direct(const PaddedVolume<T>& x, const std::vector<T>& packed, std::int64_t co_padded,
                      const std::vector<std::int64_t>& off, std::int64_t span, std::int64_t co,
                      std::vector<T>& acc) {
  using V = vec_t<T>;
  constexpr int L = SimdTraits<T>::lanes;
  constexpr int QB = 2 * L;
  const auto taps = static_cast<std::int64_t>(off.size());
  acc.assign(static_cast<std::size_t>(co * span), T{0});
  T tmp[QB];
  for (std::int64_t o0 = 0; o0 < co_padded; o0 += kOutBlock) {
    for (std::int64_t q0 = 0; q0 < span; q0 += QB) {
      V a0[kOutBlock] = {};
      V a1[kOutBlock] = {};
      for (std::int64_t i = 0; i < x.channels; ++i) {
        const T* xb = x.data.data() + i * x.stride + q0;
        const T* wb = packed.data() + (i * taps) * co_padded + o0;
        for (std::int64_t t = 0; t < taps; ++t) {
          const T* xr = xb + off[t];
          const V x0 = load<T>(xr);
          const V x1 = load<T>(xr + L);
          const T* wr = wb + t * co_padded;
#pragma GCC unroll 8
          for (int o = 0; o < kOutBlock; ++o) {
            const T w = wr[o];
            a0[o] += w * x0;
            a1[o] += w * x1;
          }
        }
      }
      const std::int64_t qn = std::min<std::int64_t>(QB, span - q0);
      for (int o = 0; o < kOutBlock && o0 + o < co; ++o) {
        std::memcpy(tmp, &a0[o], sizeof(V));
        std::memcpy(tmp + L, &a1[o], sizeof(V));
        std::copy(tmp, tmp + qn, acc.data() + (o0 + o) * span + q0);
      }
    }
  }
}

// Packs w (C_out, C_in, taps) into [C_in][tap][C_out rounded up]. With flip
// set, produces the kernel of the adjoint correlation: channel axes swapped
// and taps reversed.
template <typename T>
std::vector<T> pack_kernel(const Tensor<T>& w, bool flip, std::int64_t& out_padded) {
  const std::int64_t co = w.dim(0), ci = w.dim(1);
  const std::int64_t taps = w.dim(2) * w.dim(3) * w.dim(4);
  const std::int64_t n_out = flip ? ci : co;
  const std::int64_t n_in = flip ? co : ci;
  out_padded = (n_out + kOutBlock - 1) / kOutBlock * kOutBlock;
  std::vector<T> packed(static_cast<std::size_t>(n_in * taps * out_padded), T{0});
  for (std::int64_t o = 0; o < co; ++o)
    for (std::int64_t i = 0; i < ci; ++i)
      for (std::int64_t t = 0; t < taps; ++t) {
        const T v = w[(o * ci + i) * taps + t];
        if (flip) {
          packed[(o * taps + (taps - 1 - t)) * out_padded + i] = v;
        } else {
          packed[(i * taps + t) * out_padded + o] = v;
        }
      }
  return packed;
}

// Copies the valid output box out of a flattened accumulator.
template <typename T>
void compact(const std::vector<T>& acc, std::int64_t channels, std::int64_t span, Box out,
             Box padded, T* dst, bool accumulate, const Tensor<T>* bias) {
  for (std::int64_t o = 0; o < channels; ++o) {
    const T b = bias ? (*bias)[o] : T{0};
    for (std::int64_t z = 0; z < out.d; ++z)
      for (std::int64_t r = 0; r < out.h; ++r) {
        const T* s = acc.data() + o * span + (z * padded.h + r) * padded.w;
        T* d = dst + ((o * out.d + z) * out.h + r) * out.w;
        if (accumulate) {
          for (std::int64_t c = 0; c < out.w; ++c) d[c] += s[c];
        } else {
          for (std::int64_t c = 0; c < out.w; ++c) d[c] = s[c] + b;
        }
      }
  }
}

// dw[o][i][t] += sum_q dyf[o][q] * x[i][q + off[t]], where dyf is the output
// gradient laid out on the padded grid (zeros at discarded columns).
// Rows of dyf are row_stride apart, row_stride >= span rounded up to a vector.
template <typename T>
void weight_grad(const PaddedVolume<T>& x, const std::vector<T>& dyf, std::int64_t co,
                 std::int64_t span, std::int64_t row_stride, const std::vector<std::int64_t>& off,
                 Tensor<T>& dw) {
  using V = vec_t<T>;
  constexpr int L = SimdTraits<T>::lanes;
  constexpr int OB = 4, JB = 4;
  constexpr std::int64_t chunk = 512;
  const auto taps = static_cast<std::int64_t>(off.size());
  const std::int64_t jobs = x.channels * taps;
  const std::vector<T> zero_row(static_cast<std::size_t>(chunk + L), T{0});
  for (std::int64_t q0 = 0; q0 < span; q0 += chunk) {
    const std::int64_t qn = std::min(chunk, span - q0);
    // Round the vector loop up; dyf rows are zero past span.
    const std::int64_t qv = (qn + L - 1) / L * L;
    for (std::int64_t o0 = 0; o0 < co; o0 += OB) {
      const T* dy[OB];
      for (int a = 0; a < OB; ++a) dy[a] = o0 + a < co ? dyf.data() + (o0 + a) * row_stride + q0 : zero_row.data();
      for (std::int64_t j0 = 0; j0 < jobs; j0 += JB) {
        const T* xs[JB];
        for (int b = 0; b < JB; ++b) {
          const std::int64_t j = j0 + b;
          xs[b] = j < jobs ? x.data.data() + (j / taps) * x.stride + off[j % taps] + q0 : zero_row.data();
        }
        V acc[OB][JB] = {};
        for (std::int64_t q = 0; q < qv; q += L) {
          V dv[OB], xv[JB];
          for (int a = 0; a < OB; ++a) dv[a] = load<T>(dy[a] + q);
          for (int b = 0; b < JB; ++b) xv[b] = load<T>(xs[b] + q);
          for (int a = 0; a < OB; ++a)
            for (int b = 0; b < JB; ++b) acc[a][b] += dv[a] * xv[b];
        }
        for (int a = 0; a < OB && o0 + a < co; ++a)
          for (int b = 0; b < JB && j0 + b < jobs; ++b) {
            const std::int64_t j = j0 + b;
            dw[((o0 + a) * x.channels + j / taps) * taps + j % taps] += hsum<T>(acc[a][b]);
          }
      }
    }
  }
}

struct Geometry {
  std::int64_t ci, co, kd, kh, kw;
  Box in, out;
  std::array<std::int64_t, 3> pad;
  int stride;
  std::int64_t taps() const { return kd * kh * kw; }
};

Geometry make_geometry(const Shape& xs, const Shape& ws, const Conv3dOptions& opt) {
  const Shape ys = conv3d_output_shape(xs, ws, opt);
  return Geometry{xs[0], ws[0], ws[2], ws[3], ws[4],
                  Box{xs[1], xs[2], xs[3]}, Box{ys[1], ys[2], ys[3]},
                  {opt.padding[0], opt.padding[1], opt.padding[2]}, opt.stride};
}

bool is_pointwise(const Geometry& g) {
  return g.taps() == 1 && g.stride == 1 && g.pad[0] == 0 && g.pad[1] == 0 && g.pad[2] == 0;
}

template <typename F>
void for_each_tap_strided(const Geometry& g, F&& visit) {
  for (std::int64_t o = 0; o < g.co; ++o)
    for (std::int64_t z = 0; z < g.out.d; ++z)
      for (std::int64_t r = 0; r < g.out.h; ++r)
        for (std::int64_t c = 0; c < g.out.w; ++c) {
          const std::int64_t out = ((o * g.out.d + z) * g.out.h + r) * g.out.w + c;
          for (std::int64_t i = 0; i < g.ci; ++i)
            for (std::int64_t a = 0; a < g.kd; ++a) {
              const std::int64_t iz = z * g.stride + a - g.pad[0];
              if (iz < 0 || iz >= g.in.d) continue;
              for (std::int64_t b = 0; b < g.kh; ++b) {
                const std::int64_t iy = r * g.stride + b - g.pad[1];
                if (iy < 0 || iy >= g.in.h) continue;
                for (std::int64_t e = 0; e < g.kw; ++e) {
                  const std::int64_t ix = c * g.stride + e - g.pad[2];
                  if (ix < 0 || ix >= g.in.w) continue;
                  visit(out, ((i * g.in.d + iz) * g.in.h + iy) * g.in.w + ix,
                        (((o * g.ci + i) * g.kd + a) * g.kh + b) * g.kw + e);
                }
              }
            }
        }
}

}  // namespace

Shape conv3d_output_shape(const Shape& x, const Shape& w, const Conv3dOptions& opt) {
  if (x.size() != 4) throw ShapeError("conv3d input must be (C, D, H, W), got " + shape_str(x));
  if (w.size() != 5) {
    throw ShapeError("conv3d kernel must be (C_out, C_in, kD, kH, kW), got " + shape_str(w));
  }
  if (w[1] != x[0]) {
    throw ShapeError("conv3d channel axis mismatch: input has " + std::to_string(x[0]) +
                     " channels, kernel expects " + std::to_string(w[1]));
  }
  if (opt.stride < 1) throw ShapeError("conv3d stride must be positive");
  static const char* names[] = {"D", "H", "W"};
  Shape out{w[0], 0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t pad = opt.padding[a];
    if (pad < 0) throw ShapeError(std::string("conv3d negative padding on axis ") + names[a]);
    const std::int64_t extent = x[a + 1] + 2 * pad - w[a + 2];
    if (extent < 0) {
      throw ShapeError(std::string("conv3d output size on axis ") + names[a] +
                       " is not positive (input " + std::to_string(x[a + 1]) + ", kernel " +
                       std::to_string(w[a + 2]) + ", padding " + std::to_string(pad) + ")");
    }
    out[a + 1] = extent / opt.stride + 1;
  }
  return out;
}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w,
                         const std::type_identity_t<Tensor<T>>* bias,
                         const Conv3dOptions& opt) {
  const Geometry g = make_geometry(x.shape(), w.shape(), opt);
  if (bias && bias->numel() != g.co) {
    throw ShapeError("conv3d bias length " + std::to_string(bias->numel()) +
                     " does not match output channels " + std::to_string(g.co));
  }
  Tensor<T> y({g.co, g.out.d, g.out.h, g.out.w});
  const std::int64_t n = g.out.numel();
  if (is_pointwise(g)) {
    gemm(false, false, static_cast<int>(g.co), static_cast<int>(n), static_cast<int>(g.ci), T{1},
         w.ptr(), static_cast<int>(g.ci), x.ptr(), static_cast<int>(n), T{0}, y.ptr(),
         static_cast<int>(n));
    if (bias) {
      for (std::int64_t o = 0; o < g.co; ++o)
        for (std::int64_t v = 0; v < n; ++v) y[o * n + v] += (*bias)[o];
    }
    return y;
  }
  if (g.stride == 1) {
    const PaddedVolume<T> xp = make_padded(x.ptr(), g.ci, g.in, g.pad);
    std::int64_t co_padded = 0;
    const std::vector<T> packed = pack_kernel(w, false, co_padded);
    const auto off = tap_offsets(xp, g.kd, g.kh, g.kw);
    const std::int64_t span = span_of(g.out, xp.dims);
    std::vector<T> acc;
    correlate_direct(xp, packed, co_padded, off, span, g.co, acc);
    compact(acc, g.co, span, g.out, xp.dims, y.ptr(), false, bias);
    return y;
  }
  for_each_tap_strided(g, [&](std::int64_t o, std::int64_t i, std::int64_t k) { y[o] += w[k] * x[i]; });
  if (bias) {
    for (std::int64_t o = 0; o < g.co; ++o)
      for (std::int64_t v = 0; v < n; ++v) y[o * n + v] += (*bias)[o];
  }
  return y;
}

template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     const Conv3dOptions& opt, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const Geometry g = make_geometry(x.shape(), w.shape(), opt);
  const std::int64_t n = g.out.numel();
  if (db) {
    for (std::int64_t o = 0; o < g.co; ++o) {
      T s{0};
      for (std::int64_t v = 0; v < n; ++v) s += dy[o * n + v];
      (*db)[o] += s;
    }
  }
  if (is_pointwise(g)) {
    if (dx) {
      gemm(true, false, static_cast<int>(g.ci), static_cast<int>(n), static_cast<int>(g.co), T{1},
           w.ptr(), static_cast<int>(g.ci), dy.ptr(), static_cast<int>(n), T{1}, dx->ptr(),
           static_cast<int>(n));
    }
    if (dw) {
      gemm(false, true, static_cast<int>(g.co), static_cast<int>(g.ci), static_cast<int>(n), T{1},
           dy.ptr(), static_cast<int>(n), x.ptr(), static_cast<int>(n), T{1}, dw->ptr(),
           static_cast<int>(g.ci));
    }
    return;
  }
  const bool flip_ok = g.pad[0] < g.kd && g.pad[1] < g.kh && g.pad[2] < g.kw;
  if (g.stride != 1 || !flip_ok) {
    for_each_tap_strided(g, [&](std::int64_t o, std::int64_t i, std::int64_t k) {
      if (dx) (*dx)[i] += w[k] * dy[o];
      if (dw) (*dw)[k] += x[i] * dy[o];
    });
    return;
  }
  if (dw) {
    const PaddedVolume<T> xp = make_padded(x.ptr(), g.ci, g.in, g.pad);
    const auto off = tap_offsets(xp, g.kd, g.kh, g.kw);
    const std::int64_t span = span_of(g.out, xp.dims);
    constexpr std::int64_t L = SimdTraits<T>::lanes;
    const std::int64_t row_stride = (span + L - 1) / L * L;
    std::vector<T> dyf(static_cast<std::size_t>(g.co * row_stride), T{0});
    for (std::int64_t o = 0; o < g.co; ++o)
      for (std::int64_t z = 0; z < g.out.d; ++z)
        for (std::int64_t r = 0; r < g.out.h; ++r) {
          const T* s = dy.ptr() + ((o * g.out.d + z) * g.out.h + r) * g.out.w;
          std::copy(s, s + g.out.w, dyf.data() + o * row_stride + (z * xp.dims.h + r) * xp.dims.w);
        }
    weight_grad(xp, dyf, g.co, span, row_stride, off, *dw);
  }
  if (dx) {
    // Full correlation of dy with the flipped kernel.
    const std::array<std::int64_t, 3> back_pad{g.kd - 1 - g.pad[0], g.kh - 1 - g.pad[1],
                                               g.kw - 1 - g.pad[2]};
    const PaddedVolume<T> dyp = make_padded(dy.ptr(), g.co, g.out, back_pad);
    std::int64_t ci_padded = 0;
    const std::vector<T> packed = pack_kernel(w, true, ci_padded);
    const auto off = tap_offsets(dyp, g.kd, g.kh, g.kw);
    const std::int64_t span = span_of(g.in, dyp.dims);
    std::vector<T> acc;
    correlate_direct(dyp, packed, ci_padded, off, span, g.ci, acc);
    compact(acc, g.ci, span, g.in, dyp.dims, dx->ptr(), true, static_cast<const Tensor<T>*>(nullptr));
  }
}

template Tensor<float> conv3d_forward(const Tensor<float>&, const Tensor<float>&,
                                      const Tensor<float>*, const Conv3dOptions&);
template Tensor<double> conv3d_forward(const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>*, const Conv3dOptions&);
template void conv3d_backward(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                              const Conv3dOptions&, Tensor<float>*, Tensor<float>*, Tensor<float>*);
template void conv3d_backward(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                              const Conv3dOptions&, Tensor<double>*, Tensor<double>*,
                              Tensor<double>*);

}  // namespace faultseg::kernels
