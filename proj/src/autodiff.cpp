#include "faultseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace faultseg {

template <typename T>
Var Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, std::span<const Var> inputs, Backward backward) {
#ifndef NDEBUG
  if (!all_finite(value)) throw NumericError("non-finite activation produced by a graph op");
#endif
  Node n;
  n.value = std::move(value);
  for (Var v : inputs) {
    if (v.valid()) n.requires_grad = n.requires_grad || nodes_.at(v.id).requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T> Graph<T>::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (!n.grad.empty()) return n.grad;
  return Tensor<T>(n.value.shape());
}

template <typename T>
Tensor<T>& Graph<T>::grad_of(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var root, T seed, bool retain_intermediate) {
  if (nodes_.at(root.id).value.numel() != 1) {
    throw ShapeError("backward root must be a scalar, got shape " +
                     shape_str(nodes_[root.id].value.shape()));
  }
  grad_of(root)[0] += seed;
  for (std::int32_t i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.is_leaf || !n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.value, n.grad);
    if (!retain_intermediate) n.grad = Tensor<T>{};
  }
}

template <typename T>
void Graph<T>::zero_grad() {
  for (Node& n : nodes_) n.grad = Tensor<T>{};
}

template class Graph<float>;
template class Graph<double>;

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      throw ShapeError(std::string(op) + ": axis " + std::to_string(i) + " mismatch " +
                       shape_str(a) + " vs " + shape_str(b));
    }
  }
}

void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + " expects (C, D, H, W), got " + shape_str(s));
}

}  // namespace

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> y(xv.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = T{1} / (std::exp(-xv[i]) + T{1});
  return g.record(std::move(y), {x}, [x](Graph<T>& gr, const Tensor<T>& yv, const Tensor<T>& gy) {
    Tensor<T>& gx = gr.grad_of(x);
    for (std::int64_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * yv[i] * (T{1} - yv[i]);
  });
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> y(xv.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = xv[i] > T{0} ? xv[i] : T{0};
  return g.record(std::move(y), {x}, [x](Graph<T>& gr, const Tensor<T>& yv, const Tensor<T>& gy) {
    Tensor<T>& gx = gr.grad_of(x);
    for (std::int64_t i = 0; i < gy.numel(); ++i) {
      if (yv[i] > T{0}) gx[i] += gy[i];
    }
  });
}

template <typename T>
Var conv3d(Graph<T>& g, Var x, Var kernel, Var bias, const Conv3dOptions& opt) {
  const Tensor<T>* b = bias.valid() ? &g.value(bias) : nullptr;
  Tensor<T> y = kernels::conv3d_forward(g.value(x), g.value(kernel), b, opt);
  return g.record(std::move(y), {x, kernel, bias},
                  [x, kernel, bias, opt](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& gy) {
                    Tensor<T>* gx = gr.requires_grad(x) ? &gr.grad_of(x) : nullptr;
                    Tensor<T>* gw = gr.requires_grad(kernel) ? &gr.grad_of(kernel) : nullptr;
                    Tensor<T>* gb =
                        bias.valid() && gr.requires_grad(bias) ? &gr.grad_of(bias) : nullptr;
                    kernels::conv3d_backward(gr.value(x), gr.value(kernel), gy, opt, gx, gw, gb);
                  });
}

template <typename T>
Var maxpool3d(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  require_rank4(xv.shape(), "maxpool3d");
  const std::int64_t c = xv.dim(0), d = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (d % 2 || h % 2 || w % 2) {
    throw ShapeError("maxpool3d needs even spatial dims, got " + shape_str(xv.shape()));
  }
  const std::int64_t od = d / 2, oh = h / 2, ow = w / 2;
  Tensor<T> y({c, od, oh, ow});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(y.numel()));
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t z = 0; z < od; ++z)
      for (std::int64_t r = 0; r < oh; ++r)
        for (std::int64_t q = 0; q < ow; ++q) {
          std::int64_t best = ((ch * d + 2 * z) * h + 2 * r) * w + 2 * q;
          for (std::int64_t a = 0; a < 2; ++a)
            for (std::int64_t b = 0; b < 2; ++b)
              for (std::int64_t e = 0; e < 2; ++e) {
                const std::int64_t idx = ((ch * d + 2 * z + a) * h + 2 * r + b) * w + 2 * q + e;
                if (xv[idx] > xv[best]) best = idx;
              }
          const std::int64_t o = ((ch * od + z) * oh + r) * ow + q;
          y[o] = xv[best];
          argmax[static_cast<std::size_t>(o)] = best;
        }
  return g.record(std::move(y), {x},
                  [x, argmax = std::move(argmax)](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& gy) {
                    Tensor<T>& gx = gr.grad_of(x);
                    for (std::int64_t o = 0; o < gy.numel(); ++o) gx[argmax[o]] += gy[o];
                  });
}

template <typename T>
Var upsample3d(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  require_rank4(xv.shape(), "upsample3d");
  const std::int64_t c = xv.dim(0), d = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor<T> y({c, 2 * d, 2 * h, 2 * w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t z = 0; z < 2 * d; ++z)
      for (std::int64_t r = 0; r < 2 * h; ++r) {
        const T* src = xv.ptr() + ((ch * d + z / 2) * h + r / 2) * w;
        T* dst = y.ptr() + ((ch * 2 * d + z) * 2 * h + r) * 2 * w;
        for (std::int64_t q = 0; q < 2 * w; ++q) dst[q] = src[q / 2];
      }
  return g.record(std::move(y), {x}, [x](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& gy) {
    Tensor<T>& gx = gr.grad_of(x);
    const std::int64_t c = gx.dim(0), d = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t z = 0; z < 2 * d; ++z)
        for (std::int64_t r = 0; r < 2 * h; ++r) {
          const T* src = gy.ptr() + ((ch * 2 * d + z) * 2 * h + r) * 2 * w;
          T* dst = gx.ptr() + ((ch * d + z / 2) * h + r / 2) * w;
          for (std::int64_t q = 0; q < 2 * w; ++q) dst[q / 2] += src[q];
        }
  });
}

template <typename T>
Var concat(Graph<T>& g, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat needs at least one input");
  const Shape& first = g.value(parts[0]).shape();
  require_rank4(first, "concat");
  std::int64_t channels = 0;
  for (Var p : parts) {
    const Shape& s = g.value(p).shape();
    require_rank4(s, "concat");
    for (std::size_t a = 1; a < 4; ++a) {
      if (s[a] != first[a]) {
        throw ShapeError("concat: axis " + std::to_string(a) + " mismatch " + shape_str(first) +
                         " vs " + shape_str(s));
      }
    }
    channels += s[0];
  }
  Tensor<T> y({channels, first[1], first[2], first[3]});
  std::int64_t offset = 0;
  for (Var p : parts) {
    const Tensor<T>& v = g.value(p);
    std::copy(v.ptr(), v.ptr() + v.numel(), y.ptr() + offset);
    offset += v.numel();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record(std::move(y), parts, [inputs](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& gy) {
    std::int64_t off = 0;
    for (Var p : inputs) {
      const std::int64_t n = gr.value(p).numel();
      if (gr.requires_grad(p)) {
        Tensor<T>& gp = gr.grad_of(p);
        for (std::int64_t i = 0; i < n; ++i) gp[i] += gy[off + i];
      }
      off += n;
    }
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require_same_shape(av.shape(), bv.shape(), "add");
  Tensor<T> y(av.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] + bv[i];
  return g.record(std::move(y), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& gy) {
    for (Var v : {a, b}) {
      if (!gr.requires_grad(v)) continue;
      Tensor<T>& gv = gr.grad_of(v);
      for (std::int64_t i = 0; i < gy.numel(); ++i) gv[i] += gy[i];
    }
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  const bool broadcast = av.shape() != bv.shape();
  if (broadcast) {
    require_rank4(av.shape(), "mul");
    require_rank4(bv.shape(), "mul");
    if (bv.dim(0) != 1) {
      throw ShapeError("mul: axis 0 mismatch " + shape_str(av.shape()) + " vs " +
                       shape_str(bv.shape()) + " (broadcast operand needs one channel)");
    }
    for (std::size_t ax = 1; ax < 4; ++ax) {
      if (av.dim(ax) != bv.dim(ax)) {
        throw ShapeError("mul: axis " + std::to_string(ax) + " mismatch " +
                         shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
      }
    }
  }
  const std::int64_t plane = bv.numel();
  Tensor<T> y(av.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] * bv[broadcast ? i % plane : i];
  return g.record(std::move(y), {a, b},
                  [a, b, broadcast, plane](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& gy) {
                    const Tensor<T>& av = gr.value(a);
                    const Tensor<T>& bv = gr.value(b);
                    if (gr.requires_grad(a)) {
                      Tensor<T>& ga = gr.grad_of(a);
                      for (std::int64_t i = 0; i < gy.numel(); ++i)
                        ga[i] += gy[i] * bv[broadcast ? i % plane : i];
                    }
                    if (gr.requires_grad(b)) {
                      Tensor<T>& gb = gr.grad_of(b);
                      for (std::int64_t i = 0; i < gy.numel(); ++i)
                        gb[broadcast ? i % plane : i] += gy[i] * av[i];
                    }
                  });
}

template <typename T>
Var reduce_sum(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  T s{0};
  for (T v : xv.data()) s += v;
  return g.record(Tensor<T>({1}, s), {x}, [x](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& gy) {
    Tensor<T>& gx = gr.grad_of(x);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += gy[0];
  });
}

template <typename T>
Var scale(Graph<T>& g, Var x, T factor) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> y(xv.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = xv[i] * factor;
  return g.record(std::move(y), {x}, [x, factor](Graph<T>& gr, const Tensor<T>&, const Tensor<T>& gy) {
    Tensor<T>& gx = gr.grad_of(x);
    for (std::int64_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * factor;
  });
}

#define FAULTSEG_INSTANTIATE_OPS(T)                                              \
  template Var sigmoid(Graph<T>&, Var);                                          \
  template Var relu(Graph<T>&, Var);                                             \
  template Var conv3d(Graph<T>&, Var, Var, Var, const Conv3dOptions&);           \
  template Var maxpool3d(Graph<T>&, Var);                                        \
  template Var upsample3d(Graph<T>&, Var);                                       \
  template Var concat(Graph<T>&, std::span<const Var>);                          \
  template Var add(Graph<T>&, Var, Var);                                         \
  template Var mul(Graph<T>&, Var, Var);                                         \
  template Var reduce_sum(Graph<T>&, Var);                                       \
  template Var scale(Graph<T>&, Var, T);

FAULTSEG_INSTANTIATE_OPS(float)
FAULTSEG_INSTANTIATE_OPS(double)

}  // namespace faultseg
