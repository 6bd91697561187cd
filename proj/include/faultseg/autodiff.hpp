#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <type_traits>
#include <vector>

#include "faultseg/tensor.hpp"

namespace faultseg {

/// Handle to a node recorded in a Graph.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Define-by-run tape. Nodes are appended in evaluation order, so reverse
/// insertion order is a topological order and backward() visits every node
/// once.
template <typename T>
class Graph {
 public:
  /// Propagates the node's output gradient into its inputs via grad_of().
  using Backward =
      std::function<void(Graph&, const Tensor<T>& out_value, const Tensor<T>& out_grad)>;

  Var leaf(Tensor<T> value, bool requires_grad = true);
  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Records an op result. The backward closure is dropped when no input
  /// requires a gradient.
  Var record(Tensor<T> value, std::span<const Var> inputs, Backward backward);
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Accumulated gradient; a zero tensor when nothing flowed into the node.
  Tensor<T> grad(Var v) const;

  /// Mutable gradient accumulator, allocated as zeros on first use.
  Tensor<T>& grad_of(Var v);

  /// Seeds d(root)/d(root) = seed (root must hold one element) and runs the
  /// reverse sweep. Intermediate gradients are released as soon as they have
  /// been propagated unless retain_intermediate is set; leaf gradients are
  /// always kept.
  void backward(Var root, T seed = T{1}, bool retain_intermediate = false);

  void zero_grad();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };
  std::vector<Node> nodes_;
};

struct Conv3dOptions {
  int stride = 1;
  std::array<int, 3> padding{0, 0, 0};
};

namespace kernels {

/// Cross-correlation of x (C_in, D, H, W) with w (C_out, C_in, kD, kH, kW).
/// bias may be empty.
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w,
                         const std::type_identity_t<Tensor<T>>* bias,
                         const Conv3dOptions& opt);

/// Adds the adjoints into dx/dw/db (each may be null).
template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     const Conv3dOptions& opt, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db);

/// Output shape of conv3d_forward; throws ShapeError on mismatch.
Shape conv3d_output_shape(const Shape& x, const Shape& w, const Conv3dOptions& opt);

}  // namespace kernels

// Primitive ops. Every op records an exact adjoint.

template <typename T>
Var sigmoid(Graph<T>& g, Var x);
template <typename T>
Var relu(Graph<T>& g, Var x);
/// bias is optional (pass Var{}).
template <typename T>
Var conv3d(Graph<T>& g, Var x, Var kernel, Var bias, const Conv3dOptions& opt = {});
/// 2x2x2 max pooling, stride 2. Ties resolve to the first element in scan order.
template <typename T>
Var maxpool3d(Graph<T>& g, Var x);
/// Nearest-neighbour x2 upsampling.
template <typename T>
Var upsample3d(Graph<T>& g, Var x);
/// Concatenation along the channel axis.
template <typename T>
Var concat(Graph<T>& g, std::span<const Var> parts);
template <typename T>
Var add(Graph<T>& g, Var a, Var b);
/// Elementwise product; b may have one channel and is then broadcast over a's channels.
template <typename T>
Var mul(Graph<T>& g, Var a, Var b);
/// Sum of all elements, as a one-element tensor.
template <typename T>
Var reduce_sum(Graph<T>& g, Var x);
template <typename T>
Var scale(Graph<T>& g, Var x, T factor);

}  // namespace faultseg
