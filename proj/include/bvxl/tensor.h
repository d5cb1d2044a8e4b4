#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bvxl/error.h"

namespace bvxl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct TensorNode;

/// Disables graph recording on the current thread for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

/// Dense row-major array with reverse-mode differentiation.
///
/// A BasicTensor is a shared handle: copies refer to the same node. Values of
/// non-leaf tensors are fixed once the op that produced them returns; only the
/// gradient buffer changes afterwards. Leaves (parameters) may be updated in place
/// through mutable_values() between graph constructions.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using BackwardFn = std::function<void(TensorNode<T>&)>;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t ndim() const { return shape().size(); }

  std::span<const T> values() const;
  /// In-place access for leaf tensors; throws for tensors produced by an op.
  std::span<T> mutable_values();
  T item() const;
  T at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  BasicTensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  /// Empty span until a backward pass has reached this tensor.
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Reverse-mode accumulation from this scalar into every requires_grad leaf.
  void backward() const;

  /// Copy of the values with no graph history.
  BasicTensor detach() const;

  /// Constructs an op result. Records parents and the backward closure only when
  /// grad mode is enabled and at least one parent requires a gradient.
  static BasicTensor make_result(Shape shape, std::vector<T> values, std::vector<BasicTensor> parents,
                                 BackwardFn backward);

  TensorNode<T>* node() const { return node_.get(); }

 private:
  explicit BasicTensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode<T>> node_;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  typename BasicTensor<T>::BackwardFn backward;

  /// Zero-initialises the gradient buffer on first use.
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), T(0));
    return grad;
  }
  bool wants_grad() const { return requires_grad; }
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

enum class ElementwiseOp { add, mul, sub, relu, sigmoid, exp, log, square, sqrt };
enum class ReduceOp { sum, mean, max };

/// Dispatches to the named op. Binary ops need equal shapes or a one-element operand.
template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b = {});

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a);
/// Throws NumericalError on any non-positive element.
template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> square(const BasicTensor<T>& a);
/// Throws NumericalError on any negative element.
template <typename T>
BasicTensor<T> sqrt(const BasicTensor<T>& a);

/// log(1 + exp(x)), evaluated without overflow.
template <typename T>
BasicTensor<T> softplus(const BasicTensor<T>& a);
/// a * factor + offset with constant factor/offset.
template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& a, double factor, double offset = 0.0);

/// Reduces over `axes` (all axes when empty). Reduced axes are removed; a full
/// reduction yields shape {1}. Max routes its gradient to the first maximal element.
template <typename T>
BasicTensor<T> reduce(ReduceOp op, const BasicTensor<T>& a, const std::vector<std::size_t>& axes = {});
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  return reduce(ReduceOp::sum, a);
}

/// x[c, ...] + bias[c]; x's leading axis indexes channels.
template <typename T>
BasicTensor<T> add_channel_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);
/// x[c, ...] * scale[c].
template <typename T>
BasicTensor<T> scale_channels(const BasicTensor<T>& x, const BasicTensor<T>& scale);

/// Summed softmax cross-entropy over voxels. logits has shape [C, ...] with the
/// trailing axes flattened into V voxels; labels holds V class indices.
template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> labels);

/// Per-voxel softmax over the leading (class) axis; no graph is recorded.
template <typename T>
std::vector<T> softmax_channels(const BasicTensor<T>& logits);

/// Sum of every tensor in the list (all must be scalars or share a shape).
template <typename T>
BasicTensor<T> add_all(const std::vector<BasicTensor<T>>& terms);

}  // namespace bvxl
