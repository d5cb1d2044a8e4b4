#include "bvxl/tensor.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace bvxl {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// BasicTensor

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor shape " + shape_string(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  node_ = std::make_shared<TensorNode<T>>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
  if (!node_) throw ShapeError("use of an undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t BasicTensor<T>::numel() const {
  return node_ ? node_->values.size() : 0;
}

template <typename T>
std::span<const T> BasicTensor<T>::values() const {
  if (!node_) throw ShapeError("use of an undefined tensor");
  return node_->values;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_values() {
  if (!node_) throw ShapeError("use of an undefined tensor");
  if (!node_->leaf) throw Error("mutable_values() is only available on leaf tensors");
  return node_->values;
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() needs a one-element tensor, got " + shape_string(shape()));
  return node_->values[0];
}

template <typename T>
bool BasicTensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool flag) {
  if (!node_) throw ShapeError("use of an undefined tensor");
  if (!node_->leaf) throw Error("requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
  return *this;
}

template <typename T>
bool BasicTensor<T>::is_leaf() const {
  return node_ && node_->leaf;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  if (!node_) return {};
  return node_->grad;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  if (!node_) return {};
  return node_->grad_buffer();
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(shape(), std::vector<T>(values().begin(), values().end()));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::make_result(Shape shape, std::vector<T> values, std::vector<BasicTensor> parents,
                                           BackwardFn backward) {
  BasicTensor out(std::move(shape), std::move(values));
  out.node_->leaf = false;
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(parents.begin(), parents.end(), [](const BasicTensor& p) { return p.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->backward = std::move(backward);
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  return out;
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (!node_) throw ShapeError("backward() on an undefined tensor");
  if (node_->values.size() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_string(node_->shape));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      TensorNode<T>* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (n->leaf || !n->backward) continue;
    if (!n->grad.empty()) n->backward(*n);
    // Intermediate gradients are consumed; release them.
    std::vector<T>().swap(n->grad);
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;

// ---------------------------------------------------------------------------
// Elementwise ops

namespace {

template <typename T>
TensorNode<T>& parent(TensorNode<T>& n, std::size_t i) {
  return *n.parents[i];
}

template <typename T>
void check_binary(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* name) {
  if (!a.defined() || !b.defined()) throw ShapeError(std::string(name) + ": both operands must be defined");
  if (a.shape() == b.shape() || a.numel() == 1 || b.numel() == 1) return;
  throw ShapeError(std::string(name) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                   shape_string(b.shape()));
}

// Gradient flowing into an operand that may have been broadcast from one element.
template <typename T>
void accumulate_operand(TensorNode<T>& operand, std::span<const T> contribution) {
  if (!operand.requires_grad) return;
  auto& g = operand.grad_buffer();
  if (g.size() == contribution.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
  } else {
    double total = 0;
    for (T c : contribution) total += c;
    g[0] += static_cast<T>(total);
  }
}

enum class Binary { add, sub, mul };

template <typename T>
BasicTensor<T> binary(Binary kind, const BasicTensor<T>& a, const BasicTensor<T>& b, const char* name) {
  check_binary(a, b, name);
  const bool a_full = a.numel() >= b.numel();
  const Shape shape = a_full ? a.shape() : b.shape();
  const std::size_t n = shape_numel(shape);
  auto av = a.values();
  auto bv = b.values();
  const std::size_t sa = av.size() == 1 ? 0 : 1;
  const std::size_t sb = bv.size() == 1 ? 0 : 1;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = av[i * sa], y = bv[i * sb];
    out[i] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
  }
  return BasicTensor<T>::make_result(shape, std::move(out), {a, b}, [kind, sa, sb](TensorNode<T>& self) {
    TensorNode<T>& pa = parent(self, 0);
    TensorNode<T>& pb = parent(self, 1);
    const std::size_t n = self.grad.size();
    std::vector<T> ga(pa.requires_grad ? n : 0), gb(pb.requires_grad ? n : 0);
    for (std::size_t i = 0; i < n; ++i) {
      const T g = self.grad[i];
      if (!ga.empty()) ga[i] = kind == Binary::mul ? g * pb.values[i * sb] : g;
      if (!gb.empty()) gb[i] = kind == Binary::mul ? g * pa.values[i * sa] : (kind == Binary::sub ? -g : g);
    }
    accumulate_operand<T>(pa, ga);
    accumulate_operand<T>(pb, gb);
  });
}

// Unary op with derivative expressed through input x and output y.
template <typename T, typename F, typename D>
BasicTensor<T> unary(const BasicTensor<T>& a, F f, D dfdx) {
  if (!a.defined()) throw ShapeError("unary op on an undefined tensor");
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {a}, [dfdx](TensorNode<T>& self) {
    TensorNode<T>& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.values[i], self.values[i]);
  });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(Binary::add, a, b, "add");
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(Binary::sub, a, b, "sub");
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(Binary::mul, a, b, "mul");
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  return unary(
      a, [](T x) { return x < T(0) ? T(0) : x; }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  return unary(
      a, [](T x) { return stable_sigmoid(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  return unary(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a) {
  for (T x : a.values())
    if (!(x > T(0))) throw NumericalError("log of non-positive value " + std::to_string(x));
  return unary(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& a) {
  return unary(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
BasicTensor<T> sqrt(const BasicTensor<T>& a) {
  for (T x : a.values())
    if (x < T(0)) throw NumericalError("sqrt of negative value " + std::to_string(x));
  return unary(
      a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
BasicTensor<T> softplus(const BasicTensor<T>& a) {
  return unary(
      a, [](T x) { return stable_softplus(x); }, [](T x, T) { return stable_sigmoid(x); });
}

template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& a, double factor, double offset) {
  const T f = static_cast<T>(factor), o = static_cast<T>(offset);
  return unary(
      a, [f, o](T x) { return x * f + o; }, [f](T, T) { return f; });
}

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  switch (op) {
    case ElementwiseOp::add:
      return add(a, b);
    case ElementwiseOp::sub:
      return sub(a, b);
    case ElementwiseOp::mul:
      return mul(a, b);
    case ElementwiseOp::relu:
      return relu(a);
    case ElementwiseOp::sigmoid:
      return sigmoid(a);
    case ElementwiseOp::exp:
      return exp(a);
    case ElementwiseOp::log:
      return log(a);
    case ElementwiseOp::square:
      return square(a);
    case ElementwiseOp::sqrt:
      return sqrt(a);
  }
  throw Error("unknown elementwise op");
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
BasicTensor<T> reduce(ReduceOp op, const BasicTensor<T>& a, const std::vector<std::size_t>& axes_in) {
  const Shape& in_shape = a.shape();
  const std::size_t rank = in_shape.size();
  std::vector<bool> reduced(rank, axes_in.empty());
  for (std::size_t ax : axes_in) {
    if (ax >= rank)
      throw ShapeError("reduce: axis " + std::to_string(ax) + " invalid for shape " + shape_string(in_shape));
    reduced[ax] = true;
  }
  Shape out_shape;
  for (std::size_t i = 0; i < rank; ++i)
    if (!reduced[i]) out_shape.push_back(in_shape[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  // Map every input flat index to its output flat index.
  const std::size_t n = a.numel();
  std::vector<std::size_t> target(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < rank; ++d)
        if (!reduced[d]) o = o * in_shape[d] + idx[d];
      target[flat] = o;
      for (std::size_t d = rank; d-- > 0;) {
        if (++idx[d] < in_shape[d]) break;
        idx[d] = 0;
      }
    }
  }
  const std::size_t out_n = shape_numel(out_shape);
  const std::size_t group = n / out_n;
  auto av = a.values();

  if (op == ReduceOp::max) {
    std::vector<T> out(out_n, -std::numeric_limits<T>::infinity());
    std::vector<std::size_t> arg(out_n, n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t o = target[i];
      if (arg[o] == n || av[i] > out[o]) {
        out[o] = av[i];
        arg[o] = i;
      }
    }
    return BasicTensor<T>::make_result(out_shape, std::move(out), {a}, [arg](TensorNode<T>& self) {
      TensorNode<T>& p = *self.parents[0];
      if (!p.requires_grad) return;
      auto& g = p.grad_buffer();
      for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
    });
  }

  std::vector<double> acc(out_n, 0.0);
  for (std::size_t i = 0; i < n; ++i) acc[target[i]] += av[i];
  const double scale = op == ReduceOp::mean ? 1.0 / static_cast<double>(group) : 1.0;
  std::vector<T> out(out_n);
  for (std::size_t o = 0; o < out_n; ++o) out[o] = static_cast<T>(acc[o] * scale);
  return BasicTensor<T>::make_result(out_shape, std::move(out), {a},
                                     [target = std::move(target), scale](TensorNode<T>& self) {
                                       TensorNode<T>& p = *self.parents[0];
                                       if (!p.requires_grad) return;
                                       auto& g = p.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                         g[i] += static_cast<T>(self.grad[target[i]] * scale);
                                     });
}

// ---------------------------------------------------------------------------
// Channel ops

template <typename T>
BasicTensor<T> add_channel_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  const std::size_t channels = x.dim(0);
  if (bias.numel() != channels)
    throw ShapeError("add_channel_bias: bias " + shape_string(bias.shape()) + " vs input " + shape_string(x.shape()));
  const std::size_t inner = x.numel() / channels;
  std::vector<T> out(x.values().begin(), x.values().end());
  auto bv = bias.values();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] += bv[c];
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {x, bias}, [channels, inner](TensorNode<T>& self) {
    TensorNode<T>& px = *self.parents[0];
    TensorNode<T>& pb = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t c = 0; c < channels; ++c) {
        double s = 0;
        for (std::size_t i = 0; i < inner; ++i) s += self.grad[c * inner + i];
        g[c] += static_cast<T>(s);
      }
    }
  });
}

template <typename T>
BasicTensor<T> scale_channels(const BasicTensor<T>& x, const BasicTensor<T>& scale) {
  const std::size_t channels = x.dim(0);
  if (scale.numel() != channels)
    throw ShapeError("scale_channels: scale " + shape_string(scale.shape()) + " vs input " + shape_string(x.shape()));
  const std::size_t inner = x.numel() / channels;
  auto xv = x.values();
  auto sv = scale.values();
  std::vector<T> out(xv.size());
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] = xv[c * inner + i] * sv[c];
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {x, scale}, [channels, inner](TensorNode<T>& self) {
    TensorNode<T>& px = *self.parents[0];
    TensorNode<T>& ps = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < inner; ++i) g[c * inner + i] += self.grad[c * inner + i] * ps.values[c];
    }
    if (ps.requires_grad) {
      auto& g = ps.grad_buffer();
      for (std::size_t c = 0; c < channels; ++c) {
        double s = 0;
        for (std::size_t i = 0; i < inner; ++i) s += double(self.grad[c * inner + i]) * px.values[c * inner + i];
        g[c] += static_cast<T>(s);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy

template <typename T>
std::vector<T> softmax_channels(const BasicTensor<T>& logits) {
  const std::size_t classes = logits.dim(0);
  const std::size_t voxels = logits.numel() / classes;
  auto lv = logits.values();
  std::vector<T> probs(lv.size());
  for (std::size_t v = 0; v < voxels; ++v) {
    double mx = lv[v];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max<double>(mx, lv[c * voxels + v]);
    double z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(double(lv[c * voxels + v]) - mx);
    for (std::size_t c = 0; c < classes; ++c)
      probs[c * voxels + v] = static_cast<T>(std::exp(double(lv[c * voxels + v]) - mx) / z);
  }
  return probs;
}

template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> labels) {
  if (logits.ndim() < 2) throw ShapeError("softmax_cross_entropy: logits need a class axis and voxels");
  const std::size_t classes = logits.dim(0);
  const std::size_t voxels = logits.numel() / classes;
  if (labels.size() != voxels)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_string(logits.shape()));
  for (std::int32_t y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw DataError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                      std::to_string(classes) + ")");

  auto lv = logits.values();
  std::vector<T> probs(lv.size());
  double loss = 0;
  for (std::size_t v = 0; v < voxels; ++v) {
    double mx = lv[v];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max<double>(mx, lv[c * voxels + v]);
    double z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(double(lv[c * voxels + v]) - mx);
    const double log_z = std::log(z) + mx;
    loss += log_z - lv[static_cast<std::size_t>(labels[v]) * voxels + v];
    for (std::size_t c = 0; c < classes; ++c)
      probs[c * voxels + v] = static_cast<T>(std::exp(double(lv[c * voxels + v]) - log_z));
  }
  std::vector<std::int32_t> y(labels.begin(), labels.end());
  return BasicTensor<T>::make_result(
      Shape{1}, std::vector<T>{static_cast<T>(loss)}, {logits},
      [probs = std::move(probs), y = std::move(y), voxels](TensorNode<T>& self) {
        TensorNode<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        const T s = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * probs[i];
        for (std::size_t v = 0; v < voxels; ++v) g[static_cast<std::size_t>(y[v]) * voxels + v] -= s;
      });
}

template <typename T>
BasicTensor<T> add_all(const std::vector<BasicTensor<T>>& terms) {
  if (terms.empty()) throw ShapeError("add_all: empty list");
  BasicTensor<T> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

#define BVXL_INSTANTIATE(T)                                                                                  \
  template BasicTensor<T> elementwise(ElementwiseOp, const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                      \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> log(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> square(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> sqrt(const BasicTensor<T>&);                                                      \
  template BasicTensor<T> softplus(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> affine(const BasicTensor<T>&, double, double);                                    \
  template BasicTensor<T> reduce(ReduceOp, const BasicTensor<T>&, const std::vector<std::size_t>&);         \
  template BasicTensor<T> add_channel_bias(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> scale_channels(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const std::int32_t>);      \
  template std::vector<T> softmax_channels(const BasicTensor<T>&);                                          \
  template BasicTensor<T> add_all(const std::vector<BasicTensor<T>>&);

BVXL_INSTANTIATE(float)
BVXL_INSTANTIATE(double)
#undef BVXL_INSTANTIATE

}  // namespace bvxl
