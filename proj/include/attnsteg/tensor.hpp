#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared node holding values, an optional
// gradient buffer, and (when gradients are being tracked) the producing
// operation plus its inputs. Values are immutable once an operation has
// produced them; only leaf tensors (parameters, inputs) expose mutable values.
//
// Lineage is recorded only when some input requires a gradient and gradient
// mode is enabled. Inference paths wrap their work in NoGradGuard so that no
// gradient state is allocated at all.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace attnsteg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Thread-local switch for lineage recording.
class GradMode {
 public:
  static bool enabled() noexcept;
  static void set_enabled(bool enabled) noexcept;
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient flows in
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-filled on first use.
  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
  bool is_leaf() const noexcept { return !backward; }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  explicit operator bool() const noexcept { return defined(); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  /// Leaf tensors only; throws ContractError on operation outputs.
  std::span<T> mutable_values();

  bool has_grad() const { return !node_->grad.empty(); }
  /// Empty span when no gradient has flowed in.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool is_leaf() const { return node_->is_leaf(); }
  const char* op_name() const { return node_->op; }

  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  /// Leaf copy of the values with no lineage.
  Tensor detach(bool requires_grad = false) const;

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Back-propagates from a scalar. Leaf gradients accumulate across calls;
/// interior gradients are reset at the start of every call.
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

/// Builds an operation output. The backward closure is kept, along with the
/// inputs, only when gradient mode is on and some input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                      const char* op, std::function<void(Node<T>&)> backward_fn);

/// Gradient buffer of a parent, or an empty span when it takes no gradient.
template <typename T>
std::span<T> parent_grad(Node<T>& self, std::size_t index) {
  Node<T>& p = *self.parents[index];
  if (!p.requires_grad) return {};
  return p.grad_buffer();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations

enum class Activation { None, Sigmoid, Tanh, Relu };

/// Exponent inputs to sigmoid and tanh are clamped to this magnitude.
inline constexpr double kActivationClamp = 30.0;

/// [m,n] x [n,p] -> [m,p].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// [m,n] x [p,n]^T -> [m,p]. Row-by-row dot products; the affine-layer form.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

/// Pointwise ops. b must match a's shape or be a vector over a's last axis.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// x[..., C] * s[...]: every trailing vector is scaled by its own scalar.
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(Activation::Sigmoid, x); }
template <typename T>
Tensor<T> tanh(const Tensor<T>& x) { return activation(Activation::Tanh, x); }
template <typename T>
Tensor<T> relu(const Tensor<T>& x) { return activation(Activation::Relu, x); }

/// Softmax over the last axis (max-subtracted).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

/// Row-wise softmax of x[B,T] over the first lengths[b] entries; the rest
/// are exactly zero.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::span<const std::size_t> lengths);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

/// Half-open range [begin, end) along axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// table[V,d] gathered at ids -> [ids.size(), d]. Ids must be < V.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids);

/// True when every value is finite.
template <typename T>
bool all_finite(const Tensor<T>& x);

}  // namespace attnsteg
