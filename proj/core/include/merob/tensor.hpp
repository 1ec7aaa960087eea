#pragma once

// Dense row-major tensors with a reverse-mode differentiation tape.
//
// Every Tensor is a handle onto a shared node. Operations that see at least
// one requires_grad input record their parents and a backward rule on the
// result node; calling backward() on a scalar result walks the recorded
// graph in reverse topological order exactly once.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace merob {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(const std::vector<T>&)> backward;

  void accumulate(std::span<const T> g);
  std::vector<T>& grad_buffer();
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<const T> values() const;
  /// Writable view of the storage. Intended for leaves (parameters,
  /// perturbations); mutating a value that an unconsumed graph still
  /// depends on invalidates that graph's gradients.
  std::span<T> mutable_values();
  std::vector<T> to_vector() const;
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const T> grad() const;
  void zero_grad();

  /// New leaf sharing storage with this tensor but outside any graph.
  Tensor detach() const;
  /// Deep copy as a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  /// Seeds d(this)/d(this) = 1 and propagates. Throws UsageError for
  /// non-scalar tensors or a graph that was already differentiated.
  void backward();

  // Internal: used by operation implementations.
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
  void require_defined() const;
  std::shared_ptr<detail::Node<T>> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Converts precision; the result is a fresh leaf.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t, bool requires_grad = false) {
  auto src = t.values();
  std::vector<To> out(src.begin(), src.end());
  return Tensor<To>::from(t.shape(), std::move(out), requires_grad);
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace merob
