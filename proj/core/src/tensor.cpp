#include "merob/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "merob/errors.hpp"

namespace merob {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ExitCode exit_code(const std::exception& e) noexcept {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e)) {
    return ExitCode::kConfig;
  }
  if (dynamic_cast<const IngestionError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const ValidationError*>(&e)) {
    return ExitCode::kData;
  }
  if (dynamic_cast<const NumericalError*>(&e)) return ExitCode::kNumerical;
  return ExitCode::kFailure;
}

namespace detail {

template <typename T>
std::vector<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad.assign(value->size(), T(0));
  return grad;
}

template <typename T>
void Node<T>::accumulate(std::span<const T> g) {
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

template struct Node<float>;
template struct Node<double>;

}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<T>>(std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T fill, bool requires_grad) {
  std::vector<T> v(shape_numel(shape), fill);
  return from(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
  return from(Shape{}, std::vector<T>{v}, requires_grad);
}

template <typename T>
void Tensor<T>::require_defined() const {
  if (!node_) throw UsageError("operation on an undefined tensor");
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  require_defined();
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) {
    throw DimensionError("dimension " + std::to_string(i) + " out of range for " + shape_str(s));
  }
  return s[i];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  require_defined();
  return node_->value->size();
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  require_defined();
  return {node_->value->data(), node_->value->size()};
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
  require_defined();
  return {node_->value->data(), node_->value->size()};
}

template <typename T>
std::vector<T> Tensor<T>::to_vector() const {
  auto v = values();
  return {v.begin(), v.end()};
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return (*node_->value)[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " for tensor " +
                         shape_str(s));
  }
  std::size_t flat = 0;
  std::size_t k = 0;
  for (auto i : index) {
    if (i >= s[k]) throw DimensionError("index out of range for " + shape_str(s));
    flat = flat * s[k] + i;
    ++k;
  }
  return (*node_->value)[flat];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  require_defined();
  return node_->requires_grad;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  require_defined();
  return !node_->backward && !node_->consumed;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  require_defined();
  return !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  require_defined();
  if (node_->grad.empty()) {
    throw UsageError("tensor of shape " + shape_str(node_->shape) + " has no gradient");
  }
  return {node_->grad.data(), node_->grad.size()};
}

template <typename T>
void Tensor<T>::zero_grad() {
  require_defined();
  node_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  require_defined();
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const {
  return from(shape(), to_vector(), requires_grad);
}

template <typename T>
void Tensor<T>::backward() {
  require_defined();
  if (numel() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  }
  if (node_->consumed) {
    throw UsageError("backward() called twice on the same graph");
  }
  if (!node_->requires_grad) {
    throw UsageError("backward() on a tensor that does not require gradients");
  }

  // Iterative post-order DFS; parents are visited in recorded order so the
  // resulting order (and every reduction downstream) is deterministic.
  using NodePtr = std::shared_ptr<detail::Node<T>>;
  std::vector<NodePtr> order;
  std::unordered_set<detail::Node<T>*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodePtr p = n->parents[next++];
      if (p->requires_grad && !seen.count(p.get())) {
        if (p->consumed) {
          throw UsageError("backward() through a graph that was already differentiated");
        }
        seen.insert(p.get());
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n.grad);
  }
  // Interior nodes release their closures; leaves keep their gradients.
  for (auto& n : order) {
    if (n->backward) {
      n->consumed = true;
      n->backward = nullptr;
      n->parents.clear();
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace merob
