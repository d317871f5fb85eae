#include "rage/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace rage {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream ss;
  ss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) ss << ',';
    ss << shape[i];
  }
  ss << ']';
  return ss.str();
}

namespace {
thread_local bool g_no_grad = false;
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::enabled() { return g_no_grad; }

template <typename T>
Tensor<T>::Tensor() : node_(std::make_shared<detail::Node<T>>()) {
  node_->shape = {0};
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : node_(std::make_shared<detail::Node<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->value.assign(data.begin(), data.end());
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape) {
  return Tensor(shape, std::vector<T>(shape_numel(shape), T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value) {
  return Tensor(shape, std::vector<T>(shape_numel(shape), value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_->parents.empty()) {
    throw std::logic_error("tensor: cannot mutate a non-leaf tensor");
  }
  return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("tensor: item() needs one element, shape is " +
                     shape_str(shape()));
  }
  return node_->value[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.clear();
}

template <typename T>
void Tensor<T>::backward() {
  if (numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, shape is " +
                     shape_str(shape()));
  }
  if (node_->consumed) {
    throw std::logic_error(
        "backward: graph was already swept; rebuild it with a new forward pass");
  }
  if (!node_->requires_grad) {
    throw std::logic_error("backward: loss does not depend on any tensor "
                           "that requires a gradient");
  }

  // Iterative post-order DFS gives a topological order without recursion
  // depth limits on long chains.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>& node = **it;
    if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
  }
  for (auto* node : order) {
    if (node->parents.empty()) continue;
    node->consumed = true;
    node->backward_fn = nullptr;
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return make_result<T>(node_->shape, node_->value, {}, nullptr);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out = make_result<T>(node_->shape, node_->value, {}, nullptr);
  out.node_->requires_grad = node_->requires_grad && node_->parents.empty();
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::from_node(NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> value,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(detail::Node<T>&)> backward_fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (!NoGradGuard::enabled()) {
    bool any = false;
    for (const auto* in : inputs) any = any || in->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto* in : inputs) node->parents.push_back(in->node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_result(Shape, Buffer<float>,
                                   std::initializer_list<const Tensor<float>*>,
                                   std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result(
    Shape, Buffer<double>, std::initializer_list<const Tensor<double>*>,
    std::function<void(detail::Node<double>&)>);

}  // namespace rage
