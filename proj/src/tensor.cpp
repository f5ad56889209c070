#include "mtswin/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace mtswin {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

namespace {
bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

template <typename T>
TensorT<T> TensorT<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
TensorT<T> TensorT<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return TensorT(std::move(impl));
}

template <typename T>
TensorT<T> TensorT<T>::scalar(T value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

template <typename T>
TensorT<T> TensorT<T>::uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad) {
  const auto n = shape_numel(shape);
  std::vector<T> data(n);
  for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
  return from_data(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
TensorT<T> TensorT<T>::trunc_normal(Shape shape, Rng& rng, T std_dev, bool requires_grad) {
  const auto n = shape_numel(shape);
  std::vector<T> data(n);
  for (auto& v : data) v = static_cast<T>(rng.trunc_normal(std_dev));
  return from_data(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
T TensorT<T>::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

template <typename T>
T TensorT<T>::at(std::initializer_list<std::int64_t> idx) const {
  if (idx.size() != rank()) {
    throw DimensionError("index rank mismatch for shape " + shape_str(shape()));
  }
  std::int64_t off = 0;
  std::size_t axis = 0;
  for (auto i : idx) {
    off = off * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[off];
}

template <typename T>
std::vector<T>& TensorT<T>::grad_buffer() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
TensorT<T> TensorT<T>::detach() const {
  return from_data(impl_->shape, impl_->data, false);
}

template <typename T>
TensorT<T> make_node(Shape shape, std::vector<T> data, std::vector<TensorT<T>> parents,
                     std::function<void(typename TensorT<T>::Impl&)> backprop) {
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p.defined() && p.requires_grad()) {
        needs_grad = true;
        break;
      }
    }
  }
  auto out = TensorT<T>::from_data(std::move(shape), std::move(data), needs_grad);
  if (needs_grad) {
    out.impl()->parents = std::move(parents);
    out.impl()->backprop = std::move(backprop);
  }
  return out;
}

template <typename T>
void backward(const TensorT<T>& loss) {
  if (loss.numel() != 1) {
    throw DimensionError("backward() requires a scalar loss, got shape " +
                         shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  using Impl = typename TensorT<T>::Impl;

  // Iterative DFS postorder; reverse gives a topological order from the loss.
  std::vector<Impl*> order;
  std::vector<std::pair<Impl*, std::size_t>> stack;
  stack.emplace_back(loss.impl(), 0);
  loss.impl()->visit_mark = 1;
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Impl* child = node->parents[next_child].impl();
      ++next_child;
      if (child != nullptr && child->visit_mark == 0 && child->requires_grad) {
        child->visit_mark = 1;
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.impl()->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = *it;
    node->visit_mark = 0;
    if (node->backprop) {
      if (!node->grad.empty()) node->backprop(*node);
      // Interior grads are per-sweep scratch; only leaves accumulate across
      // backward() calls.
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

template class TensorT<float>;
template class TensorT<double>;
template TensorT<float> make_node<float>(Shape, std::vector<float>, std::vector<TensorT<float>>,
                                         std::function<void(TensorT<float>::Impl&)>);
template TensorT<double> make_node<double>(Shape, std::vector<double>,
                                           std::vector<TensorT<double>>,
                                           std::function<void(TensorT<double>::Impl&)>);
template void backward<float>(const TensorT<float>&);
template void backward<double>(const TensorT<double>&);

}  // namespace mtswin
