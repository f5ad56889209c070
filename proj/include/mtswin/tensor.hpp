#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "mtswin/errors.hpp"
#include "mtswin/rng.hpp"

namespace mtswin {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Dense row-major tensor participating in a reverse-mode differentiation
/// graph. Copies are shallow (shared storage), like the usual dynamic-graph
/// engines. Data is immutable after creation except through grad buffers and
/// the optimizer, which owns parameters during training.
///
/// Accumulation order is fixed: every reduction runs serially in row-major
/// index order, so identical seeds and inputs give bit-identical results.
template <typename T>
class TensorT {
 public:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // empty until a gradient is accumulated
    std::vector<TensorT> parents;
    std::function<void(Impl&)> backprop;  // reads grad, accumulates into parents
    int visit_mark = 0;
  };

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false);
  static TensorT full(Shape shape, T value, bool requires_grad = false);
  static TensorT from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static TensorT scalar(T value, bool requires_grad = false);
  /// i.i.d. uniform in [lo, hi).
  static TensorT uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false);
  /// Truncated normal, std dev `std_dev`, clipped at two sigma.
  static TensorT trunc_normal(Shape shape, Rng& rng, T std_dev, bool requires_grad = true);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  const std::vector<T>& data() const { return impl_->data; }
  std::vector<T>& mutable_data() { return impl_->data; }
  const std::vector<T>& grad() const { return impl_->grad; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  /// Value of a single-element tensor.
  T item() const;
  T at(std::initializer_list<std::int64_t> idx) const;

  void zero_grad() { impl_->grad.clear(); }
  /// Grad buffer, allocated (zeroed) on first access.
  std::vector<T>& grad_buffer();

  /// Detached copy sharing no graph state (same values).
  TensorT detach() const;

  Impl* impl() const { return impl_.get(); }

 private:
  explicit TensorT(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;

  template <typename U>
  friend TensorT<U> make_node(Shape shape, std::vector<U> data, std::vector<TensorT<U>> parents,
                              std::function<void(typename TensorT<U>::Impl&)> backprop);
  template <typename U>
  friend void backward(const TensorT<U>& loss);
};

/// Creates a graph node. If grad mode is off or no parent requires grad, the
/// result is a plain leaf and `backprop` is dropped.
template <typename T>
TensorT<T> make_node(Shape shape, std::vector<T> data, std::vector<TensorT<T>> parents,
                     std::function<void(typename TensorT<T>::Impl&)> backprop);

/// Reverse-mode sweep from a scalar loss. Gradients accumulate (+=) into the
/// grad buffers of every reachable requires_grad tensor; repeated calls
/// without zeroing sum.
template <typename T>
void backward(const TensorT<T>& loss);

/// RAII guard disabling graph construction (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool grad_enabled();

 private:
  bool prev_;
};

using Tensor = TensorT<float>;

}  // namespace mtswin
