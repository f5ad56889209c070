#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtswin/tensor.hpp"

namespace mtswin {

// Differentiable primitives. All results are contiguous row-major copies;
// every op defines an analytic gradient. Broadcasting is numpy-style
// right-aligned and only as general as the model needs (bias adds, additive
// attention masks, batched matmul with shared operands).

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> scale(const TensorT<T>& x, T factor);
template <typename T>
TensorT<T> add_scalar(const TensorT<T>& x, T value);

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape);
template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<std::size_t>& perm);
template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, std::size_t axis);
/// Box slice: per-axis half-open ranges [starts[i], stops[i]).
template <typename T>
TensorT<T> slice(const TensorT<T>& x, const std::vector<std::int64_t>& starts,
                 const std::vector<std::int64_t>& stops);
template <typename T>
TensorT<T> pad_constant(const TensorT<T>& x, const std::vector<std::int64_t>& before,
                        const std::vector<std::int64_t>& after, T value = T(0));
/// Toroidal roll by `offsets[i]` along each axis (negative allowed).
template <typename T>
TensorT<T> roll(const TensorT<T>& x, const std::vector<std::int64_t>& offsets);

template <typename T>
TensorT<T> sum(const TensorT<T>& x);
template <typename T>
TensorT<T> mean(const TensorT<T>& x);

/// Batched matrix product a[..., m, k] x b[..., k, n]; batch dims broadcast.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);
/// Affine map over the last axis: x[..., in] x w[in, out] + b[out].
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b);

/// Numerically stable softmax (max subtraction) along `axis`.
template <typename T>
TensorT<T> softmax(const TensorT<T>& x, std::size_t axis);
/// Normalizes the last axis to zero mean / unit variance, then gamma*x+beta.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-5));
/// Per-channel normalization over the spatial axes of x[C, ...].
template <typename T>
TensorT<T> instance_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                         T eps = T(1e-5));
/// Exact Gaussian-CDF GELU: 0.5 x (1 + erf(x / sqrt(2))).
template <typename T>
TensorT<T> gelu(const TensorT<T>& x);
template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope = T(0.01));

/// Cross-correlation: x[c_in, D, H, W] * w[c_out, c_in, k, k, k] (+ bias).
/// Output dims: floor((in + 2 pad - k) / stride) + 1.
template <typename T>
TensorT<T> conv3d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  std::int64_t stride, std::int64_t padding);
/// Upsampling counterpart, w[c_in, c_out, k, k, k]; out dims (in-1)*stride + k.
/// Gradient is conv3d's adjoint.
template <typename T>
TensorT<T> conv_transpose3d(const TensorT<T>& x, const TensorT<T>& w, std::int64_t stride);
/// Per-channel arithmetic mean of x[C, ...] over the spatial axes -> [C].
template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x);

/// Inverted dropout: in training each element is zeroed with probability p and
/// survivors scale by 1/(1-p); in evaluation the input passes through.
template <typename T>
TensorT<T> dropout(const TensorT<T>& x, double p, Rng& rng, bool training);

/// Mean of -log softmax(logits)[target] over all positions; class axis last.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<std::int64_t>& targets);

/// Throws NumericError naming `where` if any element is NaN/Inf.
template <typename T>
void check_finite(const TensorT<T>& x, const std::string& where);

/// One-hot encode labels (values in [0, classes)) as [classes, n] layout
/// prepended to the label shape.
template <typename T>
TensorT<T> one_hot_channels(const std::vector<std::uint8_t>& labels, Shape spatial_shape,
                            std::int64_t classes);

}  // namespace mtswin
