#pragma once

#include <cstdint>
#include <vector>

#include "mtswin/tensor.hpp"

namespace mtswin::detail {

inline std::vector<std::int64_t> row_major_strides(const Shape& shape) {
  std::vector<std::int64_t> strides(shape.size());
  std::int64_t acc = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[i] = acc;
    acc *= shape[i];
  }
  return strides;
}

/// Right-aligned broadcast of two shapes; throws on incompatibility.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op_name);

/// Strides of `shape` viewed as `out_shape` (0 on broadcast axes),
/// right-aligned.
std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out_shape);

/// Sums `grad` (shaped like out_shape) down to `target_shape`, accumulating
/// into `acc` (already sized to target numel). Serial row-major order.
template <typename T>
void reduce_into(const std::vector<T>& grad, const Shape& out_shape, const Shape& target_shape,
                 std::vector<T>& acc) {
  const auto strides = broadcast_strides(target_shape, out_shape);
  const std::size_t rank = out_shape.size();
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t off = 0;
  const std::int64_t n = shape_numel(out_shape);
  for (std::int64_t lin = 0; lin < n; ++lin) {
    acc[off] += grad[lin];
    for (std::size_t ax = rank; ax-- > 0;) {
      off += strides[ax];
      if (++idx[ax] < out_shape[ax]) break;
      idx[ax] = 0;
      off -= strides[ax] * out_shape[ax];
    }
  }
}

}  // namespace mtswin::detail
