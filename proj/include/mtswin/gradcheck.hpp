#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtswin/tensor.hpp"

namespace mtswin {

/// Central finite-difference verification of reverse-mode gradients,
/// double precision only.
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::int64_t checked = 0;
  std::string worst;  // "tensor#i[j]" of the worst coordinate
};

/// `loss_fn` maps the inputs to a scalar; inputs must have requires_grad set.
/// Every coordinate is perturbed by +-step unless `max_coords_per_tensor`
/// caps the count, in which case a seeded subset is sampled. The relative
/// error denominator is floored at 0.01 so dead coordinates compare
/// absolutely.
GradCheckResult gradcheck(
    const std::function<TensorT<double>(const std::vector<TensorT<double>>&)>& loss_fn,
    std::vector<TensorT<double>> inputs, double step = 1e-3,
    std::int64_t max_coords_per_tensor = -1, std::uint64_t sample_seed = 1);

}  // namespace mtswin
