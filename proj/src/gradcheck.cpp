#include "mtswin/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mtswin/rng.hpp"

namespace mtswin {

GradCheckResult gradcheck(
    const std::function<TensorT<double>(const std::vector<TensorT<double>>&)>& loss_fn,
    std::vector<TensorT<double>> inputs, double step, std::int64_t max_coords_per_tensor,
    std::uint64_t sample_seed) {
  for (auto& t : inputs) t.zero_grad();
  auto loss = loss_fn(inputs);
  backward(loss);

  GradCheckResult result;
  Rng rng(sample_seed);
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& t = inputs[ti];
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic =
        t.grad().empty() ? std::vector<double>(t.numel(), 0.0) : t.grad();

    std::vector<std::int64_t> coords;
    if (max_coords_per_tensor < 0 || t.numel() <= max_coords_per_tensor) {
      coords.resize(t.numel());
      for (std::int64_t i = 0; i < t.numel(); ++i) coords[i] = i;
    } else {
      for (std::int64_t i = 0; i < max_coords_per_tensor; ++i) {
        coords.push_back(static_cast<std::int64_t>(rng.uniform_index(t.numel())));
      }
    }

    for (const std::int64_t j : coords) {
      NoGradGuard no_grad;  // probe evaluations need values only
      const double orig = t.mutable_data()[j];
      t.mutable_data()[j] = orig + step;
      const double up = loss_fn(inputs).item();
      t.mutable_data()[j] = orig - step;
      const double down = loss_fn(inputs).item();
      t.mutable_data()[j] = orig;

      const double fd = (up - down) / (2.0 * step);
      const double an = analytic[j];
      const double denom = std::max({std::fabs(fd), std::fabs(an), 0.01});
      const double rel = std::fabs(fd - an) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst =
            "tensor#" + std::to_string(ti) + "[" + std::to_string(j) + "]";
      }
    }
  }
  return result;
}

}  // namespace mtswin
