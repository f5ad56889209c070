#pragma once

#include <cstdint>
#include <random>

namespace mtswin {

/// Deterministic random source. The raw bit stream is std::mt19937_64, which
/// the standard pins down exactly, so identical seeds give identical streams
/// on every platform. Uniform doubles are derived from the top 53 bits
/// (exact IEEE arithmetic); normals use Box-Muller, whose bit pattern depends
/// on libm but is reproducible on a given toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);

  /// Standard normal via Box-Muller.
  double normal();

  /// Normal(0, std) truncated to [-2 std, 2 std] by rejection.
  double trunc_normal(double std_dev);

  /// Derives an independent per-item seed from a base seed (splitmix64 mix).
  static std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mtswin
