#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "mtswin/ops.hpp"
#include "mtswin/tensor.hpp"

namespace mtswin {

/// Parameters of one attention sub-block (attention + MLP with pre-norm
/// residuals). A full Swin block is a pair of these: plain windows first,
/// shifted windows second.
template <typename T>
struct BlockParamsT {
  TensorT<T> ln1_gamma, ln1_beta;
  TensorT<T> qkv_w, qkv_b;    // [C, 3C], [3C]
  TensorT<T> proj_w, proj_b;  // [C, C], [C]
  TensorT<T> ln2_gamma, ln2_beta;
  TensorT<T> fc1_w, fc1_b;  // [C, mlp_ratio*C]
  TensorT<T> fc2_w, fc2_b;  // [mlp_ratio*C, C]
  std::int64_t num_heads = 1;
};

template <typename T>
struct SwinBlockParamsT {
  BlockParamsT<T> windowed;  // s = 0
  BlockParamsT<T> shifted;   // s = floor(M/2)
};

/// Optional capture of post-softmax attention weights, for tests.
template <typename T>
struct AttentionProbeT {
  TensorT<T> weights;  // [n_windows, heads, tokens, tokens]
};

/// Splits grid[d, h, w] tokens of a [1, D, H, W] volume into non-overlapping
/// p^3 patches and projects them: proj_w [p^3, C0], proj_b [C0]. Dims not
/// divisible by p are zero-padded first.
template <typename T>
TensorT<T> patch_embed(const TensorT<T>& volume, const TensorT<T>& proj_w,
                       const TensorT<T>& proj_b, std::int64_t patch);

/// grid [D, H, W, C] -> windows [n_windows, M^3, C]; dims must divide by M.
template <typename T>
TensorT<T> window_partition(const TensorT<T>& grid, std::int64_t window);

/// Inverse of window_partition for the given grid dims.
template <typename T>
TensorT<T> window_reverse(const TensorT<T>& windows, std::int64_t window,
                          const std::array<std::int64_t, 3>& grid_dims);

/// Toroidal roll of the three spatial axes of grid [D, H, W, C].
template <typename T>
TensorT<T> cyclic_shift(const TensorT<T>& grid, const std::array<std::int64_t, 3>& offsets);

/// Additive attention mask [n_windows, M^3, M^3] for a grid rolled by -s:
/// 0 where two tokens come from the same pre-shift region, -1e9 otherwise.
/// For s = 0 the mask is identically zero.
template <typename T>
TensorT<T> build_shift_mask(const std::array<std::int64_t, 3>& grid_dims, std::int64_t window,
                            std::int64_t shift);

/// Multi-head self-attention within windows [n, M^3, C]. Scale 1/sqrt(d),
/// additive mask (optional, [n, M^3, M^3]) before softmax, concatenated
/// heads, output projection.
template <typename T>
TensorT<T> window_mhsa(const TensorT<T>& windows, const BlockParamsT<T>& params,
                       const TensorT<T>& mask, AttentionProbeT<T>* probe = nullptr);

/// One Swin transformer block on grid [D, H, W, C]: a plain-window attention
/// sub-block followed by a shifted-window one, each attention and MLP wrapped
/// in pre-norm residuals. Grids are zero-padded to window multiples
/// internally and cropped back.
template <typename T>
TensorT<T> swin_block(const TensorT<T>& grid, const SwinBlockParamsT<T>& params,
                      std::int64_t window);

/// Merges 2x2x2 token neighborhoods of grid [D, H, W, C] (odd dims padded):
/// concatenated 8C features are layer-normed then reduced to 2C.
template <typename T>
TensorT<T> patch_merging(const TensorT<T>& grid, const TensorT<T>& ln_gamma,
                         const TensorT<T>& ln_beta, const TensorT<T>& reduction_w,
                         const TensorT<T>& reduction_b);

}  // namespace mtswin
