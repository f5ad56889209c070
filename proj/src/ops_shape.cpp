#include <algorithm>
#include <cmath>

#include "mtswin/ops.hpp"
#include "op_util.hpp"

namespace mtswin {

namespace detail {

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op_name) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op_name) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " do not broadcast");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out_shape) {
  const auto own = row_major_strides(shape);
  std::vector<std::int64_t> strides(out_shape.size(), 0);
  const std::size_t offset = out_shape.size() - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i) {
    strides[offset + i] = shape[i] == 1 ? 0 : own[i];
  }
  return strides;
}

}  // namespace detail

namespace {

// Shared forward/backward for add and sub; b_sign is the sign of d(out)/d(b).
template <typename T, typename Fwd>
TensorT<T> broadcast_binary(const TensorT<T>& a, const TensorT<T>& b, const char* name, Fwd fwd,
                            T b_sign) {
  const Shape out_shape = detail::broadcast_shape(a.shape(), b.shape(), name);
  const auto sa = detail::broadcast_strides(a.shape(), out_shape);
  const auto sb = detail::broadcast_strides(b.shape(), out_shape);
  const std::int64_t n = shape_numel(out_shape);
  const std::size_t rank = out_shape.size();

  std::vector<T> out(n);
  const auto& ad = a.data();
  const auto& bd = b.data();
  if (a.shape() == b.shape()) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(ad[i], bd[i]);
  } else {
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t lin = 0; lin < n; ++lin) {
      out[lin] = fwd(ad[oa], bd[ob]);
      for (std::size_t ax = rank; ax-- > 0;) {
        oa += sa[ax];
        ob += sb[ax];
        if (++idx[ax] < out_shape[ax]) break;
        idx[ax] = 0;
        oa -= sa[ax] * out_shape[ax];
        ob -= sb[ax] * out_shape[ax];
      }
    }
  }

  return make_node<T>(
      out_shape, std::move(out), {a, b},
      [a, b, out_shape, b_sign](typename TensorT<T>::Impl& node) {
        auto ai = a;
        auto bi = b;
        const auto& g = node.grad;
        if (ai.requires_grad()) {
          auto& ga = ai.grad_buffer();
          if (ai.shape() == out_shape) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
          } else {
            detail::reduce_into(g, out_shape, ai.shape(), ga);
          }
        }
        if (bi.requires_grad()) {
          auto& gb = bi.grad_buffer();
          if (bi.shape() == out_shape) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += b_sign * g[i];
          } else {
            std::vector<T> scaled;
            const std::vector<T>* src = &g;
            if (b_sign != T(1)) {
              scaled.resize(g.size());
              for (std::size_t i = 0; i < g.size(); ++i) scaled[i] = b_sign * g[i];
              src = &scaled;
            }
            detail::reduce_into(*src, out_shape, bi.shape(), gb);
          }
        }
      });
}

}  // namespace

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return broadcast_binary<T>(
      a, b, "add", [](T x, T y) { return x + y; }, T(1));
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return broadcast_binary<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, T(-1));
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  const Shape out_shape = detail::broadcast_shape(a.shape(), b.shape(), "mul");
  const auto sa = detail::broadcast_strides(a.shape(), out_shape);
  const auto sb = detail::broadcast_strides(b.shape(), out_shape);
  const std::int64_t n = shape_numel(out_shape);
  const std::size_t rank = out_shape.size();

  std::vector<T> out(n);
  {
    const auto& ad = a.data();
    const auto& bd = b.data();
    if (a.shape() == b.shape()) {
      for (std::int64_t i = 0; i < n; ++i) out[i] = ad[i] * bd[i];
    } else {
      std::vector<std::int64_t> idx(rank, 0);
      std::int64_t oa = 0, ob = 0;
      for (std::int64_t lin = 0; lin < n; ++lin) {
        out[lin] = ad[oa] * bd[ob];
        for (std::size_t ax = rank; ax-- > 0;) {
          oa += sa[ax];
          ob += sb[ax];
          if (++idx[ax] < out_shape[ax]) break;
          idx[ax] = 0;
          oa -= sa[ax] * out_shape[ax];
          ob -= sb[ax] * out_shape[ax];
        }
      }
    }
  }

  return make_node<T>(
      out_shape, std::move(out), {a, b},
      [a, b, out_shape, sa, sb](typename TensorT<T>::Impl& node) {
        auto ai = a;
        auto bi = b;
        const auto& g = node.grad;
        const std::size_t rank = out_shape.size();
        const std::int64_t n = static_cast<std::int64_t>(g.size());
        // d(a*b) = g*b into a, g*a into b, reduced over broadcast axes.
        if (ai.requires_grad()) {
          auto& ga = ai.grad_buffer();
          std::vector<std::int64_t> idx(rank, 0);
          std::int64_t oa = 0, ob = 0;
          for (std::int64_t lin = 0; lin < n; ++lin) {
            ga[oa] += g[lin] * bi.data()[ob];
            for (std::size_t ax = rank; ax-- > 0;) {
              oa += sa[ax];
              ob += sb[ax];
              if (++idx[ax] < out_shape[ax]) break;
              idx[ax] = 0;
              oa -= sa[ax] * out_shape[ax];
              ob -= sb[ax] * out_shape[ax];
            }
          }
        }
        if (bi.requires_grad()) {
          auto& gb = bi.grad_buffer();
          std::vector<std::int64_t> idx(rank, 0);
          std::int64_t oa = 0, ob = 0;
          for (std::int64_t lin = 0; lin < n; ++lin) {
            gb[ob] += g[lin] * ai.data()[oa];
            for (std::size_t ax = rank; ax-- > 0;) {
              oa += sa[ax];
              ob += sb[ax];
              if (++idx[ax] < out_shape[ax]) break;
              idx[ax] = 0;
              oa -= sa[ax] * out_shape[ax];
              ob -= sb[ax] * out_shape[ax];
            }
          }
        }
      });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T factor) {
  std::vector<T> out(x.data());
  for (auto& v : out) v *= factor;
  return make_node<T>(x.shape(), std::move(out), {x},
                      [x, factor](typename TensorT<T>::Impl& node) {
                        auto xi = x;
                        if (!xi.requires_grad()) return;
                        auto& gx = xi.grad_buffer();
                        for (std::size_t i = 0; i < node.grad.size(); ++i)
                          gx[i] += factor * node.grad[i];
                      });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& x, T value) {
  std::vector<T> out(x.data());
  for (auto& v : out) v += value;
  return make_node<T>(x.shape(), std::move(out), {x}, [x](typename TensorT<T>::Impl& node) {
    auto xi = x;
    if (!xi.requires_grad()) return;
    auto& gx = xi.grad_buffer();
    for (std::size_t i = 0; i < node.grad.size(); ++i) gx[i] += node.grad[i];
  });
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.numel()) +
                         " elements, target " + shape_str(shape));
  }
  return make_node<T>(std::move(shape), x.data(), {x}, [x](typename TensorT<T>::Impl& node) {
    auto xi = x;
    if (!xi.requires_grad()) return;
    auto& gx = xi.grad_buffer();
    for (std::size_t i = 0; i < node.grad.size(); ++i) gx[i] += node.grad[i];
  });
}

template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.rank();
  if (perm.size() != rank) throw DimensionError("permute: rank mismatch");
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (perm[i] >= rank || seen[perm[i]]) throw DimensionError("permute: invalid permutation");
    seen[perm[i]] = true;
    out_shape[i] = x.shape()[perm[i]];
  }

  const auto in_strides = detail::row_major_strides(x.shape());
  std::vector<std::int64_t> gather(rank);
  for (std::size_t i = 0; i < rank; ++i) gather[i] = in_strides[perm[i]];

  const std::int64_t n = x.numel();
  std::vector<T> out(n);
  {
    const auto& xd = x.data();
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t src = 0;
    for (std::int64_t lin = 0; lin < n; ++lin) {
      out[lin] = xd[src];
      for (std::size_t ax = rank; ax-- > 0;) {
        src += gather[ax];
        if (++idx[ax] < out_shape[ax]) break;
        idx[ax] = 0;
        src -= gather[ax] * out_shape[ax];
      }
    }
  }

  return make_node<T>(out_shape, std::move(out), {x},
                      [x, out_shape, gather](typename TensorT<T>::Impl& node) {
                        auto xi = x;
                        if (!xi.requires_grad()) return;
                        auto& gx = xi.grad_buffer();
                        const auto& g = node.grad;
                        const std::size_t rank = out_shape.size();
                        std::vector<std::int64_t> idx(rank, 0);
                        std::int64_t src = 0;
                        for (std::int64_t lin = 0; lin < static_cast<std::int64_t>(g.size());
                             ++lin) {
                          gx[src] += g[lin];
                          for (std::size_t ax = rank; ax-- > 0;) {
                            src += gather[ax];
                            if (++idx[ax] < out_shape[ax]) break;
                            idx[ax] = 0;
                            src -= gather[ax] * out_shape[ax];
                          }
                        }
                      });
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const std::size_t rank = xs[0].rank();
  if (axis >= rank) throw DimensionError("concat: axis out of range");
  Shape out_shape = xs[0].shape();
  out_shape[axis] = 0;
  for (const auto& x : xs) {
    if (x.rank() != rank) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < rank; ++i) {
      if (i != axis && x.shape()[i] != xs[0].shape()[i]) {
        throw DimensionError("concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                             shape_str(xs[0].shape()));
      }
    }
    out_shape[axis] += x.shape()[axis];
  }

  // outer = dims before axis, inner = dims after axis (contiguous runs).
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
  for (std::size_t i = axis + 1; i < rank; ++i) inner *= out_shape[i];

  std::vector<T> out(shape_numel(out_shape));
  const std::int64_t out_row = out_shape[axis] * inner;
  std::int64_t col_off = 0;
  for (const auto& x : xs) {
    const std::int64_t x_row = x.shape()[axis] * inner;
    const auto& xd = x.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(xd.begin() + o * x_row, x_row, out.begin() + o * out_row + col_off);
    }
    col_off += x_row;
  }

  return make_node<T>(out_shape, std::move(out), xs,
                      [xs, outer, out_row](typename TensorT<T>::Impl& node) {
                        // Slices of the gradient map back to each input.
                        const auto& g = node.grad;
                        std::int64_t col_off = 0;
                        for (auto x : xs) {
                          const std::int64_t rows = x.numel() / outer;
                          if (x.requires_grad()) {
                            auto& gx = x.grad_buffer();
                            for (std::int64_t o = 0; o < outer; ++o) {
                              const T* src = g.data() + o * out_row + col_off;
                              T* dst = gx.data() + o * rows;
                              for (std::int64_t i = 0; i < rows; ++i) dst[i] += src[i];
                            }
                          }
                          col_off += rows;
                        }
                      });
}

template <typename T>
TensorT<T> slice(const TensorT<T>& x, const std::vector<std::int64_t>& starts,
                 const std::vector<std::int64_t>& stops) {
  const std::size_t rank = x.rank();
  if (starts.size() != rank || stops.size() != rank) {
    throw DimensionError("slice: bounds rank mismatch for " + shape_str(x.shape()));
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (starts[i] < 0 || stops[i] > x.shape()[i] || starts[i] > stops[i]) {
      throw DimensionError("slice: bad range on axis " + std::to_string(i) + " for " +
                           shape_str(x.shape()));
    }
    out_shape[i] = stops[i] - starts[i];
  }

  const auto in_strides = detail::row_major_strides(x.shape());
  std::int64_t base = 0;
  for (std::size_t i = 0; i < rank; ++i) base += starts[i] * in_strides[i];

  const std::int64_t n = shape_numel(out_shape);
  std::vector<T> out(n);
  {
    const auto& xd = x.data();
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t src = base;
    for (std::int64_t lin = 0; lin < n; ++lin) {
      out[lin] = xd[src];
      for (std::size_t ax = rank; ax-- > 0;) {
        src += in_strides[ax];
        if (++idx[ax] < out_shape[ax]) break;
        idx[ax] = 0;
        src -= in_strides[ax] * out_shape[ax];
      }
    }
  }

  return make_node<T>(out_shape, std::move(out), {x},
                      [x, out_shape, in_strides, base](typename TensorT<T>::Impl& node) {
                        auto xi = x;
                        if (!xi.requires_grad()) return;
                        auto& gx = xi.grad_buffer();
                        const auto& g = node.grad;
                        const std::size_t rank = out_shape.size();
                        std::vector<std::int64_t> idx(rank, 0);
                        std::int64_t dst = base;
                        for (std::int64_t lin = 0; lin < static_cast<std::int64_t>(g.size());
                             ++lin) {
                          gx[dst] += g[lin];
                          for (std::size_t ax = rank; ax-- > 0;) {
                            dst += in_strides[ax];
                            if (++idx[ax] < out_shape[ax]) break;
                            idx[ax] = 0;
                            dst -= in_strides[ax] * out_shape[ax];
                          }
                        }
                      });
}

template <typename T>
TensorT<T> pad_constant(const TensorT<T>& x, const std::vector<std::int64_t>& before,
                        const std::vector<std::int64_t>& after, T value) {
  const std::size_t rank = x.rank();
  if (before.size() != rank || after.size() != rank) {
    throw DimensionError("pad_constant: padding rank mismatch");
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (before[i] < 0 || after[i] < 0) throw DimensionError("pad_constant: negative padding");
    out_shape[i] = x.shape()[i] + before[i] + after[i];
  }

  const auto out_strides = detail::row_major_strides(out_shape);
  std::int64_t base = 0;
  for (std::size_t i = 0; i < rank; ++i) base += before[i] * out_strides[i];

  std::vector<T> out(shape_numel(out_shape), value);
  {
    const auto& xd = x.data();
    const Shape& in_shape = x.shape();
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t dst = base;
    for (std::int64_t lin = 0; lin < x.numel(); ++lin) {
      out[dst] = xd[lin];
      for (std::size_t ax = rank; ax-- > 0;) {
        dst += out_strides[ax];
        if (++idx[ax] < in_shape[ax]) break;
        idx[ax] = 0;
        dst -= out_strides[ax] * in_shape[ax];
      }
    }
  }

  return make_node<T>(out_shape, std::move(out), {x},
                      [x, out_strides, base](typename TensorT<T>::Impl& node) {
                        auto xi = x;
                        if (!xi.requires_grad()) return;
                        auto& gx = xi.grad_buffer();
                        const auto& g = node.grad;
                        const Shape& in_shape = xi.shape();
                        const std::size_t rank = in_shape.size();
                        std::vector<std::int64_t> idx(rank, 0);
                        std::int64_t src = base;
                        for (std::int64_t lin = 0; lin < xi.numel(); ++lin) {
                          gx[lin] += g[src];
                          for (std::size_t ax = rank; ax-- > 0;) {
                            src += out_strides[ax];
                            if (++idx[ax] < in_shape[ax]) break;
                            idx[ax] = 0;
                            src -= out_strides[ax] * in_shape[ax];
                          }
                        }
                      });
}

template <typename T>
TensorT<T> roll(const TensorT<T>& x, const std::vector<std::int64_t>& offsets) {
  const std::size_t rank = x.rank();
  if (offsets.size() != rank) throw DimensionError("roll: offsets rank mismatch");
  const Shape& shape = x.shape();
  std::vector<std::int64_t> off(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t d = shape[i];
    off[i] = d == 0 ? 0 : ((offsets[i] % d) + d) % d;
  }

  const auto strides = detail::row_major_strides(shape);
  const std::int64_t n = x.numel();
  std::vector<T> out(n);
  {
    const auto& xd = x.data();
    std::vector<std::int64_t> idx(rank, 0);
    for (std::int64_t lin = 0; lin < n; ++lin) {
      std::int64_t src = 0;
      for (std::size_t ax = 0; ax < rank; ++ax) {
        std::int64_t s = idx[ax] - off[ax];
        if (s < 0) s += shape[ax];
        src += s * strides[ax];
      }
      out[lin] = xd[src];
      for (std::size_t ax = rank; ax-- > 0;) {
        if (++idx[ax] < shape[ax]) break;
        idx[ax] = 0;
      }
    }
  }

  return make_node<T>(shape, std::move(out), {x},
                      [x, off, strides](typename TensorT<T>::Impl& node) {
                        auto xi = x;
                        if (!xi.requires_grad()) return;
                        auto& gx = xi.grad_buffer();
                        const auto& g = node.grad;
                        const Shape& shape = xi.shape();
                        const std::size_t rank = shape.size();
                        std::vector<std::int64_t> idx(rank, 0);
                        for (std::int64_t lin = 0; lin < xi.numel(); ++lin) {
                          std::int64_t src = 0;
                          for (std::size_t ax = 0; ax < rank; ++ax) {
                            std::int64_t s = idx[ax] - off[ax];
                            if (s < 0) s += shape[ax];
                            src += s * strides[ax];
                          }
                          gx[src] += g[lin];
                          for (std::size_t ax = rank; ax-- > 0;) {
                            if (++idx[ax] < shape[ax]) break;
                            idx[ax] = 0;
                          }
                        }
                      });
}

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  return make_node<T>({}, {acc}, {x}, [x](typename TensorT<T>::Impl& node) {
    auto xi = x;
    if (!xi.requires_grad()) return;
    auto& gx = xi.grad_buffer();
    const T g = node.grad[0];
    for (auto& v : gx) v += g;
  });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  return make_node<T>({}, {acc * inv}, {x}, [x, inv](typename TensorT<T>::Impl& node) {
    auto xi = x;
    if (!xi.requires_grad()) return;
    auto& gx = xi.grad_buffer();
    const T g = node.grad[0] * inv;
    for (auto& v : gx) v += g;
  });
}

template <typename T>
void check_finite(const TensorT<T>& x, const std::string& where) {
  for (const T v : x.data()) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in " + where);
    }
  }
}

template <typename T>
TensorT<T> one_hot_channels(const std::vector<std::uint8_t>& labels, Shape spatial_shape,
                            std::int64_t classes) {
  const std::int64_t n = shape_numel(spatial_shape);
  if (n != static_cast<std::int64_t>(labels.size())) {
    throw DimensionError("one_hot_channels: label count mismatch");
  }
  Shape out_shape;
  out_shape.push_back(classes);
  for (auto d : spatial_shape) out_shape.push_back(d);
  std::vector<T> out(classes * n, T(0));
  for (std::int64_t i = 0; i < n; ++i) {
    if (labels[i] >= classes) {
      throw DataError("one_hot_channels: label " + std::to_string(int(labels[i])) +
                      " out of range [0, " + std::to_string(classes) + ")");
    }
    out[labels[i] * n + i] = T(1);
  }
  return TensorT<T>::from_data(std::move(out_shape), std::move(out), false);
}

#define MTSWIN_INSTANTIATE_SHAPE_OPS(T)                                                        \
  template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                            \
  template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);                            \
  template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                            \
  template TensorT<T> scale<T>(const TensorT<T>&, T);                                          \
  template TensorT<T> add_scalar<T>(const TensorT<T>&, T);                                     \
  template TensorT<T> reshape<T>(const TensorT<T>&, Shape);                                    \
  template TensorT<T> permute<T>(const TensorT<T>&, const std::vector<std::size_t>&);          \
  template TensorT<T> concat<T>(const std::vector<TensorT<T>>&, std::size_t);                  \
  template TensorT<T> slice<T>(const TensorT<T>&, const std::vector<std::int64_t>&,            \
                               const std::vector<std::int64_t>&);                              \
  template TensorT<T> pad_constant<T>(const TensorT<T>&, const std::vector<std::int64_t>&,     \
                                      const std::vector<std::int64_t>&, T);                    \
  template TensorT<T> roll<T>(const TensorT<T>&, const std::vector<std::int64_t>&);            \
  template TensorT<T> sum<T>(const TensorT<T>&);                                               \
  template TensorT<T> mean<T>(const TensorT<T>&);                                              \
  template void check_finite<T>(const TensorT<T>&, const std::string&);                        \
  template TensorT<T> one_hot_channels<T>(const std::vector<std::uint8_t>&, Shape, std::int64_t);

MTSWIN_INSTANTIATE_SHAPE_OPS(float)
MTSWIN_INSTANTIATE_SHAPE_OPS(double)

}  // namespace mtswin
