#include <algorithm>
#include <cmath>

#include "mtswin/ops.hpp"
#include "op_util.hpp"

namespace mtswin {

namespace {

// Serial accumulation in fixed loop order keeps results bit-reproducible.
// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M x N] += A[M x K] * B[N x K]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[M x N] += A[K x M]^T * B[K x N]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: operands need rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::int64_t m = a.shape()[a.rank() - 2];
  const std::int64_t k = a.shape()[a.rank() - 1];
  const std::int64_t kb = b.shape()[b.rank() - 2];
  const std::int64_t n = b.shape()[b.rank() - 1];
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = detail::broadcast_shape(batch_a, batch_b, "matmul");
  const std::int64_t n_batches = shape_numel(batch);

  // Per-batch block offsets, shared by forward and backward. Broadcast axes
  // contribute stride 0, so shared operands map many output batches to one
  // block (backward then accumulates serially in batch order).
  std::vector<std::int64_t> a_off(n_batches), b_off(n_batches);
  {
    const std::size_t rank = batch.size();
    std::vector<std::int64_t> idx(rank, 0);
    const auto stride_a = detail::row_major_strides(batch_a);
    const auto stride_b = detail::row_major_strides(batch_b);
    const std::size_t lead_a = rank - batch_a.size();
    const std::size_t lead_b = rank - batch_b.size();
    for (std::int64_t bi = 0; bi < n_batches; ++bi) {
      std::int64_t oa = 0, ob = 0;
      for (std::size_t ax = 0; ax < rank; ++ax) {
        if (ax >= lead_a && batch_a[ax - lead_a] != 1) oa += idx[ax] * stride_a[ax - lead_a];
        if (ax >= lead_b && batch_b[ax - lead_b] != 1) ob += idx[ax] * stride_b[ax - lead_b];
      }
      a_off[bi] = oa * m * k;
      b_off[bi] = ob * k * n;
      for (std::size_t ax = rank; ax-- > 0;) {
        if (++idx[ax] < batch[ax]) break;
        idx[ax] = 0;
      }
    }
  }

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(shape_numel(out_shape), T(0));
  for (std::int64_t bi = 0; bi < n_batches; ++bi) {
    gemm_nn(a.data().data() + a_off[bi], b.data().data() + b_off[bi], out.data() + bi * m * n, m,
            k, n);
  }

  return make_node<T>(
      out_shape, std::move(out), {a, b},
      [a, b, a_off, b_off, m, k, n, n_batches](typename TensorT<T>::Impl& node) {
        auto ai = a;
        auto bi_ = b;
        const auto& g = node.grad;
        if (ai.requires_grad()) {
          auto& ga = ai.grad_buffer();
          for (std::int64_t bi = 0; bi < n_batches; ++bi) {
            // dA = g * B^T
            gemm_nt(g.data() + bi * m * n, bi_.data().data() + b_off[bi], ga.data() + a_off[bi],
                    m, n, k);
          }
        }
        if (bi_.requires_grad()) {
          auto& gb = bi_.grad_buffer();
          for (std::int64_t bi = 0; bi < n_batches; ++bi) {
            // dB = A^T * g
            gemm_tn(ai.data().data() + a_off[bi], g.data() + bi * m * n, gb.data() + b_off[bi],
                    k, m, n);
          }
        }
      });
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  if (x.rank() < 1 || w.rank() != 2) {
    throw DimensionError("linear: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()));
  }
  const std::int64_t in = x.shape().back();
  if (in != w.shape()[0]) {
    throw DimensionError("linear: feature dim " + std::to_string(in) + " vs weight " +
                         shape_str(w.shape()));
  }
  const std::int64_t out_f = w.shape()[1];
  if (b.defined() && (b.rank() != 1 || b.shape()[0] != out_f)) {
    throw DimensionError("linear: bias shape " + shape_str(b.shape()));
  }
  const std::int64_t rows = x.numel() / std::max<std::int64_t>(in, 1);

  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  std::vector<T> out(rows * out_f, T(0));
  if (b.defined()) {
    for (std::int64_t i = 0; i < rows; ++i) {
      std::copy_n(b.data().begin(), out_f, out.begin() + i * out_f);
    }
  }
  gemm_nn(x.data().data(), w.data().data(), out.data(), rows, in, out_f);

  std::vector<TensorT<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return make_node<T>(
      out_shape, std::move(out), std::move(parents),
      [x, w, b, rows, in, out_f](typename TensorT<T>::Impl& node) {
        auto xi = x;
        auto wi = w;
        const auto& g = node.grad;
        if (xi.requires_grad()) {
          gemm_nt(g.data(), wi.data().data(), xi.grad_buffer().data(), rows, out_f, in);
        }
        if (wi.requires_grad()) {
          gemm_tn(xi.data().data(), g.data(), wi.grad_buffer().data(), in, rows, out_f);
        }
        if (b.defined()) {
          auto bi = b;
          if (bi.requires_grad()) {
            auto& gb = bi.grad_buffer();
            for (std::int64_t i = 0; i < rows; ++i) {
              const T* grow = g.data() + i * out_f;
              for (std::int64_t j = 0; j < out_f; ++j) gb[j] += grow[j];
            }
          }
        }
      });
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range");
  const Shape& shape = x.shape();
  const std::int64_t len = shape[axis];
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

  const auto& xd = x.data();
  for (const T v : xd) {
    if (std::isnan(v)) throw NumericError("softmax: NaN input");
  }

  std::vector<T> out(xd.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      T mx = xd[base];
      for (std::int64_t t = 1; t < len; ++t) mx = std::max(mx, xd[base + t * inner]);
      T denom = T(0);
      for (std::int64_t t = 0; t < len; ++t) {
        const T e = std::exp(xd[base + t * inner] - mx);
        out[base + t * inner] = e;
        denom += e;
      }
      const T inv = T(1) / denom;
      for (std::int64_t t = 0; t < len; ++t) out[base + t * inner] *= inv;
    }
  }

  return make_node<T>(shape, std::move(out), {x},
                      [x, len, outer, inner](typename TensorT<T>::Impl& node) {
                        auto xi = x;
                        if (!xi.requires_grad()) return;
                        auto& gx = xi.grad_buffer();
                        const auto& g = node.grad;
                        const auto& y = node.data;
                        for (std::int64_t o = 0; o < outer; ++o) {
                          for (std::int64_t i = 0; i < inner; ++i) {
                            const std::int64_t base = o * len * inner + i;
                            T dot = T(0);
                            for (std::int64_t t = 0; t < len; ++t) {
                              const std::int64_t p = base + t * inner;
                              dot += g[p] * y[p];
                            }
                            for (std::int64_t t = 0; t < len; ++t) {
                              const std::int64_t p = base + t * inner;
                              gx[p] += y[p] * (g[p] - dot);
                            }
                          }
                        }
                      });
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::int64_t c = x.shape().back();
  if (c == 0) throw DimensionError("layer_norm: zero-length normalized axis");
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("layer_norm: gamma/beta must have length " + std::to_string(c));
  }
  const std::int64_t rows = x.numel() / c;

  const auto& xd = x.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  std::vector<T> out(xd.size());
  auto stats = std::make_shared<std::vector<T>>(2 * rows);  // mean, inv_std per row
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * c;
    T mean_v = T(0);
    for (std::int64_t j = 0; j < c; ++j) mean_v += row[j];
    mean_v /= static_cast<T>(c);
    T var_v = T(0);
    for (std::int64_t j = 0; j < c; ++j) {
      const T d = row[j] - mean_v;
      var_v += d * d;
    }
    var_v /= static_cast<T>(c);
    const T inv = T(1) / std::sqrt(var_v + eps);
    (*stats)[2 * r] = mean_v;
    (*stats)[2 * r + 1] = inv;
    T* orow = out.data() + r * c;
    for (std::int64_t j = 0; j < c; ++j) {
      orow[j] = (row[j] - mean_v) * inv * gd[j] + bd[j];
    }
  }

  return make_node<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, rows, c, stats](typename TensorT<T>::Impl& node) {
        auto xi = x;
        auto gi = gamma;
        auto bi = beta;
        const auto& g = node.grad;
        const auto& xd = xi.data();
        const auto& gd = gi.data();
        const bool need_x = xi.requires_grad();
        const bool need_g = gi.requires_grad();
        const bool need_b = bi.requires_grad();
        std::vector<T>* gx = need_x ? &xi.grad_buffer() : nullptr;
        std::vector<T>* gg = need_g ? &gi.grad_buffer() : nullptr;
        std::vector<T>* gb = need_b ? &bi.grad_buffer() : nullptr;
        const T cn = static_cast<T>(c);
        for (std::int64_t r = 0; r < rows; ++r) {
          const T mean_v = (*stats)[2 * r];
          const T inv = (*stats)[2 * r + 1];
          const T* xrow = xd.data() + r * c;
          const T* grow = g.data() + r * c;
          if (need_g || need_b) {
            for (std::int64_t j = 0; j < c; ++j) {
              const T xhat = (xrow[j] - mean_v) * inv;
              if (need_g) (*gg)[j] += grow[j] * xhat;
              if (need_b) (*gb)[j] += grow[j];
            }
          }
          if (need_x) {
            T sum_dy = T(0), sum_dy_xhat = T(0);
            for (std::int64_t j = 0; j < c; ++j) {
              const T xhat = (xrow[j] - mean_v) * inv;
              const T dy = grow[j] * gd[j];
              sum_dy += dy;
              sum_dy_xhat += dy * xhat;
            }
            T* gxrow = gx->data() + r * c;
            for (std::int64_t j = 0; j < c; ++j) {
              const T xhat = (xrow[j] - mean_v) * inv;
              const T dy = grow[j] * gd[j];
              gxrow[j] += inv * (dy - sum_dy / cn - xhat * sum_dy_xhat / cn);
            }
          }
        }
      });
}

template <typename T>
TensorT<T> instance_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                         T eps) {
  if (x.rank() < 2) throw DimensionError("instance_norm: need [C, spatial...] input");
  const std::int64_t c = x.shape()[0];
  const std::int64_t n = x.numel() / c;
  if (n == 0) throw DimensionError("instance_norm: empty spatial extent");
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("instance_norm: gamma/beta must have length " + std::to_string(c));
  }

  const auto& xd = x.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  std::vector<T> out(xd.size());
  auto stats = std::make_shared<std::vector<T>>(2 * c);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const T* row = xd.data() + ch * n;
    T mean_v = T(0);
    for (std::int64_t j = 0; j < n; ++j) mean_v += row[j];
    mean_v /= static_cast<T>(n);
    T var_v = T(0);
    for (std::int64_t j = 0; j < n; ++j) {
      const T d = row[j] - mean_v;
      var_v += d * d;
    }
    var_v /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var_v + eps);
    (*stats)[2 * ch] = mean_v;
    (*stats)[2 * ch + 1] = inv;
    T* orow = out.data() + ch * n;
    const T gch = gd[ch], bch = bd[ch];
    for (std::int64_t j = 0; j < n; ++j) orow[j] = (row[j] - mean_v) * inv * gch + bch;
  }

  return make_node<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, c, n, stats](typename TensorT<T>::Impl& node) {
        auto xi = x;
        auto gi = gamma;
        auto bi = beta;
        const auto& g = node.grad;
        const auto& xd = xi.data();
        const bool need_x = xi.requires_grad();
        const bool need_g = gi.requires_grad();
        const bool need_b = bi.requires_grad();
        const T nn = static_cast<T>(n);
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const T mean_v = (*stats)[2 * ch];
          const T inv = (*stats)[2 * ch + 1];
          const T* xrow = xd.data() + ch * n;
          const T* grow = g.data() + ch * n;
          T sum_dy = T(0), sum_dy_xhat = T(0), sum_g = T(0), sum_g_xhat = T(0);
          const T gch = gi.data()[ch];
          for (std::int64_t j = 0; j < n; ++j) {
            const T xhat = (xrow[j] - mean_v) * inv;
            sum_g += grow[j];
            sum_g_xhat += grow[j] * xhat;
          }
          if (need_g) gi.grad_buffer()[ch] += sum_g_xhat;
          if (need_b) bi.grad_buffer()[ch] += sum_g;
          if (need_x) {
            sum_dy = sum_g * gch;
            sum_dy_xhat = sum_g_xhat * gch;
            T* gxrow = xi.grad_buffer().data() + ch * n;
            for (std::int64_t j = 0; j < n; ++j) {
              const T xhat = (xrow[j] - mean_v) * inv;
              const T dy = grow[j] * gch;
              gxrow[j] += inv * (dy - sum_dy / nn - xhat * sum_dy_xhat / nn);
            }
          }
        }
      });
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  const auto& xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double v = static_cast<double>(xd[i]);
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  return make_node<T>(x.shape(), std::move(out), {x}, [x](typename TensorT<T>::Impl& node) {
    auto xi = x;
    if (!xi.requires_grad()) return;
    auto& gx = xi.grad_buffer();
    const auto& g = node.grad;
    const auto& xd = xi.data();
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = static_cast<double>(xd[i]);
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * static_cast<T>(cdf + v * pdf);
    }
  });
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope) {
  const auto& xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    out[i] = xd[i] > T(0) ? xd[i] : slope * xd[i];
  }
  return make_node<T>(x.shape(), std::move(out), {x},
                      [x, slope](typename TensorT<T>::Impl& node) {
                        auto xi = x;
                        if (!xi.requires_grad()) return;
                        auto& gx = xi.grad_buffer();
                        const auto& g = node.grad;
                        const auto& xd = xi.data();
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          gx[i] += g[i] * (xd[i] > T(0) ? T(1) : slope);
                        }
                      });
}

#define MTSWIN_INSTANTIATE_NN_OPS(T)                                                         \
  template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                       \
  template TensorT<T> linear<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);    \
  template TensorT<T> softmax<T>(const TensorT<T>&, std::size_t);                            \
  template TensorT<T> layer_norm<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, \
                                    T);                                                      \
  template TensorT<T> instance_norm<T>(const TensorT<T>&, const TensorT<T>&,                 \
                                       const TensorT<T>&, T);                                \
  template TensorT<T> gelu<T>(const TensorT<T>&);                                            \
  template TensorT<T> leaky_relu<T>(const TensorT<T>&, T);

MTSWIN_INSTANTIATE_NN_OPS(float)
MTSWIN_INSTANTIATE_NN_OPS(double)

}  // namespace mtswin
