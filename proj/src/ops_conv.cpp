#include <algorithm>
#include <cmath>
#include <memory>

#include "mtswin/ops.hpp"
#include "op_util.hpp"

namespace mtswin {

namespace {

struct ConvDims {
  std::int64_t ci, co, k, s, p;
  std::int64_t i0, i1, i2;
  std::int64_t o0, o1, o2;
};

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Valid output range along one axis so the input index o*s - p + koff stays
// inside [0, in).
inline std::pair<std::int64_t, std::int64_t> out_range(std::int64_t in, std::int64_t out,
                                                       std::int64_t s, std::int64_t p,
                                                       std::int64_t koff) {
  const std::int64_t shift = koff - p;
  std::int64_t lo = 0;
  if (shift < 0) lo = (-shift + s - 1) / s;
  std::int64_t hi = std::min(out, floor_div(in - 1 - shift, s) + 1);
  lo = std::min(lo, out);
  hi = std::max(hi, lo);
  return {lo, hi};
}

}  // namespace

template <typename T>
TensorT<T> conv3d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  std::int64_t stride, std::int64_t padding) {
  if (x.rank() != 4 || w.rank() != 5) {
    throw DimensionError("conv3d: expected x[c,d,h,w] and w[co,ci,k,k,k], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (stride < 1 || padding < 0) throw DimensionError("conv3d: bad stride/padding");
  ConvDims d;
  d.ci = x.shape()[0];
  d.i0 = x.shape()[1];
  d.i1 = x.shape()[2];
  d.i2 = x.shape()[3];
  d.co = w.shape()[0];
  d.k = w.shape()[2];
  d.s = stride;
  d.p = padding;
  if (w.shape()[1] != d.ci || w.shape()[3] != d.k || w.shape()[4] != d.k) {
    throw DimensionError("conv3d: weight " + shape_str(w.shape()) + " does not match input " +
                         shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != d.co) throw DimensionError("conv3d: bias length");
  d.o0 = (d.i0 + 2 * d.p - d.k) / d.s + 1;
  d.o1 = (d.i1 + 2 * d.p - d.k) / d.s + 1;
  d.o2 = (d.i2 + 2 * d.p - d.k) / d.s + 1;
  if (d.i0 + 2 * d.p < d.k || d.i1 + 2 * d.p < d.k || d.i2 + 2 * d.p < d.k || d.o0 < 1 ||
      d.o1 < 1 || d.o2 < 1) {
    throw DimensionError("conv3d: non-positive output dim for input " + shape_str(x.shape()) +
                         ", kernel " + std::to_string(d.k) + ", stride " + std::to_string(d.s) +
                         ", padding " + std::to_string(d.p));
  }

  std::vector<T> out(d.co * d.o0 * d.o1 * d.o2, T(0));
  const auto& xd = x.data();
  const auto& wd = w.data();
  for (std::int64_t co = 0; co < d.co; ++co) {
    T* oc = out.data() + co * d.o0 * d.o1 * d.o2;
    if (bias.defined()) {
      const T bv = bias.data()[co];
      for (std::int64_t i = 0; i < d.o0 * d.o1 * d.o2; ++i) oc[i] = bv;
    }
    for (std::int64_t ci = 0; ci < d.ci; ++ci) {
      const T* xc = xd.data() + ci * d.i0 * d.i1 * d.i2;
      const T* wc = wd.data() + (co * d.ci + ci) * d.k * d.k * d.k;
      for (std::int64_t kd = 0; kd < d.k; ++kd) {
        const auto [od_lo, od_hi] = out_range(d.i0, d.o0, d.s, d.p, kd);
        for (std::int64_t kh = 0; kh < d.k; ++kh) {
          const auto [oh_lo, oh_hi] = out_range(d.i1, d.o1, d.s, d.p, kh);
          for (std::int64_t kw = 0; kw < d.k; ++kw) {
            const auto [ow_lo, ow_hi] = out_range(d.i2, d.o2, d.s, d.p, kw);
            const T wv = wc[(kd * d.k + kh) * d.k + kw];
            if (wv == T(0)) continue;
            for (std::int64_t od = od_lo; od < od_hi; ++od) {
              const std::int64_t id = od * d.s - d.p + kd;
              for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                const std::int64_t ih = oh * d.s - d.p + kh;
                const T* xrow = xc + (id * d.i1 + ih) * d.i2 - d.p + kw;
                T* orow = oc + (od * d.o1 + oh) * d.o2;
                if (d.s == 1) {
                  for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xrow[ow];
                } else {
                  for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow)
                    orow[ow] += wv * xrow[ow * d.s];
                }
              }
            }
          }
        }
      }
    }
  }

  std::vector<TensorT<T>> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_node<T>(
      {d.co, d.o0, d.o1, d.o2}, std::move(out), std::move(parents),
      [x, w, bias, d](typename TensorT<T>::Impl& node) {
        auto xi = x;
        auto wi = w;
        const auto& g = node.grad;
        const auto& xd = xi.data();
        const auto& wd = wi.data();
        const bool need_x = xi.requires_grad();
        const bool need_w = wi.requires_grad();
        std::vector<T>* gx = need_x ? &xi.grad_buffer() : nullptr;
        std::vector<T>* gw = need_w ? &wi.grad_buffer() : nullptr;
        if (bias.defined()) {
          auto bi = bias;
          if (bi.requires_grad()) {
            auto& gb = bi.grad_buffer();
            for (std::int64_t co = 0; co < d.co; ++co) {
              const T* gc = g.data() + co * d.o0 * d.o1 * d.o2;
              T acc = T(0);
              for (std::int64_t i = 0; i < d.o0 * d.o1 * d.o2; ++i) acc += gc[i];
              gb[co] += acc;
            }
          }
        }
        if (!need_x && !need_w) return;
        for (std::int64_t co = 0; co < d.co; ++co) {
          const T* gc = g.data() + co * d.o0 * d.o1 * d.o2;
          for (std::int64_t ci = 0; ci < d.ci; ++ci) {
            const T* xc = xd.data() + ci * d.i0 * d.i1 * d.i2;
            T* gxc = need_x ? gx->data() + ci * d.i0 * d.i1 * d.i2 : nullptr;
            const std::int64_t wbase = (co * d.ci + ci) * d.k * d.k * d.k;
            for (std::int64_t kd = 0; kd < d.k; ++kd) {
              const auto [od_lo, od_hi] = out_range(d.i0, d.o0, d.s, d.p, kd);
              for (std::int64_t kh = 0; kh < d.k; ++kh) {
                const auto [oh_lo, oh_hi] = out_range(d.i1, d.o1, d.s, d.p, kh);
                for (std::int64_t kw = 0; kw < d.k; ++kw) {
                  const auto [ow_lo, ow_hi] = out_range(d.i2, d.o2, d.s, d.p, kw);
                  const T wv = wd[wbase + (kd * d.k + kh) * d.k + kw];
                  T wacc = T(0);
                  for (std::int64_t od = od_lo; od < od_hi; ++od) {
                    const std::int64_t id = od * d.s - d.p + kd;
                    for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                      const std::int64_t ih = oh * d.s - d.p + kh;
                      const std::int64_t xoff = (id * d.i1 + ih) * d.i2 - d.p + kw;
                      const T* grow = gc + (od * d.o1 + oh) * d.o2;
                      if (need_w) {
                        const T* xrow = xc + xoff;
                        if (d.s == 1) {
                          for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow)
                            wacc += grow[ow] * xrow[ow];
                        } else {
                          for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow)
                            wacc += grow[ow] * xrow[ow * d.s];
                        }
                      }
                      if (need_x && wv != T(0)) {
                        T* gxrow = gxc + xoff;
                        if (d.s == 1) {
                          for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow)
                            gxrow[ow] += wv * grow[ow];
                        } else {
                          for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow)
                            gxrow[ow * d.s] += wv * grow[ow];
                        }
                      }
                    }
                  }
                  if (need_w) (*gw)[wbase + (kd * d.k + kh) * d.k + kw] += wacc;
                }
              }
            }
          }
        }
      });
}

template <typename T>
TensorT<T> conv_transpose3d(const TensorT<T>& x, const TensorT<T>& w, std::int64_t stride) {
  if (x.rank() != 4 || w.rank() != 5) {
    throw DimensionError("conv_transpose3d: expected x[c,d,h,w] and w[ci,co,k,k,k], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (stride < 1) throw DimensionError("conv_transpose3d: bad stride");
  const std::int64_t ci = x.shape()[0];
  const std::int64_t i0 = x.shape()[1], i1 = x.shape()[2], i2 = x.shape()[3];
  const std::int64_t co = w.shape()[1];
  const std::int64_t k = w.shape()[2];
  if (w.shape()[0] != ci || w.shape()[3] != k || w.shape()[4] != k) {
    throw DimensionError("conv_transpose3d: weight " + shape_str(w.shape()) +
                         " does not match input " + shape_str(x.shape()));
  }
  const std::int64_t o0 = (i0 - 1) * stride + k;
  const std::int64_t o1 = (i1 - 1) * stride + k;
  const std::int64_t o2 = (i2 - 1) * stride + k;

  std::vector<T> out(co * o0 * o1 * o2, T(0));
  const auto& xd = x.data();
  const auto& wd = w.data();
  for (std::int64_t c_in = 0; c_in < ci; ++c_in) {
    const T* xc = xd.data() + c_in * i0 * i1 * i2;
    for (std::int64_t c_out = 0; c_out < co; ++c_out) {
      T* oc = out.data() + c_out * o0 * o1 * o2;
      const T* wc = wd.data() + (c_in * co + c_out) * k * k * k;
      for (std::int64_t kd = 0; kd < k; ++kd) {
        for (std::int64_t kh = 0; kh < k; ++kh) {
          for (std::int64_t kw = 0; kw < k; ++kw) {
            const T wv = wc[(kd * k + kh) * k + kw];
            if (wv == T(0)) continue;
            for (std::int64_t a = 0; a < i0; ++a) {
              const std::int64_t oa = a * stride + kd;
              for (std::int64_t b = 0; b < i1; ++b) {
                const std::int64_t ob = b * stride + kh;
                const T* xrow = xc + (a * i1 + b) * i2;
                T* orow = oc + (oa * o1 + ob) * o2 + kw;
                for (std::int64_t cidx = 0; cidx < i2; ++cidx) {
                  orow[cidx * stride] += wv * xrow[cidx];
                }
              }
            }
          }
        }
      }
    }
  }

  return make_node<T>(
      {co, o0, o1, o2}, std::move(out), {x, w},
      [x, w, ci, co, k, stride, i0, i1, i2, o1, o2](typename TensorT<T>::Impl& node) {
        auto xi = x;
        auto wi = w;
        const auto& g = node.grad;
        const auto& xd = xi.data();
        const auto& wd = wi.data();
        const bool need_x = xi.requires_grad();
        const bool need_w = wi.requires_grad();
        if (!need_x && !need_w) return;
        std::vector<T>* gx = need_x ? &xi.grad_buffer() : nullptr;
        std::vector<T>* gw = need_w ? &wi.grad_buffer() : nullptr;
        const std::int64_t o0 = node.shape[1];
        for (std::int64_t c_in = 0; c_in < ci; ++c_in) {
          const T* xc = xd.data() + c_in * i0 * i1 * i2;
          T* gxc = need_x ? gx->data() + c_in * i0 * i1 * i2 : nullptr;
          for (std::int64_t c_out = 0; c_out < co; ++c_out) {
            const T* gc = g.data() + c_out * o0 * o1 * o2;
            const std::int64_t wbase = (c_in * co + c_out) * k * k * k;
            for (std::int64_t kd = 0; kd < k; ++kd) {
              for (std::int64_t kh = 0; kh < k; ++kh) {
                for (std::int64_t kw = 0; kw < k; ++kw) {
                  const T wv = wd[wbase + (kd * k + kh) * k + kw];
                  T wacc = T(0);
                  for (std::int64_t a = 0; a < i0; ++a) {
                    const std::int64_t oa = a * stride + kd;
                    for (std::int64_t b = 0; b < i1; ++b) {
                      const std::int64_t ob = b * stride + kh;
                      const T* grow = gc + (oa * o1 + ob) * o2 + kw;
                      if (need_w) {
                        const T* xrow = xc + (a * i1 + b) * i2;
                        for (std::int64_t cidx = 0; cidx < i2; ++cidx)
                          wacc += xrow[cidx] * grow[cidx * stride];
                      }
                      if (need_x && wv != T(0)) {
                        T* gxrow = gxc + (a * i1 + b) * i2;
                        for (std::int64_t cidx = 0; cidx < i2; ++cidx)
                          gxrow[cidx] += wv * grow[cidx * stride];
                      }
                    }
                  }
                  if (need_w) (*gw)[wbase + (kd * k + kh) * k + kw] += wacc;
                }
              }
            }
          }
        }
      });
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  if (x.rank() < 2) throw DimensionError("global_avg_pool: need [C, spatial...] input");
  const std::int64_t c = x.shape()[0];
  const std::int64_t n = x.numel() / c;
  if (n == 0) throw DimensionError("global_avg_pool: empty spatial extent");
  const auto& xd = x.data();
  std::vector<T> out(c);
  const T inv = T(1) / static_cast<T>(n);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    T acc = T(0);
    const T* row = xd.data() + ch * n;
    for (std::int64_t i = 0; i < n; ++i) acc += row[i];
    out[ch] = acc * inv;
  }
  return make_node<T>({c}, std::move(out), {x}, [x, c, n, inv](typename TensorT<T>::Impl& node) {
    auto xi = x;
    if (!xi.requires_grad()) return;
    auto& gx = xi.grad_buffer();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T gv = node.grad[ch] * inv;
      T* row = gx.data() + ch * n;
      for (std::int64_t i = 0; i < n; ++i) row[i] += gv;
    }
  });
}

template <typename T>
TensorT<T> dropout(const TensorT<T>& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) {
    throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;

  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  const auto& xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const T m = rng.uniform() < p ? T(0) : keep_scale;
    (*mask)[i] = m;
    out[i] = xd[i] * m;
  }
  return make_node<T>(x.shape(), std::move(out), {x}, [x, mask](typename TensorT<T>::Impl& node) {
    auto xi = x;
    if (!xi.requires_grad()) return;
    auto& gx = xi.grad_buffer();
    for (std::size_t i = 0; i < node.grad.size(); ++i) gx[i] += node.grad[i] * (*mask)[i];
  });
}

template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<std::int64_t>& targets) {
  if (logits.rank() < 1) throw DimensionError("cross_entropy: scalar logits");
  const std::int64_t c = logits.shape().back();
  if (c < 2) throw DimensionError("cross_entropy: need at least 2 classes");
  const std::int64_t rows = logits.numel() / c;
  if (rows != static_cast<std::int64_t>(targets.size())) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " positions");
  }

  const auto& xd = logits.data();
  auto probs = std::make_shared<std::vector<T>>(xd.size());
  T total = T(0);
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t t = targets[r];
    if (t < 0 || t >= c) {
      throw DataError("cross_entropy: class " + std::to_string(t) + " out of range [0, " +
                      std::to_string(c) + ") at position " + std::to_string(r));
    }
    const T* row = xd.data() + r * c;
    T mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    T* prow = probs->data() + r * c;
    for (std::int64_t j = 0; j < c; ++j) {
      const T e = std::exp(row[j] - mx);
      prow[j] = e;
      denom += e;
    }
    const T inv = T(1) / denom;
    for (std::int64_t j = 0; j < c; ++j) prow[j] *= inv;
    total += std::log(denom) + mx - row[t];
  }
  const T inv_rows = T(1) / static_cast<T>(rows);

  auto targets_copy = std::make_shared<std::vector<std::int64_t>>(targets);
  return make_node<T>(
      {}, {total * inv_rows}, {logits},
      [logits, probs, targets_copy, rows, c, inv_rows](typename TensorT<T>::Impl& node) {
        auto li = logits;
        if (!li.requires_grad()) return;
        auto& gl = li.grad_buffer();
        const T gv = node.grad[0] * inv_rows;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* prow = probs->data() + r * c;
          T* grow = gl.data() + r * c;
          const std::int64_t t = (*targets_copy)[r];
          for (std::int64_t j = 0; j < c; ++j) {
            grow[j] += gv * (prow[j] - (j == t ? T(1) : T(0)));
          }
        }
      });
}

#define MTSWIN_INSTANTIATE_CONV_OPS(T)                                                      \
  template TensorT<T> conv3d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                std::int64_t, std::int64_t);                                \
  template TensorT<T> conv_transpose3d<T>(const TensorT<T>&, const TensorT<T>&,             \
                                          std::int64_t);                                    \
  template TensorT<T> global_avg_pool<T>(const TensorT<T>&);                                \
  template TensorT<T> dropout<T>(const TensorT<T>&, double, Rng&, bool);                    \
  template TensorT<T> cross_entropy<T>(const TensorT<T>&, const std::vector<std::int64_t>&);

MTSWIN_INSTANTIATE_CONV_OPS(float)
MTSWIN_INSTANTIATE_CONV_OPS(double)

}  // namespace mtswin
