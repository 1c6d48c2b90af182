#include "ssdrl/ops.h"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ssdrl/kernels.h"
#include "ssdrl/memory_meter.h"

namespace ssdrl::ops {

namespace {

Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i + 1 < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct Broadcast {
  Shape out;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
};

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return {a, shape_numel(a), shape_numel(b)};
  if (is_suffix(strip_leading_ones(b), a)) return {a, shape_numel(a), shape_numel(b)};
  if (is_suffix(strip_leading_ones(a), b)) return {b, shape_numel(a), shape_numel(b)};
  throw DimensionError(std::string(op) + ": shapes " + shape_string(a) + " and " +
                       shape_string(b) + " are not broadcast-compatible");
}

// Sums a full-size gradient down to an operand that was repeated along the
// leading axes.
template <typename T>
Tensor<T> reduce_to(const Tensor<T>& g, const Shape& target) {
  const std::size_t n = shape_numel(target);
  if (n == g.size()) return g.reshaped(target);
  Tensor<T> out(target);
  T* o = out.ptr();
  const T* src = g.ptr();
  for (std::size_t i = 0; i < g.size(); i += n) {
    for (std::size_t j = 0; j < n; ++j) o[j] += src[i + j];
  }
  return out;
}

template <typename T, typename F>
Tensor<T> binary_values(const Tensor<T>& a, const Tensor<T>& b, const Broadcast& bc,
                        F f) {
  Tensor<T> out(bc.out);
  T* o = out.ptr();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  const std::size_t n = out.size();
  if (bc.n_a == n && bc.n_b == n) {
    for (std::size_t i = 0; i < n; ++i) o[i] = f(pa[i], pb[i]);
  } else if (bc.n_a == n) {
    for (std::size_t i = 0; i < n; ++i) o[i] = f(pa[i], pb[i % bc.n_b]);
  } else {
    for (std::size_t i = 0; i < n; ++i) o[i] = f(pa[i % bc.n_a], pb[i]);
  }
  return out;
}

template <typename T, typename F, typename D>
Var unary(Tape<T>& t, Var x, F f, D dydx) {
  const Tensor<T>& xv = t.value(x);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  const std::int32_t yid = static_cast<std::int32_t>(t.size());
  return t.record(std::move(y), {x}, [x, yid, dydx](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& xv = tp.value(x);
    const Tensor<T>& yv = tp.value(Var{yid});
    Tensor<T> gx(xv.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * dydx(xv[i], yv[i]);
    tp.accumulate(x, gx);
  });
}

template <typename T>
void require_rank(const Tensor<T>& v, std::size_t rank, const char* op) {
  if (v.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_string(v.shape()));
  }
}

}  // namespace

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const auto bc = broadcast_shapes(t.value(a).shape(), t.value(b).shape(), "add");
  Tensor<T> y = binary_values(t.value(a), t.value(b), bc, [](T x, T z) { return x + z; });
  return t.record(std::move(y), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(a, reduce_to(g, tp.value(a).shape()));
    tp.accumulate(b, reduce_to(g, tp.value(b).shape()));
  });
}

template <typename T>
Var sub(Tape<T>& t, Var a, Var b) {
  const auto bc = broadcast_shapes(t.value(a).shape(), t.value(b).shape(), "sub");
  Tensor<T> y = binary_values(t.value(a), t.value(b), bc, [](T x, T z) { return x - z; });
  return t.record(std::move(y), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(a, reduce_to(g, tp.value(a).shape()));
    Tensor<T> gb = reduce_to(g, tp.value(b).shape());
    for (T& v : gb.data()) v = -v;
    tp.accumulate(b, gb);
  });
}

template <typename T>
Var mul(Tape<T>& t, Var a, Var b) {
  const auto bc = broadcast_shapes(t.value(a).shape(), t.value(b).shape(), "mul");
  Tensor<T> y = binary_values(t.value(a), t.value(b), bc, [](T x, T z) { return x * z; });
  return t.record(std::move(y), {a, b}, [a, b, bc](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& av = tp.value(a);
    const Tensor<T>& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor<T> ga = binary_values(g, bv, Broadcast{bc.out, g.size(), bc.n_b},
                                   [](T x, T z) { return x * z; });
      tp.accumulate(a, reduce_to(ga, av.shape()));
    }
    if (tp.requires_grad(b)) {
      Tensor<T> gb = binary_values(g, av, Broadcast{bc.out, g.size(), bc.n_a},
                                   [](T x, T z) { return x * z; });
      tp.accumulate(b, reduce_to(gb, bv.shape()));
    }
  });
}

template <typename T>
Var sigmoid(Tape<T>& t, Var x) {
  return unary(
      t, x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
  return unary(
      t, x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var tanh(Tape<T>& t, Var x) {
  return unary(
      t, x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var exp(Tape<T>& t, Var x) {
  return unary(
      t, x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var log(Tape<T>& t, Var x) {
  for (T v : t.value(x).data()) {
    if (!(v > T(0))) {
      throw DomainError("log: input " + std::to_string(double(v)) +
                        " is outside (0, inf)");
    }
  }
  return unary(
      t, x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var square(Tape<T>& t, Var x) {
  return unary(
      t, x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var sqrt(Tape<T>& t, Var x) {
  for (T v : t.value(x).data()) {
    if (v < T(0)) {
      throw DomainError("sqrt: input " + std::to_string(double(v)) + " is negative");
    }
  }
  return unary(
      t, x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var neg(Tape<T>& t, Var x) {
  return unary(
      t, x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Var scale(Tape<T>& t, Var x, T factor) {
  return unary(
      t, x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var add_scalar(Tape<T>& t, Var x, T offset) {
  return unary(
      t, x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Var clamp(Tape<T>& t, Var x, T lo, T hi) {
  return unary(
      t, x, [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Var sum(Tape<T>& t, Var x) {
  T acc = 0;
  for (T v : t.value(x).data()) acc += v;
  return t.record(Tensor<T>::scalar(acc), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(x, Tensor<T>(tp.value(x).shape(), g[0]));
  });
}

template <typename T>
Var mean(Tape<T>& t, Var x) {
  const Tensor<T>& xv = t.value(x);
  T acc = 0;
  for (T v : xv.data()) acc += v;
  const T inv = T(1) / T(xv.size());
  return t.record(Tensor<T>::scalar(acc * inv), {x},
                  [x, inv](Tape<T>& tp, const Tensor<T>& g) {
                    tp.accumulate(x, Tensor<T>(tp.value(x).shape(), g[0] * inv));
                  });
}

template <typename T>
Var reshape(Tape<T>& t, Var x, Shape shape) {
  return t.record(t.value(x).reshaped(std::move(shape)), {x},
                  [x](Tape<T>& tp, const Tensor<T>& g) {
                    tp.accumulate(x, g.reshaped(tp.value(x).shape()));
                  });
}

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(av.shape()) + " by " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> y(Shape{m, n});
  kernels::gemm_nn(m, k, n, av.ptr(), bv.ptr(), y.ptr());
  return t.record(std::move(y), {a, b}, [a, b, m, k, n](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& av = tp.value(a);
    const Tensor<T>& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor<T> ga(av.shape());
      kernels::gemm_nt(m, n, k, g.ptr(), bv.ptr(), ga.ptr());
      tp.accumulate(a, ga);
    }
    if (tp.requires_grad(b)) {
      Tensor<T> gb(bv.shape());
      kernels::gemm_tn(m, k, n, av.ptr(), g.ptr(), gb.ptr());
      tp.accumulate(b, gb);
    }
  });
}

namespace {

template <typename T>
Var linear_impl(Tape<T>& t, Var x, Var w, const Var* bias) {
  const Tensor<T>& xv = t.value(x);
  const Tensor<T>& wv = t.value(w);
  if (wv.rank() != 2 || xv.rank() == 0 || xv.shape().back() != wv.dim(0)) {
    throw DimensionError("linear: input " + shape_string(xv.shape()) +
                         " does not match weight " + shape_string(wv.shape()));
  }
  const std::size_t in = wv.dim(0), out = wv.dim(1);
  const std::size_t rows = xv.size() / in;
  Shape yshape = xv.shape();
  yshape.back() = out;
  Tensor<T> y(yshape);
  if (bias) {
    const Tensor<T>& bv = t.value(*bias);
    if (bv.size() != out) {
      throw DimensionError("linear: bias " + shape_string(bv.shape()) +
                           " does not match output width " + std::to_string(out));
    }
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(bv.ptr(), bv.ptr() + out, y.ptr() + r * out);
    }
  }
  kernels::gemm_nn(rows, in, out, xv.ptr(), wv.ptr(), y.ptr());
  Var b = bias ? *bias : Var{};
  auto backward = [x, w, b, rows, in, out](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& xv = tp.value(x);
    const Tensor<T>& wv = tp.value(w);
    if (tp.requires_grad(x)) {
      Tensor<T> gx(xv.shape());
      kernels::gemm_nt(rows, out, in, g.ptr(), wv.ptr(), gx.ptr());
      tp.accumulate(x, gx);
    }
    if (tp.requires_grad(w)) {
      Tensor<T> gw(wv.shape());
      kernels::gemm_tn(rows, in, out, xv.ptr(), g.ptr(), gw.ptr());
      tp.accumulate(w, gw);
    }
    if (b.valid() && tp.requires_grad(b)) {
      Tensor<T> gb(tp.value(b).shape());
      for (std::size_t r = 0; r < rows; ++r) {
        const T* grow = g.ptr() + r * out;
        for (std::size_t j = 0; j < out; ++j) gb[j] += grow[j];
      }
      tp.accumulate(b, gb);
    }
  };
  if (bias) return t.record(std::move(y), {x, w, *bias}, backward);
  return t.record(std::move(y), {x, w}, backward);
}

}  // namespace

template <typename T>
Var linear(Tape<T>& t, Var x, Var w) {
  return linear_impl(t, x, w, nullptr);
}

template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var bias) {
  return linear_impl(t, x, w, &bias);
}

template <typename T>
Var layernorm(Tape<T>& t, Var x, Var gain, Var bias, T epsilon) {
  const Tensor<T>& xv = t.value(x);
  const std::size_t d = xv.shape().back();
  if (d < 2) throw DimensionError("layernorm: normalized width must be >= 2");
  if (t.value(gain).size() != d || t.value(bias).size() != d) {
    throw DimensionError("layernorm: gain/bias width does not match " +
                         shape_string(xv.shape()));
  }
  const std::size_t rows = xv.size() / d;
  const T* gv = t.value(gain).ptr();
  const T* bv = t.value(bias).ptr();
  Tensor<T> y(xv.shape());
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + epsilon);
    rstd[r] = rs;
    T* yr = y.ptr() + r * d;
    T* hr = xhat.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mu) * rs;
      yr[j] = hr[j] * gv[j] + bv[j];
    }
  }
  return t.record(
      std::move(y), {x, gain, bias},
      [x, gain, bias, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](
          Tape<T>& tp, const Tensor<T>& g) {
        const T* gv = tp.value(gain).ptr();
        Tensor<T> ggain(tp.value(gain).shape());
        Tensor<T> gbias(tp.value(bias).shape());
        Tensor<T> gx(tp.value(x).shape());
        std::vector<T> gh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.ptr() + r * d;
          const T* hr = xhat.data() + r * d;
          T mean_gh = 0, mean_ghh = 0;
          for (std::size_t j = 0; j < d; ++j) {
            ggain[j] += gr[j] * hr[j];
            gbias[j] += gr[j];
            gh[j] = gr[j] * gv[j];
            mean_gh += gh[j];
            mean_ghh += gh[j] * hr[j];
          }
          mean_gh /= T(d);
          mean_ghh /= T(d);
          T* gxr = gx.ptr() + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            gxr[j] = rstd[r] * (gh[j] - mean_gh - hr[j] * mean_ghh);
          }
        }
        tp.accumulate(x, gx);
        tp.accumulate(gain, ggain);
        tp.accumulate(bias, gbias);
      });
}

template <typename T>
Var concat_last(Tape<T>& t, Var a, Var b) {
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  require_rank(av, 2, "concat_last");
  require_rank(bv, 2, "concat_last");
  if (av.dim(0) != bv.dim(0)) {
    throw DimensionError("concat_last: row counts differ: " + shape_string(av.shape()) +
                         " vs " + shape_string(bv.shape()));
  }
  const std::size_t rows = av.dim(0), n1 = av.dim(1), n2 = bv.dim(1);
  Tensor<T> y(Shape{rows, n1 + n2});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.ptr() + r * n1, n1, y.ptr() + r * (n1 + n2));
    std::copy_n(bv.ptr() + r * n2, n2, y.ptr() + r * (n1 + n2) + n1);
  }
  return t.record(std::move(y), {a, b},
                  [a, b, rows, n1, n2](Tape<T>& tp, const Tensor<T>& g) {
                    Tensor<T> ga(Shape{rows, n1}), gb(Shape{rows, n2});
                    for (std::size_t r = 0; r < rows; ++r) {
                      std::copy_n(g.ptr() + r * (n1 + n2), n1, ga.ptr() + r * n1);
                      std::copy_n(g.ptr() + r * (n1 + n2) + n1, n2, gb.ptr() + r * n2);
                    }
                    tp.accumulate(a, ga);
                    tp.accumulate(b, gb);
                  });
}

template <typename T>
Var concat_tokens(Tape<T>& t, Var a, Var b) {
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  require_rank(av, 3, "concat_tokens");
  require_rank(bv, 3, "concat_tokens");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2)) {
    throw DimensionError("concat_tokens: incompatible " + shape_string(av.shape()) +
                         " and " + shape_string(bv.shape()));
  }
  const std::size_t batch = av.dim(0), k1 = av.dim(1), k2 = bv.dim(1), d = av.dim(2);
  const std::size_t s1 = k1 * d, s2 = k2 * d;
  Tensor<T> y(Shape{batch, k1 + k2, d});
  for (std::size_t i = 0; i < batch; ++i) {
    std::copy_n(av.ptr() + i * s1, s1, y.ptr() + i * (s1 + s2));
    std::copy_n(bv.ptr() + i * s2, s2, y.ptr() + i * (s1 + s2) + s1);
  }
  return t.record(std::move(y), {a, b},
                  [a, b, batch, s1, s2](Tape<T>& tp, const Tensor<T>& g) {
                    Tensor<T> ga(tp.value(a).shape()), gb(tp.value(b).shape());
                    for (std::size_t i = 0; i < batch; ++i) {
                      std::copy_n(g.ptr() + i * (s1 + s2), s1, ga.ptr() + i * s1);
                      std::copy_n(g.ptr() + i * (s1 + s2) + s1, s2, gb.ptr() + i * s2);
                    }
                    tp.accumulate(a, ga);
                    tp.accumulate(b, gb);
                  });
}

template <typename T>
Var select_token(Tape<T>& t, Var x, std::size_t k) {
  const Tensor<T>& xv = t.value(x);
  require_rank(xv, 3, "select_token");
  const std::size_t batch = xv.dim(0), K = xv.dim(1), d = xv.dim(2);
  if (k >= K) throw DimensionError("select_token: index out of range");
  Tensor<T> y(Shape{batch, d});
  for (std::size_t i = 0; i < batch; ++i) {
    std::copy_n(xv.ptr() + (i * K + k) * d, d, y.ptr() + i * d);
  }
  return t.record(std::move(y), {x}, [x, k, batch, K, d](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gx(tp.value(x).shape());
    for (std::size_t i = 0; i < batch; ++i) {
      std::copy_n(g.ptr() + i * d, d, gx.ptr() + (i * K + k) * d);
    }
    tp.accumulate(x, gx);
  });
}

template <typename T>
Var mean_tokens(Tape<T>& t, Var x, std::size_t begin, std::size_t end) {
  const Tensor<T>& xv = t.value(x);
  require_rank(xv, 3, "mean_tokens");
  const std::size_t batch = xv.dim(0), K = xv.dim(1), d = xv.dim(2);
  if (begin > end || end > K) throw DimensionError("mean_tokens: bad token range");
  const std::size_t count = end - begin;
  Tensor<T> y(Shape{batch, d});
  if (count == 0) return t.constant(std::move(y));
  const T inv = T(1) / T(count);
  for (std::size_t i = 0; i < batch; ++i) {
    T* yr = y.ptr() + i * d;
    for (std::size_t k = begin; k < end; ++k) {
      const T* xr = xv.ptr() + (i * K + k) * d;
      for (std::size_t j = 0; j < d; ++j) yr[j] += xr[j];
    }
    for (std::size_t j = 0; j < d; ++j) yr[j] *= inv;
  }
  return t.record(std::move(y), {x},
                  [x, begin, end, batch, K, d, inv](Tape<T>& tp, const Tensor<T>& g) {
                    Tensor<T> gx(tp.value(x).shape());
                    for (std::size_t i = 0; i < batch; ++i) {
                      for (std::size_t k = begin; k < end; ++k) {
                        T* gr = gx.ptr() + (i * K + k) * d;
                        for (std::size_t j = 0; j < d; ++j) gr[j] = g[i * d + j] * inv;
                      }
                    }
                    tp.accumulate(x, gx);
                  });
}

template <typename T>
Var repeat_batch(Tape<T>& t, Var x, std::size_t batch) {
  const Tensor<T>& xv = t.value(x);
  Shape shape{batch};
  shape.insert(shape.end(), xv.shape().begin(), xv.shape().end());
  Tensor<T> y(shape);
  for (std::size_t i = 0; i < batch; ++i) {
    std::copy_n(xv.ptr(), xv.size(), y.ptr() + i * xv.size());
  }
  return t.record(std::move(y), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(x, reduce_to(g, tp.value(x).shape()));
  });
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k) {
  require_rank(q, 3, "attention_weights");
  const std::size_t batch = q.dim(0), K = q.dim(1), d = q.dim(2);
  const T inv_sqrt_d = T(1) / std::sqrt(T(d));
  Tensor<T> p(Shape{batch, K, K});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* qb = q.ptr() + b * K * d;
    const T* kb = k.ptr() + b * K * d;
    T* pb = p.ptr() + b * K * K;
    kernels::gemm_nt(K, d, K, qb, kb, pb);
    for (std::size_t i = 0; i < K; ++i) {
      T* row = pb + i * K;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < K; ++j) {
        row[j] *= inv_sqrt_d;
        mx = std::max(mx, row[j]);
      }
      T z = 0;
      for (std::size_t j = 0; j < K; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      for (std::size_t j = 0; j < K; ++j) row[j] /= z;
    }
  }
  return p;
}

template <typename T>
Var softmax_attention(Tape<T>& t, Var q, Var k, Var v) {
  const Tensor<T>& qv = t.value(q);
  const Tensor<T>& kv = t.value(k);
  const Tensor<T>& vv = t.value(v);
  require_rank(qv, 3, "softmax_attention");
  if (kv.shape() != qv.shape() || vv.shape() != qv.shape()) {
    throw DimensionError("softmax_attention: q/k/v shapes differ");
  }
  const std::size_t batch = qv.dim(0), K = qv.dim(1), d = qv.dim(2);
  const bool needs_grad = t.grad_enabled() &&
                          (t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v));
  Tensor<T> y(qv.shape());
  // Outputs stay on the meter until it is reset, like scan results.
  MemoryMeter::allocate(y.size() * sizeof(T));
  if (!needs_grad) {
    // Row-streaming evaluation keeps only one score row live.
    const T inv_sqrt_d = T(1) / std::sqrt(T(d));
    std::vector<T> row(K);
    MemoryMeter::allocate(K * sizeof(T));
    for (std::size_t b = 0; b < batch; ++b) {
      const T* qb = qv.ptr() + b * K * d;
      const T* kb = kv.ptr() + b * K * d;
      const T* vb = vv.ptr() + b * K * d;
      for (std::size_t i = 0; i < K; ++i) {
        std::fill(row.begin(), row.end(), T(0));
        kernels::gemm_nt(1, d, K, qb + i * d, kb, row.data());
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < K; ++j) {
          row[j] *= inv_sqrt_d;
          mx = std::max(mx, row[j]);
        }
        T z = 0;
        for (std::size_t j = 0; j < K; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (std::size_t j = 0; j < K; ++j) row[j] /= z;
        kernels::gemm_nn(1, K, d, row.data(), vb, y.ptr() + (b * K + i) * d);
      }
    }
    MemoryMeter::release(K * sizeof(T));
    return t.constant(std::move(y));
  }
  // The probability matrix is kept for the backward pass.
  Tensor<T> p = attention_weights(qv, kv);
  MemoryMeter::allocate(p.size() * sizeof(T));
  for (std::size_t b = 0; b < batch; ++b) {
    kernels::gemm_nn(K, K, d, p.ptr() + b * K * K, vv.ptr() + b * K * d,
                     y.ptr() + b * K * d);
  }
  return t.record(
      std::move(y), {q, k, v},
      [q, k, v, batch, K, d, p = std::move(p)](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& qv = tp.value(q);
        const Tensor<T>& kv = tp.value(k);
        const Tensor<T>& vv = tp.value(v);
        const T inv_sqrt_d = T(1) / std::sqrt(T(d));
        Tensor<T> gq(qv.shape()), gk(kv.shape()), gv(vv.shape());
        std::vector<T> gp(K * K);
        for (std::size_t b = 0; b < batch; ++b) {
          const T* pb = p.ptr() + b * K * K;
          const T* gb = g.ptr() + b * K * d;
          kernels::gemm_tn(K, K, d, pb, gb, gv.ptr() + b * K * d);
          std::fill(gp.begin(), gp.end(), T(0));
          kernels::gemm_nt(K, d, K, gb, vv.ptr() + b * K * d, gp.data());
          // Softmax backward in place: gs = p * (gp - <gp, p>_row), pre-scaled.
          for (std::size_t i = 0; i < K; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < K; ++j) dot += gp[i * K + j] * pb[i * K + j];
            for (std::size_t j = 0; j < K; ++j) {
              gp[i * K + j] = pb[i * K + j] * (gp[i * K + j] - dot) * inv_sqrt_d;
            }
          }
          kernels::gemm_nn(K, K, d, gp.data(), kv.ptr() + b * K * d,
                           gq.ptr() + b * K * d);
          kernels::gemm_tn(K, K, d, gp.data(), qv.ptr() + b * K * d,
                           gk.ptr() + b * K * d);
        }
        tp.accumulate(q, gq);
        tp.accumulate(k, gk);
        tp.accumulate(v, gv);
      });
}

#define SSDRL_INSTANTIATE_OPS(T)                                              \
  template Var add<T>(Tape<T>&, Var, Var);                                    \
  template Var sub<T>(Tape<T>&, Var, Var);                                    \
  template Var mul<T>(Tape<T>&, Var, Var);                                    \
  template Var sigmoid<T>(Tape<T>&, Var);                                     \
  template Var relu<T>(Tape<T>&, Var);                                        \
  template Var tanh<T>(Tape<T>&, Var);                                        \
  template Var exp<T>(Tape<T>&, Var);                                         \
  template Var log<T>(Tape<T>&, Var);                                         \
  template Var square<T>(Tape<T>&, Var);                                      \
  template Var sqrt<T>(Tape<T>&, Var);                                        \
  template Var neg<T>(Tape<T>&, Var);                                         \
  template Var scale<T>(Tape<T>&, Var, T);                                    \
  template Var add_scalar<T>(Tape<T>&, Var, T);                               \
  template Var clamp<T>(Tape<T>&, Var, T, T);                                 \
  template Var sum<T>(Tape<T>&, Var);                                         \
  template Var mean<T>(Tape<T>&, Var);                                        \
  template Var reshape<T>(Tape<T>&, Var, Shape);                              \
  template Var matmul<T>(Tape<T>&, Var, Var);                                 \
  template Var linear<T>(Tape<T>&, Var, Var);                                 \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                            \
  template Var layernorm<T>(Tape<T>&, Var, Var, Var, T);                      \
  template Var concat_last<T>(Tape<T>&, Var, Var);                            \
  template Var concat_tokens<T>(Tape<T>&, Var, Var);                          \
  template Var select_token<T>(Tape<T>&, Var, std::size_t);                   \
  template Var mean_tokens<T>(Tape<T>&, Var, std::size_t, std::size_t);       \
  template Var repeat_batch<T>(Tape<T>&, Var, std::size_t);                   \
  template Var softmax_attention<T>(Tape<T>&, Var, Var, Var);                 \
  template Tensor<T> attention_weights<T>(const Tensor<T>&, const Tensor<T>&);

SSDRL_INSTANTIATE_OPS(float)
SSDRL_INSTANTIATE_OPS(double)

}  // namespace ssdrl::ops
