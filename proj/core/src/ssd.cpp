#include "ssdrl/ssd.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "ssdrl/ops.h"

namespace ssdrl {

const char* to_string(ScanMode mode) {
  return mode == ScanMode::kRecurrent ? "recurrent" : "chunked";
}

ScanMode parse_scan_mode(const std::string& s) {
  if (s == "recurrent") return ScanMode::kRecurrent;
  if (s == "chunked") return ScanMode::kChunked;
  throw ConfigError("unknown scan mode '" + s + "' (expected recurrent|chunked)");
}

namespace {

// Workspace vector whose lifetime is reported to MemoryMeter.
template <typename T>
class MeteredBuffer {
 public:
  explicit MeteredBuffer(std::size_t n) : data_(n, T(0)) {
    MemoryMeter::allocate(n * sizeof(T));
  }
  ~MeteredBuffer() { MemoryMeter::release(data_.size() * sizeof(T)); }
  MeteredBuffer(const MeteredBuffer&) = delete;
  MeteredBuffer& operator=(const MeteredBuffer&) = delete;

  T* data() { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }

 private:
  std::vector<T> data_;
};

template <typename T>
Tensor<T> metered_tensor(Shape shape) {
  Tensor<T> t(std::move(shape));
  MemoryMeter::allocate(t.size() * sizeof(T));
  return t;
}

struct ScanDims {
  std::size_t batch, tokens, width;
};

template <typename T>
ScanDims check_scan_inputs(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c,
                           const Tensor<T>& g, const Tensor<T>& u, const Tensor<T>& x0) {
  if (u.rank() != 3) {
    throw DimensionError("scan: inputs must be [B×K×d], got " + shape_string(u.shape()));
  }
  for (const Tensor<T>* t : {&a, &b, &c, &g}) {
    if (t->shape() != u.shape()) {
      throw DimensionError("scan: gate shape " + shape_string(t->shape()) +
                           " does not match input " + shape_string(u.shape()));
    }
  }
  const ScanDims dims{u.dim(0), u.dim(1), u.dim(2)};
  if (x0.size() != dims.batch * dims.width) {
    throw DimensionError("scan: initial state " + shape_string(x0.shape()) +
                         " does not match batch×width of " + shape_string(u.shape()));
  }
  return dims;
}

template <typename T>
void check_token(T probe, std::size_t k) {
  if (!std::isfinite(probe)) {
    throw NumericError("scan: non-finite value at token " + std::to_string(k),
                       static_cast<std::ptrdiff_t>(k));
  }
}

}  // namespace


template <typename T>
ScanResult<T> scan_recurrent(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c,
                             const Tensor<T>& g, const Tensor<T>& u, const Tensor<T>& x0,
                             bool keep_states) {
  const auto [B, K, d] = check_scan_inputs(a, b, c, g, u, x0);
  ScanResult<T> out{metered_tensor<T>(u.shape()), metered_tensor<T>(Shape{B, d}), {}};
  if (keep_states) out.states = metered_tensor<T>(u.shape());
  MeteredBuffer<T> x(d);
  for (std::size_t n = 0; n < B; ++n) {
    std::copy_n(x0.ptr() + n * d, d, x.data());
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t o = (n * K + k) * d;
      if (keep_states) std::copy_n(x.data(), d, out.states.ptr() + o);
      T probe = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const T yv = c[o + j] * x[j] + g[o + j] * u[o + j];
        out.y[o + j] = yv;
        x[j] = a[o + j] * x[j] + b[o + j] * u[o + j];
        probe += yv + x[j];
      }
      check_token(probe, k);
    }
    std::copy_n(x.data(), d, out.x_final.ptr() + n * d);
  }
  return out;
}

template <typename T>
ScanResult<T> scan_chunked(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c,
                           const Tensor<T>& g, const Tensor<T>& u, const Tensor<T>& x0,
                           std::size_t chunk_size, bool keep_states) {
  if (chunk_size == 0) throw ConfigError("scan: chunk_size must be >= 1");
  const auto [B, K, d] = check_scan_inputs(a, b, c, g, u, x0);
  const std::size_t C = std::min(chunk_size, K);
  ScanResult<T> out{metered_tensor<T>(u.shape()), metered_tensor<T>(Shape{B, d}), {}};
  if (keep_states) out.states = metered_tensor<T>(u.shape());

  // decay[k][i] = prod_{j=i+1}^{k-1} a[j] for i < k <= L, chunk-relative.
  MeteredBuffer<T> decay((C + 1) * C * d);
  // lead[k] = prod_{j<k} a[j]: decay applied to the carried state.
  MeteredBuffer<T> lead((C + 1) * d);
  MeteredBuffer<T> bu(C * d);
  MeteredBuffer<T> carry(d);
  MeteredBuffer<T> x(d);
  auto D = [&](std::size_t k, std::size_t i) { return decay.data() + (k * C + i) * d; };

  for (std::size_t n = 0; n < B; ++n) {
    std::copy_n(x0.ptr() + n * d, d, carry.data());
    for (std::size_t s = 0; s < K; s += C) {
      const std::size_t L = std::min(C, K - s);
      const std::size_t base = (n * K + s) * d;
      const T* ac = a.ptr() + base;
      for (std::size_t i = 0; i < L * d; ++i) bu[i] = b[base + i] * u[base + i];

      // Materialize the lower-triangular decay kernel row by row.
      std::fill_n(lead.data(), d, T(1));
      for (std::size_t k = 1; k <= L; ++k) {
        const T* a_prev = ac + (k - 1) * d;
        for (std::size_t i = 0; i + 1 < k; ++i) {
          const T* src = D(k - 1, i);
          T* dst = D(k, i);
          for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] * a_prev[j];
        }
        std::fill_n(D(k, k - 1), d, T(1));
        T* lk = lead.data() + k * d;
        const T* lprev = lead.data() + (k - 1) * d;
        for (std::size_t j = 0; j < d; ++j) lk[j] = lprev[j] * a_prev[j];
      }

      for (std::size_t k = 0; k <= L; ++k) {
        const T* lk = lead.data() + k * d;
        for (std::size_t j = 0; j < d; ++j) x[j] = lk[j] * carry[j];
        for (std::size_t i = 0; i < k; ++i) {
          const T* dk = D(k, i);
          const T* bui = bu.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) x[j] += dk[j] * bui[j];
        }
        if (k == L) break;
        const std::size_t o = base + k * d;
        if (keep_states) std::copy_n(x.data(), d, out.states.ptr() + o);
        T probe = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const T yv = c[o + j] * x[j] + g[o + j] * u[o + j];
          out.y[o + j] = yv;
          probe += yv;
        }
        check_token(probe, s + k);
      }
      std::copy_n(x.data(), d, carry.data());
    }
    std::copy_n(carry.data(), d, out.x_final.ptr() + n * d);
  }
  return out;
}

namespace {

template <typename T>
ScanGrads<T> make_grads(const Tensor<T>& u) {
  return ScanGrads<T>{Tensor<T>(u.shape()), Tensor<T>(u.shape()), Tensor<T>(u.shape()),
                      Tensor<T>(u.shape()), Tensor<T>(u.shape()),
                      Tensor<T>(Shape{u.dim(0), u.dim(2)})};
}

// Gradients for token o given s_next = dL/dx[k+1].
template <typename T>
inline void token_grads(ScanGrads<T>& gr, const Tensor<T>& a, const Tensor<T>& b,
                        const Tensor<T>& c, const Tensor<T>& g, const Tensor<T>& u,
                        const Tensor<T>& states, const Tensor<T>& gy, std::size_t o,
                        const T* s_next, std::size_t d) {
  (void)a;
  (void)c;
  for (std::size_t j = 0; j < d; ++j) {
    const T xk = states[o + j];
    const T gyv = gy[o + j];
    gr.a[o + j] = s_next[j] * xk;
    gr.b[o + j] = s_next[j] * u[o + j];
    gr.c[o + j] = gyv * xk;
    gr.g[o + j] = gyv * u[o + j];
    gr.u[o + j] = gyv * g[o + j] + s_next[j] * b[o + j];
  }
}

}  // namespace

template <typename T>
ScanGrads<T> scan_backward_recurrent(const Tensor<T>& a, const Tensor<T>& b,
                                     const Tensor<T>& c, const Tensor<T>& g,
                                     const Tensor<T>& u, const Tensor<T>& states,
                                     const Tensor<T>& gy, const Tensor<T>& gx_final) {
  const std::size_t B = u.dim(0), K = u.dim(1), d = u.dim(2);
  if (states.shape() != u.shape() || gy.shape() != u.shape()) {
    throw DimensionError("scan backward: states/gradient shapes do not match input");
  }
  ScanGrads<T> gr = make_grads(u);
  std::vector<T> s(d);
  for (std::size_t n = 0; n < B; ++n) {
    if (gx_final.empty()) {
      std::fill(s.begin(), s.end(), T(0));
    } else {
      std::copy_n(gx_final.ptr() + n * d, d, s.begin());
    }
    for (std::size_t k = K; k-- > 0;) {
      const std::size_t o = (n * K + k) * d;
      token_grads(gr, a, b, c, g, u, states, gy, o, s.data(), d);
      for (std::size_t j = 0; j < d; ++j) s[j] = c[o + j] * gy[o + j] + a[o + j] * s[j];
    }
    std::copy_n(s.begin(), d, gr.x0.ptr() + n * d);
  }
  return gr;
}

template <typename T>
ScanGrads<T> scan_backward_chunked(const Tensor<T>& a, const Tensor<T>& b,
                                   const Tensor<T>& c, const Tensor<T>& g,
                                   const Tensor<T>& u, const Tensor<T>& states,
                                   const Tensor<T>& gy, const Tensor<T>& gx_final,
                                   std::size_t chunk_size) {
  if (chunk_size == 0) throw ConfigError("scan: chunk_size must be >= 1");
  const std::size_t B = u.dim(0), K = u.dim(1), d = u.dim(2);
  if (states.shape() != u.shape() || gy.shape() != u.shape()) {
    throw DimensionError("scan backward: states/gradient shapes do not match input");
  }
  const std::size_t C = std::min(chunk_size, K);
  ScanGrads<T> gr = make_grads(u);

  // rdecay[k][j] = prod_{i=k}^{j-1} a[i] for k <= j < L (chunk-relative).
  MeteredBuffer<T> rdecay(C * C * d);
  // tail[k] = prod_{i=k}^{L-1} a[i]: decay applied to the adjoint carried in.
  MeteredBuffer<T> tail((C + 1) * d);
  MeteredBuffer<T> q(C * d);
  MeteredBuffer<T> adj((C + 1) * d);
  std::vector<T> carry(d);
  auto E = [&](std::size_t k, std::size_t j) { return rdecay.data() + (k * C + j) * d; };

  for (std::size_t n = 0; n < B; ++n) {
    if (gx_final.empty()) {
      std::fill(carry.begin(), carry.end(), T(0));
    } else {
      std::copy_n(gx_final.ptr() + n * d, d, carry.begin());
    }
    const std::size_t n_chunks = (K + C - 1) / C;
    for (std::size_t ci = n_chunks; ci-- > 0;) {
      const std::size_t s0 = ci * C;
      const std::size_t L = std::min(C, K - s0);
      const std::size_t base = (n * K + s0) * d;
      for (std::size_t i = 0; i < L * d; ++i) q[i] = c[base + i] * gy[base + i];

      std::fill_n(tail.data() + L * d, d, T(1));
      for (std::size_t k = L; k-- > 0;) {
        const T* ak = a.ptr() + base + k * d;
        std::fill_n(E(k, k), d, T(1));
        for (std::size_t j = k + 1; j < L; ++j) {
          const T* src = E(k + 1, j);
          T* dst = E(k, j);
          for (std::size_t m = 0; m < d; ++m) dst[m] = ak[m] * src[m];
        }
        T* tk = tail.data() + k * d;
        const T* tnext = tail.data() + (k + 1) * d;
        for (std::size_t m = 0; m < d; ++m) tk[m] = ak[m] * tnext[m];
      }

      std::copy_n(carry.begin(), d, adj.data() + L * d);
      for (std::size_t k = 0; k < L; ++k) {
        T* sk = adj.data() + k * d;
        const T* tk = tail.data() + k * d;
        for (std::size_t m = 0; m < d; ++m) sk[m] = tk[m] * carry[m];
        for (std::size_t j = k; j < L; ++j) {
          const T* ekj = E(k, j);
          const T* qj = q.data() + j * d;
          for (std::size_t m = 0; m < d; ++m) sk[m] += ekj[m] * qj[m];
        }
      }
      for (std::size_t k = 0; k < L; ++k) {
        token_grads(gr, a, b, c, g, u, states, gy, base + k * d,
                    adj.data() + (k + 1) * d, d);
      }
      std::copy_n(adj.data(), d, carry.begin());
    }
    std::copy_n(carry.begin(), d, gr.x0.ptr() + n * d);
  }
  return gr;
}

template <typename T>
Var ssd_scan(Tape<T>& t, Var a, Var b, Var c, Var g, Var u, Var x0, ScanMode mode,
             std::size_t chunk_size) {
  const bool needs = t.grad_enabled() &&
                     (t.requires_grad(a) || t.requires_grad(b) || t.requires_grad(c) ||
                      t.requires_grad(g) || t.requires_grad(u) || t.requires_grad(x0));
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  const Tensor<T>& cv = t.value(c);
  const Tensor<T>& gv = t.value(g);
  const Tensor<T>& uv = t.value(u);
  const Tensor<T>& xv = t.value(x0);
  ScanResult<T> res = mode == ScanMode::kRecurrent
                          ? scan_recurrent(av, bv, cv, gv, uv, xv, needs)
                          : scan_chunked(av, bv, cv, gv, uv, xv, chunk_size, needs);
  if (!needs) return t.constant(std::move(res.y));
  return t.record(
      std::move(res.y), {a, b, c, g, u, x0},
      [a, b, c, g, u, x0, mode, chunk_size, states = std::move(res.states)](
          Tape<T>& tp, const Tensor<T>& gy) {
        const Tensor<T> none;
        ScanGrads<T> gr =
            mode == ScanMode::kRecurrent
                ? scan_backward_recurrent(tp.value(a), tp.value(b), tp.value(c),
                                          tp.value(g), tp.value(u), states, gy, none)
                : scan_backward_chunked(tp.value(a), tp.value(b), tp.value(c),
                                        tp.value(g), tp.value(u), states, gy, none,
                                        chunk_size);
        tp.accumulate(a, gr.a);
        tp.accumulate(b, gr.b);
        tp.accumulate(c, gr.c);
        tp.accumulate(g, gr.g);
        tp.accumulate(u, gr.u);
        tp.accumulate(x0, gr.x0.reshaped(tp.value(x0).shape()));
      });
}

template <typename T>
void init_ssd_layer(ParamStore<T>& store, const std::string& prefix, std::size_t width,
                    Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(width));
  for (const char* w : {"wa", "wb", "wc", "wd"}) {
    store.add(prefix + w, uniform_tensor<T>(Shape{width, width}, bound, rng));
  }
  store.add(prefix + "ln_gain", Tensor<T>(Shape{width}, T(1)));
  store.add(prefix + "ln_bias", Tensor<T>(Shape{width}, T(0)));
}

template <typename T>
Var ssd_layer_forward(Tape<T>& t, const ParamStore<T>& store, const std::string& prefix,
                      Var h, const BackboneConfig& config) {
  // Read extents now: recording nodes may reallocate the tape's storage.
  const std::size_t batch = t.value(h).dim(0), width = t.value(h).dim(2);
  Var a = ops::sigmoid(t, ops::linear(t, h, t.param(store, prefix + "wa")));
  Var b = ops::sigmoid(t, ops::linear(t, h, t.param(store, prefix + "wb")));
  Var c = ops::sigmoid(t, ops::linear(t, h, t.param(store, prefix + "wc")));
  Var g = ops::sigmoid(t, ops::linear(t, h, t.param(store, prefix + "wd")));
  Var x0 = t.constant(Tensor<T>(Shape{batch, width}));
  return ssd_scan(t, a, b, c, g, h, x0, config.scan_mode, config.chunk_size);
}

template <typename T>
Var ssd_backbone_forward(Tape<T>& t, const ParamStore<T>& store, const std::string& prefix,
                         Var u, const BackboneConfig& config) {
  Var h = u;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string lp = prefix + "l" + std::to_string(l) + ".";
    Var y = ssd_layer_forward(t, store, lp, h, config);
    h = ops::layernorm(t, ops::add(t, y, h), t.param(store, lp + "ln_gain"),
                       t.param(store, lp + "ln_bias"));
  }
  return h;
}

template <typename T>
void init_ssd_backbone(ParamStore<T>& store, const std::string& prefix,
                       const BackboneConfig& config, Rng& rng) {
  for (std::size_t l = 0; l < config.layers; ++l) {
    init_ssd_layer(store, prefix + "l" + std::to_string(l) + ".", config.width, rng);
  }
}

#define SSDRL_INSTANTIATE_SSD(T)                                                         \
  template ScanResult<T> scan_recurrent<T>(const Tensor<T>&, const Tensor<T>&,           \
                                           const Tensor<T>&, const Tensor<T>&,           \
                                           const Tensor<T>&, const Tensor<T>&, bool);    \
  template ScanResult<T> scan_chunked<T>(const Tensor<T>&, const Tensor<T>&,             \
                                         const Tensor<T>&, const Tensor<T>&,             \
                                         const Tensor<T>&, const Tensor<T>&,             \
                                         std::size_t, bool);                             \
  template ScanGrads<T> scan_backward_recurrent<T>(                                      \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template ScanGrads<T> scan_backward_chunked<T>(                                        \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
      std::size_t);                                                                      \
  template Var ssd_scan<T>(Tape<T>&, Var, Var, Var, Var, Var, Var, ScanMode,             \
                           std::size_t);                                                 \
  template void init_ssd_layer<T>(ParamStore<T>&, const std::string&, std::size_t,       \
                                  Rng&);                                                 \
  template Var ssd_layer_forward<T>(Tape<T>&, const ParamStore<T>&, const std::string&,  \
                                    Var, const BackboneConfig&);                         \
  template Var ssd_backbone_forward<T>(Tape<T>&, const ParamStore<T>&,                   \
                                       const std::string&, Var, const BackboneConfig&);  \
  template void init_ssd_backbone<T>(ParamStore<T>&, const std::string&,                 \
                                     const BackboneConfig&, Rng&);

SSDRL_INSTANTIATE_SSD(float)
SSDRL_INSTANTIATE_SSD(double)

}  // namespace ssdrl
