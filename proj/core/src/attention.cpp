#include "ssdrl/attention.h"

#include <cmath>

#include "ssdrl/ops.h"

namespace ssdrl {

template <typename T>
void init_attention_layer(ParamStore<T>& store, const std::string& prefix,
                          std::size_t width, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(width));
  for (const char* w : {"wq", "wk", "wv", "wo"}) {
    store.add(prefix + w, uniform_tensor<T>(Shape{width, width}, bound, rng));
  }
  store.add(prefix + "ln_gain", Tensor<T>(Shape{width}, T(1)));
  store.add(prefix + "ln_bias", Tensor<T>(Shape{width}, T(0)));
}

template <typename T>
Var attention_layer_forward(Tape<T>& t, const ParamStore<T>& store,
                            const std::string& prefix, Var h) {
  Var q = ops::linear(t, h, t.param(store, prefix + "wq"));
  Var k = ops::linear(t, h, t.param(store, prefix + "wk"));
  Var v = ops::linear(t, h, t.param(store, prefix + "wv"));
  Var o = ops::linear(t, ops::softmax_attention(t, q, k, v), t.param(store, prefix + "wo"));
  return ops::layernorm(t, ops::add(t, o, h), t.param(store, prefix + "ln_gain"),
                        t.param(store, prefix + "ln_bias"));
}

template <typename T>
void init_attention_backbone(ParamStore<T>& store, const std::string& prefix,
                             std::size_t width, std::size_t layers, Rng& rng) {
  for (std::size_t l = 0; l < layers; ++l) {
    init_attention_layer(store, prefix + "l" + std::to_string(l) + ".", width, rng);
  }
}

template <typename T>
Var attention_backbone_forward(Tape<T>& t, const ParamStore<T>& store,
                               const std::string& prefix, Var u, std::size_t layers) {
  Var h = u;
  for (std::size_t l = 0; l < layers; ++l) {
    h = attention_layer_forward(t, store, prefix + "l" + std::to_string(l) + ".", h);
  }
  return h;
}

#define SSDRL_INSTANTIATE_ATTENTION(T)                                                 \
  template void init_attention_layer<T>(ParamStore<T>&, const std::string&,            \
                                        std::size_t, Rng&);                            \
  template Var attention_layer_forward<T>(Tape<T>&, const ParamStore<T>&,              \
                                          const std::string&, Var);                    \
  template void init_attention_backbone<T>(ParamStore<T>&, const std::string&,         \
                                           std::size_t, std::size_t, Rng&);            \
  template Var attention_backbone_forward<T>(Tape<T>&, const ParamStore<T>&,           \
                                             const std::string&, Var, std::size_t);

SSDRL_INSTANTIATE_ATTENTION(float)
SSDRL_INSTANTIATE_ATTENTION(double)

}  // namespace ssdrl
