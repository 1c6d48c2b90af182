#pragma once

#include <cstddef>
#include <string>

#include "ssdrl/param_store.h"
#include "ssdrl/rng.h"
#include "ssdrl/tape.h"

// Single-head softmax self-attention layer used as the quadratic-cost fusion
// baseline: H <- LN(W_O softmax(Q Kᵀ / √d) V + H) with Q, K, V = H W_Q, H W_K,
// H W_V.

namespace ssdrl {

// Parameter names under `prefix`: wq, wk, wv, wo ([d×d]) and ln_gain, ln_bias.
template <typename T>
void init_attention_layer(ParamStore<T>& store, const std::string& prefix,
                          std::size_t width, Rng& rng);

// h: [B×K×d] -> [B×K×d]
template <typename T>
Var attention_layer_forward(Tape<T>& t, const ParamStore<T>& store,
                            const std::string& prefix, Var h);

// Stacks `layers` attention layers named prefix + "l<i>.".
template <typename T>
void init_attention_backbone(ParamStore<T>& store, const std::string& prefix,
                             std::size_t width, std::size_t layers, Rng& rng);

template <typename T>
Var attention_backbone_forward(Tape<T>& t, const ParamStore<T>& store,
                               const std::string& prefix, Var u, std::size_t layers);

}  // namespace ssdrl
