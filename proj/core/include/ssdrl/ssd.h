#pragma once

#include <cstddef>
#include <string>

#include "ssdrl/memory_meter.h"
#include "ssdrl/param_store.h"
#include "ssdrl/rng.h"
#include "ssdrl/tape.h"

// Selective state-space layer with diagonal, input-gated dynamics.
//
// For every sequence and channel, with gate activations a, b, c, g in (0, 1):
//
//   x[k+1] = a[k] * x[k] + b[k] * u[k]
//   y[k]   = c[k] * x[k] + g[k] * u[k]
//
// The same map has a convolutional form
//
//   y[k] = g[k] u[k] + sum_{i<k} c[k] (prod_{j=i+1}^{k-1} a[j]) b[i] u[i]
//          + c[k] (prod_{j<k} a[j]) x[0]
//
// which the chunked scan evaluates one chunk at a time, carrying x across
// chunk boundaries through the cumulative decay product.

namespace ssdrl {

enum class ScanMode { kRecurrent, kChunked };

const char* to_string(ScanMode mode);
ScanMode parse_scan_mode(const std::string& s);

template <typename T>
struct ScanResult {
  Tensor<T> y;        // [B×K×d]
  Tensor<T> x_final;  // [B×d]
  Tensor<T> states;   // [B×K×d] state before each token; empty unless requested
};

template <typename T>
struct ScanGrads {
  Tensor<T> a, b, c, g, u;  // [B×K×d]
  Tensor<T> x0;             // [B×d]
};

// a, b, c, g, u: [B×K×d]; x0: [B×d]. Throws NumericError carrying the token
// index when a non-finite value appears.
template <typename T>
ScanResult<T> scan_recurrent(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c,
                             const Tensor<T>& g, const Tensor<T>& u, const Tensor<T>& x0,
                             bool keep_states = false);

template <typename T>
ScanResult<T> scan_chunked(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c,
                           const Tensor<T>& g, const Tensor<T>& u, const Tensor<T>& x0,
                           std::size_t chunk_size, bool keep_states = false);

// Exact reverse of the recurrence given the saved states. gx_final may be
// empty (treated as zero).
template <typename T>
ScanGrads<T> scan_backward_recurrent(const Tensor<T>& a, const Tensor<T>& b,
                                     const Tensor<T>& c, const Tensor<T>& g,
                                     const Tensor<T>& u, const Tensor<T>& states,
                                     const Tensor<T>& gy, const Tensor<T>& gx_final);

// Same gradients with the adjoint recurrence evaluated chunk-wise.
template <typename T>
ScanGrads<T> scan_backward_chunked(const Tensor<T>& a, const Tensor<T>& b,
                                   const Tensor<T>& c, const Tensor<T>& g,
                                   const Tensor<T>& u, const Tensor<T>& states,
                                   const Tensor<T>& gy, const Tensor<T>& gx_final,
                                   std::size_t chunk_size);

// Tape op over gate activations. Returns y [B×K×d].
template <typename T>
Var ssd_scan(Tape<T>& t, Var a, Var b, Var c, Var g, Var u, Var x0, ScanMode mode,
             std::size_t chunk_size);

struct BackboneConfig {
  std::size_t width = 128;
  std::size_t layers = 2;
  ScanMode scan_mode = ScanMode::kChunked;
  std::size_t chunk_size = 64;
};

// Parameter names under `prefix`: wa, wb, wc, wd ([d×d]) and ln_gain, ln_bias.
template <typename T>
void init_ssd_layer(ParamStore<T>& store, const std::string& prefix, std::size_t width,
                    Rng& rng);

// One layer's scan output Y for input H [B×K×d], with x0 = 0.
template <typename T>
Var ssd_layer_forward(Tape<T>& t, const ParamStore<T>& store, const std::string& prefix,
                      Var h, const BackboneConfig& config);

// H <- LN(Y + H) for each of config.layers layers named prefix + "l<i>.".
template <typename T>
Var ssd_backbone_forward(Tape<T>& t, const ParamStore<T>& store, const std::string& prefix,
                         Var u, const BackboneConfig& config);

template <typename T>
void init_ssd_backbone(ParamStore<T>& store, const std::string& prefix,
                       const BackboneConfig& config, Rng& rng);

}  // namespace ssdrl
