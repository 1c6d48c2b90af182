#pragma once

#include <cstddef>
#include <string>

#include "ssdrl/param_store.h"
#include "ssdrl/rng.h"
#include "ssdrl/tape.h"

// Tokenizers that map raw observations to width-d tokens.
//
// Proprioception: s [B×D_p] -> W_p · MLP(s) [B×d], MLP = two ReLU layers.
// Depth: F×F frames are cut into non-overlapping P×P patches; a strided
// patch convolution (P² -> d, ReLU) and a linear projection W_v produce one
// token per patch. Tokens are ordered frame-major (oldest frame first) and
// raster order within a frame; learned frame-index and patch-position
// embeddings are added.

namespace ssdrl {

struct ProprioEncoderConfig {
  std::size_t input_dim = 11;
  std::size_t hidden = 256;
  std::size_t width = 128;
};

struct DepthEncoderConfig {
  std::size_t frame_size = 32;  // F
  std::size_t patch_size = 8;   // P
  std::size_t frames = 4;
  std::size_t width = 128;

  std::size_t patches_per_frame() const {
    const std::size_t side = frame_size / patch_size;
    return side * side;
  }
  std::size_t tokens() const { return frames * patches_per_frame(); }
};

// Throws ConfigError unless P divides F and both are positive.
void validate(const DepthEncoderConfig& config);

// Dense layer parameters "<prefix>w" [in×out] and "<prefix>b" [out]; weights
// uniform in ±gain/√in, zero bias.
template <typename T>
void init_dense(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                std::size_t out, Rng& rng, double gain = 1.0, bool bias = true);

template <typename T>
void init_proprio_encoder(ParamStore<T>& store, const std::string& prefix,
                          const ProprioEncoderConfig& config, Rng& rng);

// s: [B×D_p] -> [B×d]. Throws ConfigError if D_p differs from the config.
template <typename T>
Var encode_proprio(Tape<T>& t, const ParamStore<T>& store, const std::string& prefix,
                   const ProprioEncoderConfig& config, Var s);

// frames: [B×frames×F×F] -> patches [B×(frames·N_f)×P²].
template <typename T>
Tensor<T> patchify(const Tensor<T>& frames, const DepthEncoderConfig& config);

template <typename T>
void init_depth_encoder(ParamStore<T>& store, const std::string& prefix,
                        const DepthEncoderConfig& config, Rng& rng);

// frames: [B×4×F×F] with values in [0, 1] -> tokens [B×(4·N_f)×d]. Throws
// ConfigError when the stack does not hold exactly config.frames frames of
// size F×F.
template <typename T>
Var encode_depth_stack(Tape<T>& t, const ParamStore<T>& store, const std::string& prefix,
                       const DepthEncoderConfig& config, const Tensor<T>& frames);

// [B×d] proprio token followed by [B×N×d] visual tokens -> [B×(1+N)×d]. An
// invalid `z_vis` yields the length-1 sequence.
template <typename T>
Var assemble_sequence(Tape<T>& t, Var z_prop, Var z_vis);

// Tiles a [R×d] tensor: every row repeated `inner` times consecutively, the
// whole block then repeated `outer` times -> [(outer·R·inner)×d].
template <typename T>
Var tile_rows(Tape<T>& t, Var x, std::size_t inner, std::size_t outer);

}  // namespace ssdrl
