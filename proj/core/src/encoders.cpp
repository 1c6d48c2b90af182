#include "ssdrl/encoders.h"

#include <cmath>

#include "ssdrl/ops.h"

namespace ssdrl {

void validate(const DepthEncoderConfig& config) {
  if (config.frame_size == 0 || config.patch_size == 0 ||
      config.frame_size % config.patch_size != 0) {
    throw ConfigError("depth encoder: patch size " + std::to_string(config.patch_size) +
                      " must divide frame size " + std::to_string(config.frame_size));
  }
  if (config.frames != 4) {
    throw ConfigError("depth encoder: expected a stack of 4 frames, got " +
                      std::to_string(config.frames));
  }
}

template <typename T>
void init_dense(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                std::size_t out, Rng& rng, double gain, bool bias) {
  store.add(prefix + "w", uniform_tensor<T>(Shape{in, out}, gain / std::sqrt(double(in)), rng));
  if (bias) store.add(prefix + "b", Tensor<T>(Shape{out}));
}

template <typename T>
void init_proprio_encoder(ParamStore<T>& store, const std::string& prefix,
                          const ProprioEncoderConfig& config, Rng& rng) {
  init_dense(store, prefix + "l1.", config.input_dim, config.hidden, rng);
  init_dense(store, prefix + "l2.", config.hidden, config.hidden, rng);
  init_dense(store, prefix + "proj.", config.hidden, config.width, rng, 1.0, false);
}

template <typename T>
Var encode_proprio(Tape<T>& t, const ParamStore<T>& store, const std::string& prefix,
                   const ProprioEncoderConfig& config, Var s) {
  const Tensor<T>& sv = t.value(s);
  if (sv.rank() != 2 || sv.dim(1) != config.input_dim) {
    throw ConfigError("proprio encoder: expected [B×" + std::to_string(config.input_dim) +
                      "] input, got " + shape_string(sv.shape()));
  }
  Var h = ops::relu(t, ops::linear(t, s, t.param(store, prefix + "l1.w"),
                                   t.param(store, prefix + "l1.b")));
  h = ops::relu(t, ops::linear(t, h, t.param(store, prefix + "l2.w"),
                               t.param(store, prefix + "l2.b")));
  return ops::linear(t, h, t.param(store, prefix + "proj.w"));
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& frames, const DepthEncoderConfig& config) {
  validate(config);
  const std::size_t F = config.frame_size, P = config.patch_size;
  if (frames.rank() != 4 || frames.dim(2) != F || frames.dim(3) != F) {
    throw ConfigError("depth encoder: expected [B×4×" + std::to_string(F) + "×" +
                      std::to_string(F) + "] frames, got " + shape_string(frames.shape()));
  }
  if (frames.dim(1) != config.frames) {
    throw ConfigError("depth encoder: expected 4 stacked frames, got " +
                      std::to_string(frames.dim(1)));
  }
  const std::size_t B = frames.dim(0), side = F / P, nf = side * side;
  Tensor<T> out(Shape{B, config.frames * nf, P * P});
  T* dst = out.ptr();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t f = 0; f < config.frames; ++f) {
      const T* frame = frames.ptr() + (b * config.frames + f) * F * F;
      for (std::size_t pr = 0; pr < side; ++pr) {
        for (std::size_t pc = 0; pc < side; ++pc) {
          for (std::size_t r = 0; r < P; ++r) {
            const T* src = frame + (pr * P + r) * F + pc * P;
            for (std::size_t c = 0; c < P; ++c) *dst++ = src[c];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
void init_depth_encoder(ParamStore<T>& store, const std::string& prefix,
                        const DepthEncoderConfig& config, Rng& rng) {
  validate(config);
  const std::size_t P = config.patch_size, d = config.width;
  init_dense(store, prefix + "conv.", P * P, d, rng);
  init_dense(store, prefix + "proj.", d, d, rng, 1.0, false);
  store.add(prefix + "frame_embed", uniform_tensor<T>(Shape{config.frames, d}, 0.1, rng));
  store.add(prefix + "pos_embed",
            uniform_tensor<T>(Shape{config.patches_per_frame(), d}, 0.1, rng));
}

template <typename T>
Var encode_depth_stack(Tape<T>& t, const ParamStore<T>& store, const std::string& prefix,
                       const DepthEncoderConfig& config, const Tensor<T>& frames) {
  Var patches = t.constant(patchify(frames, config));
  Var h = ops::relu(t, ops::linear(t, patches, t.param(store, prefix + "conv.w"),
                                   t.param(store, prefix + "conv.b")));
  h = ops::linear(t, h, t.param(store, prefix + "proj.w"));
  const std::size_t nf = config.patches_per_frame();
  Var frame_embed = tile_rows(t, t.param(store, prefix + "frame_embed"), nf, 1);
  Var pos_embed = tile_rows(t, t.param(store, prefix + "pos_embed"), 1, config.frames);
  return ops::add(t, h, ops::add(t, frame_embed, pos_embed));
}

template <typename T>
Var assemble_sequence(Tape<T>& t, Var z_prop, Var z_vis) {
  const Tensor<T>& pv = t.value(z_prop);
  if (pv.rank() != 2) {
    throw DimensionError("assemble_sequence: proprio token must be [B×d], got " +
                         shape_string(pv.shape()));
  }
  Var prop = ops::reshape(t, z_prop, Shape{pv.dim(0), 1, pv.dim(1)});
  if (!z_vis.valid()) return prop;
  return ops::concat_tokens(t, prop, z_vis);
}

template <typename T>
Var tile_rows(Tape<T>& t, Var x, std::size_t inner, std::size_t outer) {
  const Tensor<T>& xv = t.value(x);
  if (xv.rank() != 2) {
    throw DimensionError("tile_rows: expected [R×d], got " + shape_string(xv.shape()));
  }
  const std::size_t R = xv.dim(0), d = xv.dim(1);
  Tensor<T> y(Shape{outer * R * inner, d});
  T* dst = y.ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t i = 0; i < inner; ++i) {
        std::copy_n(xv.ptr() + r * d, d, dst);
        dst += d;
      }
    }
  }
  return t.record(std::move(y), {x}, [x, R, d, inner, outer](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gx(Shape{R, d});
    const T* src = g.ptr();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t i = 0; i < inner; ++i) {
          for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += src[j];
          src += d;
        }
      }
    }
    tp.accumulate(x, gx);
  });
}

#define SSDRL_INSTANTIATE_ENCODERS(T)                                                     \
  template void init_dense<T>(ParamStore<T>&, const std::string&, std::size_t,            \
                              std::size_t, Rng&, double, bool);                           \
  template void init_proprio_encoder<T>(ParamStore<T>&, const std::string&,               \
                                        const ProprioEncoderConfig&, Rng&);               \
  template Var encode_proprio<T>(Tape<T>&, const ParamStore<T>&, const std::string&,      \
                                 const ProprioEncoderConfig&, Var);                       \
  template Tensor<T> patchify<T>(const Tensor<T>&, const DepthEncoderConfig&);            \
  template void init_depth_encoder<T>(ParamStore<T>&, const std::string&,                 \
                                      const DepthEncoderConfig&, Rng&);                   \
  template Var encode_depth_stack<T>(Tape<T>&, const ParamStore<T>&, const std::string&,  \
                                     const DepthEncoderConfig&, const Tensor<T>&);        \
  template Var assemble_sequence<T>(Tape<T>&, Var, Var);                                  \
  template Var tile_rows<T>(Tape<T>&, Var, std::size_t, std::size_t);

SSDRL_INSTANTIATE_ENCODERS(float)
SSDRL_INSTANTIATE_ENCODERS(double)

}  // namespace ssdrl
