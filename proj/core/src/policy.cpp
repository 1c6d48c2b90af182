#include "ssdrl/policy.h"

#include "ssdrl/attention.h"
#include "ssdrl/ops.h"

namespace ssdrl {

const char* to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::kSsd:
      return "ssd";
    case BackboneKind::kAttention:
      return "attention";
    case BackboneKind::kProprioOnly:
      return "proprio_only";
    case BackboneKind::kVisionOnly:
      return "vision_only";
  }
  return "?";
}

BackboneKind parse_backbone_kind(const std::string& s) {
  for (BackboneKind k : {BackboneKind::kSsd, BackboneKind::kAttention,
                         BackboneKind::kProprioOnly, BackboneKind::kVisionOnly}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown backbone '" + s +
                    "' (expected ssd|attention|proprio_only|vision_only)");
}

ProprioEncoderConfig ModelConfig::proprio_encoder() const {
  return ProprioEncoderConfig{proprio_dim, proprio_hidden, width};
}

DepthEncoderConfig ModelConfig::depth_encoder() const {
  return DepthEncoderConfig{frame_size, patch_size, 4, width};
}

BackboneConfig ModelConfig::backbone_config() const {
  return BackboneConfig{width, layers, scan_mode, chunk_size};
}

HeadConfig ModelConfig::head() const {
  return HeadConfig{width, head_hidden, action_dim, init_log_std};
}

std::size_t ModelConfig::sequence_length() const {
  return 1 + (uses_vision() ? depth_encoder().tokens() : 0);
}

bool is_value_param(const std::string& name) { return name.rfind("value.", 0) == 0; }

template <typename T>
void init_policy(ParamStore<T>& store, const ModelConfig& config, Rng& rng) {
  if (config.width < 2) throw ConfigError("model.width must be >= 2");
  if (config.uses_proprio()) {
    init_proprio_encoder(store, "proprio.", config.proprio_encoder(), rng);
  } else {
    store.add("vision_only.token", uniform_tensor<T>(Shape{1, config.width}, 0.1, rng));
  }
  if (config.uses_vision()) init_depth_encoder(store, "vision.", config.depth_encoder(), rng);
  if (config.backbone == BackboneKind::kAttention) {
    init_attention_backbone(store, "backbone.", config.width, config.layers, rng);
  } else {
    init_ssd_backbone(store, "backbone.", config.backbone_config(), rng);
  }
  init_heads(store, "head.", "value.", config.head(), rng);
}

template <typename T>
HeadOutput policy_forward(Tape<T>& t, const ParamStore<T>& store, const ModelConfig& config,
                          const Tensor<T>& proprio, const Tensor<T>& depth) {
  const std::size_t B = proprio.dim(0);
  Var z_prop;
  if (config.uses_proprio()) {
    z_prop = encode_proprio(t, store, "proprio.", config.proprio_encoder(), t.constant(proprio));
  } else {
    z_prop = ops::reshape(t, ops::repeat_batch(t, t.param(store, "vision_only.token"), B),
                          Shape{B, config.width});
  }
  Var z_vis;
  if (config.uses_vision()) {
    if (depth.empty() || depth.dim(0) != B) {
      throw DimensionError("policy_forward: depth batch does not match proprio batch");
    }
    z_vis = encode_depth_stack(t, store, "vision.", config.depth_encoder(), depth);
  }
  Var u = assemble_sequence(t, z_prop, z_vis);
  Var y = config.backbone == BackboneKind::kAttention
              ? attention_backbone_forward(t, store, "backbone.", u, config.layers)
              : ssd_backbone_forward(t, store, "backbone.", u, config.backbone_config());
  return pool_and_head(t, store, "head.", "value.", y);
}

template void init_policy<float>(ParamStore<float>&, const ModelConfig&, Rng&);
template void init_policy<double>(ParamStore<double>&, const ModelConfig&, Rng&);
template HeadOutput policy_forward<float>(Tape<float>&, const ParamStore<float>&,
                                          const ModelConfig&, const Tensor<float>&,
                                          const Tensor<float>&);
template HeadOutput policy_forward<double>(Tape<double>&, const ParamStore<double>&,
                                           const ModelConfig&, const Tensor<double>&,
                                           const Tensor<double>&);

}  // namespace ssdrl
