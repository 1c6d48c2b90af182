#pragma once

#include <cstddef>
#include <string>

#include "ssdrl/encoders.h"
#include "ssdrl/heads.h"
#include "ssdrl/ssd.h"

// Actor-critic network: tokenizers, fusion backbone and heads sharing one
// ParamStore. The ablations differ only in which tokens enter the sequence
// and which fusion backbone processes it:
//
//   ssd           proprio token + depth tokens, selective state-space stack
//   attention     proprio token + depth tokens, self-attention stack
//   proprio_only  proprio token alone, state-space stack
//   vision_only   learned constant token + depth tokens, state-space stack

namespace ssdrl {

enum class BackboneKind { kSsd, kAttention, kProprioOnly, kVisionOnly };

const char* to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(const std::string& s);

struct ModelConfig {
  BackboneKind backbone = BackboneKind::kSsd;
  std::size_t width = 128;
  std::size_t layers = 2;
  std::size_t proprio_dim = 11;
  std::size_t proprio_hidden = 256;
  std::size_t head_hidden = 256;
  std::size_t action_dim = 2;
  std::size_t frame_size = 32;
  std::size_t patch_size = 8;
  ScanMode scan_mode = ScanMode::kChunked;
  std::size_t chunk_size = 64;
  double init_log_std = -0.5;

  bool uses_vision() const { return backbone != BackboneKind::kProprioOnly; }
  bool uses_proprio() const { return backbone != BackboneKind::kVisionOnly; }

  ProprioEncoderConfig proprio_encoder() const;
  DepthEncoderConfig depth_encoder() const;
  BackboneConfig backbone_config() const;
  HeadConfig head() const;
  // 1 + number of visual tokens.
  std::size_t sequence_length() const;
};

// True for parameters trained by the value optimizer.
bool is_value_param(const std::string& name);

template <typename T>
void init_policy(ParamStore<T>& store, const ModelConfig& config, Rng& rng);

// proprio: [B×D_p]; depth: [B×4×F×F] (ignored, and may be empty, in
// proprio-only mode).
template <typename T>
HeadOutput policy_forward(Tape<T>& t, const ParamStore<T>& store, const ModelConfig& config,
                          const Tensor<T>& proprio, const Tensor<T>& depth);

}  // namespace ssdrl
