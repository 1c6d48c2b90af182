#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ssdrl/adam.h"
#include "ssdrl/heads.h"
#include "ssdrl/param_store.h"
#include "ssdrl/policy.h"
#include "ssdrl/rng.h"
#include "ssdrl/tape.h"

// Proximal policy optimization: advantage estimation, the clipped surrogate
// objective and the minibatch update. Everything here is independent of the
// environment; the batch forward pass is supplied by the caller.

namespace ssdrl {

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;             // ε
  double entropy_coef = 0.005;   // β_H
  double value_coef = 0.5;       // β_V
  double policy_lr = 1e-4;
  double value_lr = 1e-4;
  std::size_t samples_per_iter = 16384;
  std::size_t minibatch = 1024;
  std::size_t epochs = 3;
  double grad_clip = 0.5;        // global L2 norm bound
  std::size_t lanes = 4;         // environments stepped together
};

// Throws ConfigError naming the offending field.
void validate(const PpoConfig& config);

// Transitions stored lane by lane, so every episode occupies a contiguous
// range. A range ends either at a terminal transition (the next state has
// value 0) or at a segment end, whose successor value is `bootstrap`.
struct RolloutBuffer {
  std::size_t proprio_dim = 0;
  std::size_t depth_dim = 0;   // 0 when the model ignores depth
  std::size_t action_dim = 0;

  std::vector<float> proprio;  // size() × proprio_dim
  std::vector<float> depth;    // size() × depth_dim
  std::vector<double> actions; // size() × action_dim
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> log_probs;
  std::vector<std::uint8_t> terminal;
  std::vector<std::uint8_t> segment_end;
  std::vector<double> bootstrap;  // read only where segment_end is set

  std::size_t size() const { return rewards.size(); }
  void clear();

  // Appends one transition; observation spans must match the declared dims.
  void push(std::span<const float> proprio_obs, std::span<const float> depth_obs,
            std::span<const double> action, double reward, double value, double log_prob,
            bool is_terminal);

  // Marks the last transition as a truncated segment end.
  void close_segment(double bootstrap_value);

  // Throws ContractError when field sizes disagree or the last transition is
  // left open.
  void check() const;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantage + value
};

// Backward recursion
//   δ_t = r_t + γ V_{t+1} - V_t,  Â_t = δ_t + γλ Â_{t+1}
// restarted at terminals (V = 0) and segment ends (V = bootstrap).
GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda);

// In-place standardization to mean 0 and standard deviation 1 (guarded by
// 1e-8 for constant batches).
void normalize_advantages(std::span<double> advantages);

struct PpoLossTerms {
  Var objective;            // J = -L_clip + β_V L_V - β_H H, shape [1]
  double surrogate = 0;     // L_clip
  double value_loss = 0;    // L_V
  double entropy = 0;       // H
  double total = 0;         // J
  double clip_fraction = 0; // share of samples with |ρ - 1| > ε
  bool finite = true;       // false when a ratio or loss is not finite
};

struct PpoLossBatch {
  std::span<const double> old_log_probs;
  std::span<const double> advantages;  // already normalized
  std::span<const double> returns;
};

struct PpoCoefficients {
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.005;
};

// mean_b min(ρ_b Â_b, clip(ρ_b, 1-ε, 1+ε) Â_b) with ρ_b = exp(new_b - old_b).
// new_log_probs: [B]. Returns a [1] node.
template <typename T>
Var clipped_surrogate(Tape<T>& t, Var new_log_probs, std::span<const double> old_log_probs,
                      std::span<const double> advantages, double clip);

// Builds J for the head outputs of a batch whose sampled actions are
// `actions` [B×A]. When a ratio is non-finite the terms are flagged and no
// objective node is recorded.
template <typename T>
PpoLossTerms ppo_losses(Tape<T>& t, const HeadOutput& out, const Tensor<T>& actions,
                        const PpoLossBatch& batch, const PpoCoefficients& coef);

// Runs the network on the buffer rows in `indices`.
template <typename T>
using BatchForward = std::function<HeadOutput(Tape<T>&, const ParamStore<T>&,
                                              const RolloutBuffer&,
                                              std::span<const std::size_t>)>;

// Gathers proprio/depth rows and calls policy_forward.
template <typename T>
BatchForward<T> model_batch_forward(const ModelConfig& config);

struct UpdateStats {
  double policy_loss = 0;   // -L_clip averaged over applied minibatches
  double value_loss = 0;
  double entropy = 0;
  double clip_fraction = 0;
  double grad_norm = 0;          // mean pre-clip global norm
  double max_clipped_norm = 0;   // largest post-clip global norm
  std::size_t minibatches = 0;   // applied gradient steps
  std::size_t skipped = 0;       // minibatches rejected as non-finite
  double first_clip_fraction = 0;  // before any parameter change
};

// Parameters whose names satisfy is_value_param go to `value_opt`, the rest
// to `policy_opt`.
template <typename T>
struct PpoOptimizers {
  Adam<T> policy;
  Adam<T> value;
};

template <typename T>
PpoOptimizers<T> make_optimizers(const ParamStore<T>& store, const PpoConfig& config);

// E epochs over shuffled minibatches: forward, J, backward, global-norm
// clip, one step of each optimizer.
template <typename T>
UpdateStats ppo_update(ParamStore<T>& store, PpoOptimizers<T>& opt, const RolloutBuffer& buffer,
                       const GaeResult& gae, const PpoConfig& config,
                       const BatchForward<T>& forward, Rng& rng);

}  // namespace ssdrl
