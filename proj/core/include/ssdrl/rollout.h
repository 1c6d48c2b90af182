#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ssdrl/env.h"
#include "ssdrl/policy.h"
#include "ssdrl/ppo.h"
#include "ssdrl/rng.h"

// Policy/environment interaction: on-policy data collection for training and
// the evaluation protocol.

namespace ssdrl {

// Independent random streams consumed during collection.
struct RolloutRngs {
  Rng env;     // episode seeds (layout and physics draw)
  Rng action;  // Gaussian action sampling
  Rng noise;   // salt noise on depth frames
};

struct CollectOptions {
  std::size_t samples = 0;   // transitions to collect (rounded up to whole lane steps)
  std::size_t lanes = 4;     // environments stepped in lockstep
  double density = 0;        // obstacles per arena for every episode started
  bool salt_noise = true;
};

struct CollectResult {
  RolloutBuffer buffer;
  std::vector<EpisodeRecord> completed;  // episodes that ended inside the window
  std::vector<EpisodeRecord> partial;    // episodes cut off by the sample budget
};

// Every lane starts a fresh episode (fresh physics draw, current density) at
// the beginning of the call and after each episode end. Parameters are only
// read. Depth frames are corrupted with salt noise before the network sees
// them and the corrupted frames are what the buffer stores.
CollectResult collect_rollouts(const ParamStore<float>& params, const ModelConfig& model,
                               const WorldConfig& world, const CollectOptions& options,
                               RolloutRngs& rngs);

struct EvalOptions {
  std::size_t episodes = 3;
  double density = 0;
  bool deterministic = true;  // act with the Gaussian mean
  bool salt_noise = true;
  bool stop_on_fall = true;   // end the protocol after an episode that falls
  std::uint64_t seed = 0;         // episode layouts, physics draws and salt noise
  std::uint64_t action_seed = 0;  // action sampling when not deterministic
};

struct EvalResult {
  EvalMetrics metrics;
  std::vector<EpisodeRecord> episodes;
};

// Runs up to `episodes` episodes, stopping early after a fall when
// stop_on_fall is set, and summarizes them with compute_metrics.
EvalResult evaluate_policy(const ParamStore<float>& params, const ModelConfig& model,
                           const WorldConfig& world, const EvalOptions& options);

}  // namespace ssdrl
