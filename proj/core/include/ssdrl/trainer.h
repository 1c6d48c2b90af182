#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "ssdrl/checkpoint.h"
#include "ssdrl/config.h"
#include "ssdrl/metrics_io.h"
#include "ssdrl/ppo.h"
#include "ssdrl/rollout.h"

// The training loop for one seed: curriculum density, rollout collection,
// advantage estimation, PPO update, periodic evaluation, CSV rows and
// checkpoints. All randomness flows from the seed through separate streams
// that are persisted in checkpoints, so a resumed run continues exactly.

namespace ssdrl {

using LogFn = std::function<void(const std::string&)>;

struct IterationReport {
  MetricsRow metrics;
  UpdateStats update;
  std::optional<EvalResult> eval;
  double density = 0;
  double collect_s = 0, update_s = 0, eval_s = 0;
};

class Trainer {
 public:
  // Initializes parameters from `seed`. Nothing is written until start() or
  // resume().
  Trainer(RunConfig config, std::uint64_t seed, std::filesystem::path dir);

  // Creates the seed directory with fresh CSV files.
  void start();

  // Restores parameters, optimizer and RNG state from a checkpoint and trims
  // the CSV files to the checkpoint's iteration.
  void resume(const std::filesystem::path& checkpoint_path);

  bool finished() const { return iteration_ >= config_.run.iterations; }
  std::size_t iteration() const { return iteration_; }

  IterationReport step();

  // Steps until finished; checkpoints at the configured cadence and at the end.
  void run(const LogFn& log = {});

  Checkpoint checkpoint() const;
  void save() const;

  const ParamStore<float>& params() const { return params_; }
  const RunConfig& config() const { return config_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  RunConfig config_;
  std::uint64_t seed_;
  std::filesystem::path dir_;
  ParamStore<float> params_;
  PpoOptimizers<float> opt_;
  BatchForward<float> forward_;
  RolloutRngs rollout_rngs_;
  Rng shuffle_rng_;
  std::size_t iteration_ = 0;
  std::chrono::steady_clock::time_point started_;
};

// Evaluation at the curriculum's target density with the run's protocol
// settings. `action_seed` only matters for stochastic evaluation.
EvalResult evaluate_run_policy(const ParamStore<float>& params, const RunConfig& config,
                               std::uint64_t action_seed = 0);

// Writes resolved.cfg, trains every seed of config.run.seeds (resuming from
// existing checkpoints when `resume` is set) and writes aggregate.csv.
void train_run(const RunConfig& config, const std::filesystem::path& run_dir, bool resume = false,
               const LogFn& log = {});

}  // namespace ssdrl
