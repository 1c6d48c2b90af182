#include "ssdrl/trainer.h"

#include <cmath>
#include <fstream>

#include "ssdrl/errors.h"

namespace ssdrl {

namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ParamStore<float> init_params(const ModelConfig& model, Rng& rng) {
  ParamStore<float> store;
  init_policy(store, model, rng);
  return store;
}

// Deterministic derivation of the per-purpose streams from one seed.
struct SeedStreams {
  Rng init, env, action, noise, shuffle;
  explicit SeedStreams(std::uint64_t seed) {
    Rng master(seed);
    init = Rng(master.fork_seed());
    env = Rng(master.fork_seed());
    action = Rng(master.fork_seed());
    noise = Rng(master.fork_seed());
    shuffle = Rng(master.fork_seed());
  }
};

}  // namespace

Trainer::Trainer(RunConfig config, std::uint64_t seed, fs::path dir)
    : config_(std::move(config)), seed_(seed), dir_(std::move(dir)) {
  validate(config_);
  SeedStreams streams(seed);
  params_ = init_params(config_.model, streams.init);
  opt_ = make_optimizers(params_, config_.ppo);
  forward_ = model_batch_forward<float>(config_.model);
  rollout_rngs_ = RolloutRngs{streams.env, streams.action, streams.noise};
  shuffle_rng_ = streams.shuffle;
  started_ = std::chrono::steady_clock::now();
}

void Trainer::start() {
  fs::create_directories(dir_);
  start_csv(dir_ / "metrics.csv", kMetricsHeader);
  start_csv(dir_ / "eval.csv", kEvalHeader);
  start_csv(dir_ / "timing.csv", kTimingHeader);
  iteration_ = 0;
}

void Trainer::resume(const fs::path& checkpoint_path) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  restore_params(ck, params_);
  opt_.policy.set_steps(find_counter(ck, "adam.policy.steps"));
  opt_.value.set_steps(find_counter(ck, "adam.value.steps"));
  restore_rng(ck, "env", rollout_rngs_.env);
  restore_rng(ck, "action", rollout_rngs_.action);
  restore_rng(ck, "noise", rollout_rngs_.noise);
  restore_rng(ck, "shuffle", shuffle_rng_);
  iteration_ = std::size_t(ck.iteration);
  fs::create_directories(dir_);
  keep_rows_through(dir_ / "metrics.csv", kMetricsHeader, iteration_);
  keep_rows_through(dir_ / "eval.csv", kEvalHeader, iteration_);
  keep_rows_through(dir_ / "timing.csv", kTimingHeader, iteration_);
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config_digest = config_digest(config_);
  ck.iteration = iteration_;
  store_params(ck, params_);
  store_counter(ck, "adam.policy.steps", opt_.policy.steps());
  store_counter(ck, "adam.value.steps", opt_.value.steps());
  store_rng(ck, "env", rollout_rngs_.env);
  store_rng(ck, "action", rollout_rngs_.action);
  store_rng(ck, "noise", rollout_rngs_.noise);
  store_rng(ck, "shuffle", shuffle_rng_);
  return ck;
}

void Trainer::save() const { save_checkpoint(dir_ / "checkpoint.ssdm", checkpoint()); }

IterationReport Trainer::step() {
  if (finished()) throw ContractError("Trainer::step: all iterations are done");
  IterationReport rep;
  rep.density = curriculum_density(iteration_, config_.curriculum);

  auto t0 = std::chrono::steady_clock::now();
  CollectOptions co;
  co.samples = config_.ppo.samples_per_iter;
  co.lanes = config_.ppo.lanes;
  co.density = rep.density;
  co.salt_noise = config_.run.salt_noise;
  CollectResult data;
  try {
    data = collect_rollouts(params_, config_.model, config_.world, co, rollout_rngs_);
  } catch (const std::exception& e) {
    throw ContractError("iteration " + std::to_string(iteration_ + 1) + ": " + e.what());
  }
  rep.collect_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const GaeResult gae = compute_gae(data.buffer, config_.ppo.gamma, config_.ppo.lambda);
  rep.update = ppo_update(params_, opt_, data.buffer, gae, config_.ppo, forward_, shuffle_rng_);
  rep.update_s = seconds_since(t0);
  ++iteration_;

  // Training-episode statistics: completed episodes when there are any,
  // otherwise the partial ones.
  const auto& episodes = data.completed.empty() ? data.partial : data.completed;
  const EvalMetrics train = compute_metrics(episodes, std::llround(rep.density) > 0);
  MetricsRow& m = rep.metrics;
  m.iteration = iteration_;
  m.seed = seed_;
  m.mean_return = train.mean_return;
  m.distance_m = train.distance_m;
  if (train.collisions) m.collisions = *train.collisions / double(train.episodes);
  m.policy_loss = rep.update.policy_loss;
  m.value_loss = rep.update.value_loss;
  m.entropy = rep.update.entropy;
  m.clip_frac = rep.update.clip_fraction;
  m.wall_s = config_.run.log_wall_time ? seconds_since(started_) : 0.0;
  append_csv(dir_ / "metrics.csv", format_row(m));

  const bool eval_now = finished() || (config_.run.eval_every > 0 &&
                                       iteration_ % config_.run.eval_every == 0);
  if (eval_now) {
    t0 = std::chrono::steady_clock::now();
    rep.eval = evaluate_run_policy(params_, config_, seed_);
    rep.eval_s = seconds_since(t0);
    EvalRow row{iteration_, seed_, config_.world.obstacle_kind, config_.world.terrain,
                config_.curriculum.target, rep.eval->metrics};
    append_csv(dir_ / "eval.csv", format_row(row));
  }
  append_csv(dir_ / "timing.csv", std::to_string(iteration_) + "," +
                                      format_double(rep.collect_s) + "," +
                                      format_double(rep.update_s) + "," +
                                      format_double(rep.eval_s));
  return rep;
}

void Trainer::run(const LogFn& log) {
  while (!finished()) {
    const IterationReport rep = step();
    if (log) {
      log("seed " + std::to_string(seed_) + " iteration " + std::to_string(iteration_) + "/" +
          std::to_string(config_.run.iterations) + " density " + format_double(rep.density) +
          " return " + format_double(rep.metrics.mean_return) + " distance " +
          format_double(rep.metrics.distance_m) + " entropy " +
          format_double(rep.metrics.entropy) +
          (rep.eval ? " eval_return " + format_double(rep.eval->metrics.mean_return) : ""));
    }
    const std::size_t every = config_.run.checkpoint_every;
    if (finished() || (every > 0 && iteration_ % every == 0)) save();
  }
}

EvalResult evaluate_run_policy(const ParamStore<float>& params, const RunConfig& config,
                               std::uint64_t action_seed) {
  EvalOptions o;
  o.episodes = config.run.eval_episodes;
  o.density = config.curriculum.target;
  o.deterministic = config.run.eval_deterministic;
  o.salt_noise = config.run.salt_noise;
  o.seed = config.run.eval_seed;
  o.action_seed = action_seed;
  return evaluate_policy(params, config.model, config.world, o);
}

void train_run(const RunConfig& config, const fs::path& run_dir, bool resume, const LogFn& log) {
  validate(config);
  fs::create_directories(run_dir);
  {
    std::ofstream out(run_dir / "resolved.cfg", std::ios::binary | std::ios::trunc);
    if (!out) throw ContractError("cannot write resolved.cfg in '" + run_dir.string() + "'");
    out << serialize_config(config);
  }
  for (std::uint64_t seed : config.run.seeds) {
    Trainer trainer(config, seed, seed_dir(run_dir, seed));
    const fs::path ck = trainer.dir() / "checkpoint.ssdm";
    if (resume && fs::exists(ck)) {
      trainer.resume(ck);
    } else {
      trainer.start();
    }
    trainer.run(log);
  }
  write_aggregate(run_dir);
}

}  // namespace ssdrl
