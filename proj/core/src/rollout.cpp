#include "ssdrl/rollout.h"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "ssdrl/errors.h"
#include "ssdrl/heads.h"

namespace ssdrl {

namespace {

std::size_t depth_dim(const ModelConfig& model) {
  return model.uses_vision() ? kFrameStack * model.frame_size * model.frame_size : 0;
}

void check_world(const ModelConfig& model, const WorldConfig& world) {
  if (model.uses_vision() && model.frame_size != world.depth_resolution) {
    throw ConfigError("model.frame_size (" + std::to_string(model.frame_size) +
                      ") must equal world.depth_resolution (" +
                      std::to_string(world.depth_resolution) + ")");
  }
  if (model.proprio_dim != kProprioDim || model.action_dim != kActionDim) {
    throw ConfigError("model.proprio_dim and model.action_dim must be 11 and 2 for this world");
  }
}

// What the network sees for one lane: the delayed observation with salt
// noise applied to each stacked frame.
struct LaneView {
  std::vector<float> proprio;
  std::vector<float> depth;
};

LaneView view_of(const Observation& obs, std::size_t ddim, bool noise, Rng& rng) {
  LaneView v;
  v.proprio.assign(obs.proprio.data().begin(), obs.proprio.data().end());
  if (ddim == 0) return v;
  v.depth.assign(obs.depth.data().begin(), obs.depth.data().end());
  if (noise) {
    const std::size_t frame = ddim / kFrameStack;
    for (std::size_t f = 0; f < kFrameStack; ++f) {
      inject_salt_noise(std::span<float>(v.depth.data() + f * frame, frame), rng);
    }
  }
  return v;
}

struct BatchOutput {
  Tensor<float> mean;     // [B×A]
  Tensor<float> log_std;  // [A]
  Tensor<float> value;    // [B×1]
};

BatchOutput run_policy(const ParamStore<float>& params, const ModelConfig& model,
                       const std::vector<const LaneView*>& views) {
  const std::size_t B = views.size();
  const std::size_t P = model.proprio_dim;
  Tensor<float> proprio(Shape{B, P});
  Tensor<float> depth;
  if (model.uses_vision()) {
    const std::size_t F = model.frame_size;
    depth = Tensor<float>(Shape{B, kFrameStack, F, F});
  }
  for (std::size_t b = 0; b < B; ++b) {
    std::copy(views[b]->proprio.begin(), views[b]->proprio.end(), proprio.ptr() + b * P);
    if (!depth.empty()) {
      std::copy(views[b]->depth.begin(), views[b]->depth.end(),
                depth.ptr() + b * views[b]->depth.size());
    }
  }
  Tape<float> tape(false);
  const HeadOutput out = policy_forward(tape, params, model, proprio, depth);
  return BatchOutput{tape.value(out.mean), tape.value(out.log_std), tape.value(out.value)};
}

EpisodeRecord record_of(const EnvState& s, bool fell) {
  return EpisodeRecord{s.episode_return, s.distance, s.collisions, s.step, fell};
}

}  // namespace

CollectResult collect_rollouts(const ParamStore<float>& params, const ModelConfig& model,
                               const WorldConfig& world, const CollectOptions& options,
                               RolloutRngs& rngs) {
  check_world(model, world);
  if (options.lanes == 0) throw ConfigError("ppo.lanes must be positive");
  const std::size_t L = options.lanes;
  const std::size_t A = model.action_dim;
  const std::size_t ddim = depth_dim(model);

  CollectResult result;
  auto init_buffer = [&](RolloutBuffer& b) {
    b.proprio_dim = model.proprio_dim;
    b.depth_dim = ddim;
    b.action_dim = A;
  };
  init_buffer(result.buffer);
  if (options.samples == 0) return result;
  const std::size_t steps = (options.samples + L - 1) / L;

  std::vector<Env> envs;
  std::vector<RolloutBuffer> lane_buffers(L);
  std::vector<LaneView> views(L);
  envs.reserve(L);
  for (std::size_t l = 0; l < L; ++l) {
    envs.emplace_back(world);
    init_buffer(lane_buffers[l]);
    lane_buffers[l].rewards.reserve(steps);
  }
  auto start_episode = [&](std::size_t l) {
    const Observation obs = envs[l].reset(options.density, rngs.env.fork_seed());
    views[l] = view_of(obs, ddim, options.salt_noise, rngs.noise);
  };
  for (std::size_t l = 0; l < L; ++l) start_episode(l);

  std::vector<const LaneView*> batch(L);
  for (std::size_t l = 0; l < L; ++l) batch[l] = &views[l];

  for (std::size_t step = 0; step < steps; ++step) {
    const BatchOutput out = run_policy(params, model, batch);
    std::vector<double> log_std(out.log_std.data().begin(), out.log_std.data().end());
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> mean(A);
      for (std::size_t j = 0; j < A; ++j) mean[j] = double(out.mean[l * A + j]);
      const ActionSample sample = sample_action(mean.data(), log_std.data(), A, rngs.action);
      StepResult r;
      try {
        r = envs[l].step(sample.action.data());
      } catch (const std::exception& e) {
        throw ContractError("collect_rollouts: lane " + std::to_string(l) + " step " +
                            std::to_string(step) + ": " + e.what());
      }
      const bool terminal = r.done && !r.info.truncated;
      lane_buffers[l].push(views[l].proprio, views[l].depth, sample.action.data(), r.reward,
                           double(out.value[l]), sample.log_prob, terminal);
      if (!r.done) {
        views[l] = view_of(r.observation, ddim, options.salt_noise, rngs.noise);
        continue;
      }
      if (r.info.truncated) {
        const LaneView last = view_of(r.observation, ddim, options.salt_noise, rngs.noise);
        const BatchOutput boot = run_policy(params, model, {&last});
        lane_buffers[l].close_segment(double(boot.value[0]));
      }
      result.completed.push_back(record_of(envs[l].state(), r.info.fell));
      if (step + 1 < steps) start_episode(l);
    }
  }

  // Lanes still inside an episode bootstrap from the value of their current
  // observation.
  std::vector<const LaneView*> open;
  std::vector<std::size_t> open_lanes;
  for (std::size_t l = 0; l < L; ++l) {
    if (!envs[l].state().done) {
      open.push_back(&views[l]);
      open_lanes.push_back(l);
    }
  }
  if (!open.empty()) {
    const BatchOutput boot = run_policy(params, model, open);
    for (std::size_t i = 0; i < open_lanes.size(); ++i) {
      const std::size_t l = open_lanes[i];
      lane_buffers[l].close_segment(double(boot.value[i]));
      result.partial.push_back(record_of(envs[l].state(), false));
    }
  }

  RolloutBuffer& buf = result.buffer;
  for (RolloutBuffer& lb : lane_buffers) {
    buf.proprio.insert(buf.proprio.end(), lb.proprio.begin(), lb.proprio.end());
    buf.depth.insert(buf.depth.end(), lb.depth.begin(), lb.depth.end());
    buf.actions.insert(buf.actions.end(), lb.actions.begin(), lb.actions.end());
    buf.rewards.insert(buf.rewards.end(), lb.rewards.begin(), lb.rewards.end());
    buf.values.insert(buf.values.end(), lb.values.begin(), lb.values.end());
    buf.log_probs.insert(buf.log_probs.end(), lb.log_probs.begin(), lb.log_probs.end());
    buf.terminal.insert(buf.terminal.end(), lb.terminal.begin(), lb.terminal.end());
    buf.segment_end.insert(buf.segment_end.end(), lb.segment_end.begin(), lb.segment_end.end());
    buf.bootstrap.insert(buf.bootstrap.end(), lb.bootstrap.begin(), lb.bootstrap.end());
  }
  buf.check();
  return result;
}

EvalResult evaluate_policy(const ParamStore<float>& params, const ModelConfig& model,
                           const WorldConfig& world, const EvalOptions& options) {
  check_world(model, world);
  const std::size_t A = model.action_dim;
  const std::size_t ddim = depth_dim(model);
  Rng seeds(options.seed);
  Rng noise(seeds.fork_seed());
  Rng action(options.action_seed);
  EvalResult result;
  Env env(world);
  for (std::size_t ep = 0; ep < options.episodes; ++ep) {
    Observation obs = env.reset(options.density, seeds.fork_seed());
    bool fell = false;
    while (true) {
      const LaneView view = view_of(obs, ddim, options.salt_noise, noise);
      const BatchOutput out = run_policy(params, model, {&view});
      std::vector<double> act(A);
      for (std::size_t j = 0; j < A; ++j) act[j] = double(out.mean[j]);
      if (!options.deterministic) {
        std::vector<double> log_std(out.log_std.data().begin(), out.log_std.data().end());
        const ActionSample s = sample_action(act.data(), log_std.data(), A, action);
        act.assign(s.action.data().begin(), s.action.data().end());
      }
      StepResult r = env.step(act);
      obs = std::move(r.observation);
      if (r.done) {
        fell = r.info.fell;
        break;
      }
    }
    result.episodes.push_back(record_of(env.state(), fell));
    if (fell && options.stop_on_fall) break;
  }
  result.metrics = compute_metrics(result.episodes, std::llround(options.density) > 0);
  return result;
}

}  // namespace ssdrl
