#include "ssdrl/ppo.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ssdrl/env.h"
#include "ssdrl/errors.h"
#include "ssdrl/ops.h"

namespace ssdrl {

void validate(const PpoConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("ppo." + key + ": " + why);
  };
  if (!(c.gamma > 0 && c.gamma < 1)) fail("gamma", "must lie in (0, 1)");
  if (!(c.lambda >= 0 && c.lambda <= 1)) fail("lambda", "must lie in [0, 1]");
  if (!(c.clip > 0)) fail("clip", "must be positive");
  if (!(c.entropy_coef >= 0)) fail("entropy_coef", "must be non-negative");
  if (!(c.value_coef >= 0)) fail("value_coef", "must be non-negative");
  if (!(c.policy_lr >= 0)) fail("policy_lr", "must be non-negative");
  if (!(c.value_lr >= 0)) fail("value_lr", "must be non-negative");
  if (!(c.grad_clip > 0)) fail("grad_clip", "must be positive");
  if (c.lanes == 0) fail("lanes", "must be positive");
  if (c.minibatch == 0) fail("minibatch", "must be positive");
  if (c.samples_per_iter % c.lanes != 0) {
    fail("samples_per_iter", "must be a multiple of ppo.lanes (" + std::to_string(c.lanes) + ")");
  }
  if (c.samples_per_iter % c.minibatch != 0) {
    fail("minibatch", "must divide ppo.samples_per_iter (" +
                          std::to_string(c.samples_per_iter) + ")");
  }
}

void RolloutBuffer::clear() {
  proprio.clear();
  depth.clear();
  actions.clear();
  rewards.clear();
  values.clear();
  log_probs.clear();
  terminal.clear();
  segment_end.clear();
  bootstrap.clear();
}

void RolloutBuffer::push(std::span<const float> proprio_obs, std::span<const float> depth_obs,
                         std::span<const double> action, double reward, double value,
                         double log_prob, bool is_terminal) {
  if (proprio_obs.size() != proprio_dim || depth_obs.size() != depth_dim ||
      action.size() != action_dim) {
    throw DimensionError("RolloutBuffer::push: observation or action size mismatch");
  }
  proprio.insert(proprio.end(), proprio_obs.begin(), proprio_obs.end());
  depth.insert(depth.end(), depth_obs.begin(), depth_obs.end());
  actions.insert(actions.end(), action.begin(), action.end());
  rewards.push_back(reward);
  values.push_back(value);
  log_probs.push_back(log_prob);
  terminal.push_back(is_terminal ? 1 : 0);
  segment_end.push_back(0);
  bootstrap.push_back(0.0);
}

void RolloutBuffer::close_segment(double bootstrap_value) {
  if (rewards.empty()) throw ContractError("RolloutBuffer::close_segment on empty buffer");
  if (terminal.back()) return;
  segment_end.back() = 1;
  bootstrap.back() = bootstrap_value;
}

void RolloutBuffer::check() const {
  const std::size_t n = size();
  if (values.size() != n || log_probs.size() != n || terminal.size() != n ||
      segment_end.size() != n || bootstrap.size() != n || proprio.size() != n * proprio_dim ||
      depth.size() != n * depth_dim || actions.size() != n * action_dim) {
    throw ContractError("RolloutBuffer: field sizes disagree");
  }
  if (n > 0 && !terminal.back() && !segment_end.back()) {
    throw ContractError("RolloutBuffer: last transition neither terminal nor closed");
  }
}

GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda) {
  buffer.check();
  const std::size_t n = buffer.size();
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    double next_value;
    if (buffer.terminal[k]) {
      next_value = 0.0;
      next_adv = 0.0;
    } else if (buffer.segment_end[k]) {
      next_value = buffer.bootstrap[k];
      next_adv = 0.0;
    } else {
      next_value = buffer.values[k + 1];
    }
    const double delta = buffer.rewards[k] + gamma * next_value - buffer.values[k];
    next_adv = delta + gamma * lambda * next_adv;
    out.advantages[k] = next_adv;
    out.returns[k] = next_adv + buffer.values[k];
  }
  return out;
}

void normalize_advantages(std::span<double> adv) {
  if (adv.empty()) return;
  const double n = double(adv.size());
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double inv = 1.0 / (std::sqrt(var / n) + 1e-8);
  for (double& a : adv) a = (a - mean) * inv;
}

template <typename T>
Var clipped_surrogate(Tape<T>& t, Var new_log_probs, std::span<const double> old_log_probs,
                      std::span<const double> advantages, double clip) {
  const Tensor<T>& lp = t.value(new_log_probs);
  const std::size_t B = lp.size();
  if (old_log_probs.size() != B || advantages.size() != B) {
    throw DimensionError("clipped_surrogate: batch of " + std::to_string(B) +
                         " log-probs with " + std::to_string(old_log_probs.size()) +
                         " old log-probs and " + std::to_string(advantages.size()) +
                         " advantages");
  }
  // Gradient weight per sample: ρÂ where the unclipped branch is the minimum,
  // zero where the clipped (constant) branch is.
  Tensor<T> weight(Shape{B});
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double rho = std::exp(double(lp[b]) - old_log_probs[b]);
    const double a = advantages[b];
    const double unclipped = rho * a;
    const double clipped = std::clamp(rho, 1.0 - clip, 1.0 + clip) * a;
    if (unclipped <= clipped) {
      total += unclipped;
      weight[b] = T(unclipped / double(B));
    } else {
      total += clipped;
    }
  }
  return t.record(Tensor<T>::scalar(T(total / double(B))), {new_log_probs},
                  [new_log_probs, weight = std::move(weight)](Tape<T>& tp, const Tensor<T>& g) {
                    Tensor<T> gl(weight.shape());
                    for (std::size_t b = 0; b < gl.size(); ++b) gl[b] = g[0] * weight[b];
                    tp.accumulate(new_log_probs, gl);
                  });
}

template <typename T>
PpoLossTerms ppo_losses(Tape<T>& t, const HeadOutput& out, const Tensor<T>& actions,
                        const PpoLossBatch& batch, const PpoCoefficients& coef) {
  PpoLossTerms terms;
  Var log_probs = gaussian_log_prob(t, out.mean, out.log_std, actions);
  const Tensor<T>& lp = t.value(log_probs);
  const std::size_t B = lp.size();
  if (batch.returns.size() != B) {
    throw DimensionError("ppo_losses: returns size does not match the batch");
  }
  std::size_t clipped = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const double rho = std::exp(double(lp[b]) - batch.old_log_probs[b]);
    if (!std::isfinite(rho)) {
      terms.finite = false;
      return terms;
    }
    if (std::abs(rho - 1.0) > coef.clip) ++clipped;
  }
  terms.clip_fraction = double(clipped) / double(B);

  Var surrogate = clipped_surrogate(t, log_probs, batch.old_log_probs, batch.advantages, coef.clip);
  Tensor<T> ret(Shape{B, 1});
  for (std::size_t b = 0; b < B; ++b) ret[b] = T(batch.returns[b]);
  Var value_loss = ops::scale(
      t, ops::mean(t, ops::square(t, ops::sub(t, out.value, t.constant(std::move(ret))))), T(0.5));
  Var entropy = gaussian_entropy(t, out.log_std);
  Var objective = ops::add(
      t, ops::sub(t, ops::scale(t, value_loss, T(coef.value_coef)), surrogate),
      ops::scale(t, entropy, T(-coef.entropy_coef)));

  terms.objective = objective;
  terms.surrogate = double(t.value(surrogate)[0]);
  terms.value_loss = double(t.value(value_loss)[0]);
  terms.entropy = double(t.value(entropy)[0]);
  terms.total = double(t.value(objective)[0]);
  terms.finite = std::isfinite(terms.total);
  return terms;
}

template <typename T>
BatchForward<T> model_batch_forward(const ModelConfig& config) {
  return [config](Tape<T>& t, const ParamStore<T>& store, const RolloutBuffer& buf,
                  std::span<const std::size_t> idx) {
    const std::size_t B = idx.size();
    const std::size_t P = buf.proprio_dim;
    Tensor<T> proprio(Shape{B, P});
    for (std::size_t r = 0; r < B; ++r) {
      const float* src = buf.proprio.data() + idx[r] * P;
      std::copy(src, src + P, proprio.ptr() + r * P);
    }
    Tensor<T> depth;
    if (config.uses_vision()) {
      const std::size_t F = config.frame_size;
      const std::size_t D = buf.depth_dim;
      if (D != kFrameStack * F * F) {
        throw DimensionError("model_batch_forward: buffer depth size " + std::to_string(D) +
                             " does not match a 4×" + std::to_string(F) + "×" +
                             std::to_string(F) + " stack");
      }
      depth = Tensor<T>(Shape{B, kFrameStack, F, F});
      for (std::size_t r = 0; r < B; ++r) {
        const float* src = buf.depth.data() + idx[r] * D;
        std::copy(src, src + D, depth.ptr() + r * D);
      }
    }
    return policy_forward(t, store, config, proprio, depth);
  };
}

template <typename T>
PpoOptimizers<T> make_optimizers(const ParamStore<T>& store, const PpoConfig& config) {
  std::vector<std::string> policy_names, value_names;
  for (const auto& name : store.names()) {
    (is_value_param(name) ? value_names : policy_names).push_back(name);
  }
  AdamConfig pc;
  pc.lr = config.policy_lr;
  AdamConfig vc;
  vc.lr = config.value_lr;
  // Adam treats an empty name list as "every entry", so ppo_update never
  // steps an optimizer whose group is empty.
  return PpoOptimizers<T>{Adam<T>(pc, std::move(policy_names)), Adam<T>(vc, std::move(value_names))};
}

template <typename T>
UpdateStats ppo_update(ParamStore<T>& store, PpoOptimizers<T>& opt, const RolloutBuffer& buffer,
                       const GaeResult& gae, const PpoConfig& config,
                       const BatchForward<T>& forward, Rng& rng) {
  buffer.check();
  const std::size_t n = buffer.size();
  UpdateStats stats;
  if (n == 0) return stats;
  const std::size_t mb = std::min(config.minibatch, n);
  const std::size_t A = buffer.action_dim;
  const PpoCoefficients coef{config.clip, config.value_coef, config.entropy_coef};
  std::vector<std::size_t> order(n);
  std::vector<double> old_lp(mb), adv(mb), ret(mb);
  bool first = true;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = std::size_t(rng.uniform_int(0, std::int64_t(i - 1)));
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t start = 0; start + mb <= n; start += mb) {
      std::span<const std::size_t> idx(order.data() + start, mb);
      Tensor<T> actions(Shape{mb, A});
      for (std::size_t r = 0; r < mb; ++r) {
        const std::size_t k = idx[r];
        old_lp[r] = buffer.log_probs[k];
        adv[r] = gae.advantages[k];
        ret[r] = gae.returns[k];
        for (std::size_t j = 0; j < A; ++j) actions[r * A + j] = T(buffer.actions[k * A + j]);
      }
      normalize_advantages(adv);

      store.zero_grad();
      Tape<T> tape;
      const HeadOutput out = forward(tape, store, buffer, idx);
      const PpoLossTerms terms =
          ppo_losses(tape, out, actions, PpoLossBatch{old_lp, adv, ret}, coef);
      if (first) {
        stats.first_clip_fraction = terms.clip_fraction;
        first = false;
      }
      if (!terms.finite) {
        ++stats.skipped;
        continue;
      }
      tape.backward(terms.objective);
      tape.accumulate_into(store);
      const double norm = store.grad_norm();
      if (!std::isfinite(norm)) {
        store.zero_grad();
        ++stats.skipped;
        continue;
      }
      store.clip_grad_norm(config.grad_clip);
      stats.max_clipped_norm = std::max(stats.max_clipped_norm, store.grad_norm());
      if (!opt.policy.names().empty()) opt.policy.step(store);
      if (!opt.value.names().empty()) opt.value.step(store);

      ++stats.minibatches;
      stats.policy_loss += -terms.surrogate;
      stats.value_loss += terms.value_loss;
      stats.entropy += terms.entropy;
      stats.clip_fraction += terms.clip_fraction;
      stats.grad_norm += norm;
    }
  }
  if (stats.minibatches > 0) {
    const double k = double(stats.minibatches);
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    stats.grad_norm /= k;
  }
  return stats;
}

#define SSDRL_INSTANTIATE_PPO(T)                                                           \
  template Var clipped_surrogate<T>(Tape<T>&, Var, std::span<const double>,                \
                                    std::span<const double>, double);                      \
  template PpoLossTerms ppo_losses<T>(Tape<T>&, const HeadOutput&, const Tensor<T>&,       \
                                      const PpoLossBatch&, const PpoCoefficients&);        \
  template BatchForward<T> model_batch_forward<T>(const ModelConfig&);                     \
  template PpoOptimizers<T> make_optimizers<T>(const ParamStore<T>&, const PpoConfig&);    \
  template UpdateStats ppo_update<T>(ParamStore<T>&, PpoOptimizers<T>&, const RolloutBuffer&, \
                                     const GaeResult&, const PpoConfig&,                   \
                                     const BatchForward<T>&, Rng&);

SSDRL_INSTANTIATE_PPO(float)
SSDRL_INSTANTIATE_PPO(double)

}  // namespace ssdrl
