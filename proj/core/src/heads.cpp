#include "ssdrl/heads.h"

#include <cmath>
#include <numbers>

#include "ssdrl/encoders.h"
#include "ssdrl/ops.h"

namespace ssdrl {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;  // ½ log(2π)
}  // namespace

template <typename T>
void init_heads(ParamStore<T>& store, const std::string& prefix,
                const std::string& value_prefix, const HeadConfig& config, Rng& rng) {
  init_dense(store, prefix + "l1.", 2 * config.width, config.hidden, rng);
  init_dense(store, prefix + "l2.", config.hidden, config.hidden, rng);
  // A small output gain keeps the initial policy close to zero-mean.
  init_dense(store, prefix + "mean.", config.hidden, config.action_dim, rng, 0.01);
  store.add(prefix + "log_std", Tensor<T>(Shape{config.action_dim}, T(config.init_log_std)));
  init_dense(store, value_prefix, config.hidden, 1, rng);
}

template <typename T>
HeadOutput pool_and_head(Tape<T>& t, const ParamStore<T>& store, const std::string& prefix,
                         const std::string& value_prefix, Var y) {
  const std::size_t K = t.value(y).dim(1);
  Var y_prop = ops::select_token(t, y, 0);
  Var y_vis = ops::mean_tokens(t, y, 1, K);
  Var h = ops::concat_last(t, y_prop, y_vis);
  h = ops::relu(t, ops::linear(t, h, t.param(store, prefix + "l1.w"),
                               t.param(store, prefix + "l1.b")));
  h = ops::relu(t, ops::linear(t, h, t.param(store, prefix + "l2.w"),
                               t.param(store, prefix + "l2.b")));
  HeadOutput out;
  out.mean = ops::linear(t, h, t.param(store, prefix + "mean.w"),
                         t.param(store, prefix + "mean.b"));
  out.log_std =
      ops::clamp(t, t.param(store, prefix + "log_std"), T(kLogStdMin), T(kLogStdMax));
  out.value = ops::linear(t, h, t.param(store, value_prefix + "w"),
                          t.param(store, value_prefix + "b"));
  return out;
}

template <typename T>
Var gaussian_log_prob(Tape<T>& t, Var mean, Var log_std, const Tensor<T>& actions) {
  const Tensor<T>& mv = t.value(mean);
  const Tensor<T>& sv = t.value(log_std);
  if (mv.rank() != 2 || actions.shape() != mv.shape() || sv.size() != mv.dim(1)) {
    throw DimensionError("gaussian_log_prob: mean " + shape_string(mv.shape()) + ", log_std " +
                         shape_string(sv.shape()) + ", actions " +
                         shape_string(actions.shape()));
  }
  const std::size_t B = mv.dim(0), A = mv.dim(1);
  Tensor<T> out(Shape{B});
  Tensor<T> z(mv.shape());
  for (std::size_t b = 0; b < B; ++b) {
    double lp = 0;
    for (std::size_t j = 0; j < A; ++j) {
      const double zj = (double(actions[b * A + j]) - double(mv[b * A + j])) *
                        std::exp(-double(sv[j]));
      z[b * A + j] = T(zj);
      lp += -0.5 * zj * zj - double(sv[j]) - kHalfLog2Pi;
    }
    out[b] = T(lp);
  }
  return t.record(std::move(out), {mean, log_std},
                  [mean, log_std, B, A, z = std::move(z)](Tape<T>& tp, const Tensor<T>& g) {
                    const Tensor<T>& sv = tp.value(log_std);
                    Tensor<T> gm(Shape{B, A});
                    Tensor<T> gs(Shape{A});
                    for (std::size_t b = 0; b < B; ++b) {
                      for (std::size_t j = 0; j < A; ++j) {
                        const T zj = z[b * A + j];
                        gm[b * A + j] = g[b] * zj * std::exp(-sv[j]);
                        gs[j] += g[b] * (zj * zj - T(1));
                      }
                    }
                    tp.accumulate(mean, gm);
                    tp.accumulate(log_std, gs);
                  });
}

template <typename T>
Var gaussian_entropy(Tape<T>& t, Var log_std) {
  const std::size_t A = t.value(log_std).size();
  return ops::add_scalar(t, ops::sum(t, log_std), T(double(A) * (kHalfLog2Pi + 0.5)));
}

double gaussian_log_prob(const double* action, const double* mean, const double* log_std,
                         std::size_t dim) {
  double lp = 0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double z = (action[j] - mean[j]) * std::exp(-log_std[j]);
    lp += -0.5 * z * z - log_std[j] - kHalfLog2Pi;
  }
  return lp;
}

double gaussian_entropy(const double* log_std, std::size_t dim) {
  double h = 0;
  for (std::size_t j = 0; j < dim; ++j) h += log_std[j] + kHalfLog2Pi + 0.5;
  return h;
}

ActionSample sample_action(const double* mean, const double* log_std, std::size_t dim,
                           Rng& rng) {
  ActionSample s;
  s.action = Tensor<double>(Shape{dim});
  for (std::size_t j = 0; j < dim; ++j) {
    s.action[j] = mean[j] + std::exp(log_std[j]) * rng.normal();
  }
  s.log_prob = gaussian_log_prob(s.action.ptr(), mean, log_std, dim);
  s.entropy = gaussian_entropy(log_std, dim);
  return s;
}

#define SSDRL_INSTANTIATE_HEADS(T)                                                       \
  template void init_heads<T>(ParamStore<T>&, const std::string&, const std::string&,    \
                              const HeadConfig&, Rng&);                                  \
  template HeadOutput pool_and_head<T>(Tape<T>&, const ParamStore<T>&,                   \
                                       const std::string&, const std::string&, Var);     \
  template Var gaussian_log_prob<T>(Tape<T>&, Var, Var, const Tensor<T>&);               \
  template Var gaussian_entropy<T>(Tape<T>&, Var);

SSDRL_INSTANTIATE_HEADS(float)
SSDRL_INSTANTIATE_HEADS(double)

}  // namespace ssdrl
