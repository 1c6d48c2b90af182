#pragma once

#include <cstddef>
#include <string>

#include "ssdrl/param_store.h"
#include "ssdrl/rng.h"
#include "ssdrl/tape.h"

// Pooling, fusion head and diagonal-Gaussian policy utilities.

namespace ssdrl {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct HeadConfig {
  std::size_t width = 128;   // token width d
  std::size_t hidden = 256;  // fusion MLP width
  std::size_t action_dim = 2;
  double init_log_std = -0.5;
};

struct HeadOutput {
  Var mean;     // [B×A]
  Var log_std;  // [A], clamped to [kLogStdMin, kLogStdMax]
  Var value;    // [B×1]
};

// Parameters: "<prefix>l1.*", "<prefix>l2.*" (fusion MLP 2d -> hidden ->
// hidden), "<prefix>mean.*", "<prefix>log_std" and "<value_prefix>*".
template <typename T>
void init_heads(ParamStore<T>& store, const std::string& prefix,
                const std::string& value_prefix, const HeadConfig& config, Rng& rng);

// y: [B×K×d] backbone output with the proprio token at index 0. The visual
// tokens 1..K-1 are mean-pooled (zeros when K = 1) and concatenated with the
// proprio output before the fusion MLP.
template <typename T>
HeadOutput pool_and_head(Tape<T>& t, const ParamStore<T>& store, const std::string& prefix,
                         const std::string& value_prefix, Var y);

// Per-row log-density of `actions` [B×A] under N(mean, exp(log_std)²) -> [B].
template <typename T>
Var gaussian_log_prob(Tape<T>& t, Var mean, Var log_std, const Tensor<T>& actions);

// Closed-form entropy sum_j (log_std_j + ½ log(2πe)) -> [1].
template <typename T>
Var gaussian_entropy(Tape<T>& t, Var log_std);

struct ActionSample {
  Tensor<double> action;  // [A]
  double log_prob = 0.0;
  double entropy = 0.0;
};

// Draws a = mean + exp(log_std) ⊙ ε with ε ~ N(0, I) for one row.
ActionSample sample_action(const double* mean, const double* log_std, std::size_t dim,
                           Rng& rng);

double gaussian_log_prob(const double* action, const double* mean, const double* log_std,
                         std::size_t dim);
double gaussian_entropy(const double* log_std, std::size_t dim);

}  // namespace ssdrl
