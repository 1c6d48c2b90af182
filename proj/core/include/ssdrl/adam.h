#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssdrl/param_store.h"

namespace ssdrl {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a subset of a ParamStore (all entries when the
// name list is empty). One step counter is shared by every owned entry.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}, std::vector<std::string> names = {})
      : config_(config), names_(std::move(names)) {}

  // Applies one update and zeroes the owned gradients. If any owned gradient
  // is non-finite nothing is updated, the gradients are still cleared and
  // false is returned.
  bool step(ParamStore<T>& store);

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  const std::vector<std::string>& names() const { return names_; }

  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t steps) { steps_ = steps; }

 private:
  template <typename F>
  void for_each_owned(ParamStore<T>& store, F&& f);

  AdamConfig config_;
  std::vector<std::string> names_;
  std::int64_t steps_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace ssdrl
