#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "ssdrl/tape.h"

namespace ssdrl {

// Builds a scalar on the given tape, reading parameters through Tape::param.
using ScalarFunction = std::function<Var(Tape<double>&, const ParamStore<double>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  // Checks at most this many evenly spaced elements per parameter; 0 = all.
  std::size_t max_elements_per_param = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Compares tape gradients with central differences (f(x+h) - f(x-h)) / 2h.
// Throws NumericError when f is non-finite. Leaves parameter values unchanged
// and gradients zeroed.
GradCheckResult grad_check(const ScalarFunction& f, ParamStore<double>& params,
                           const GradCheckOptions& options = {});

}  // namespace ssdrl
