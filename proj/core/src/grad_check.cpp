#include "ssdrl/grad_check.h"

#include <algorithm>
#include <cmath>

namespace ssdrl {

namespace {

double evaluate(const ScalarFunction& f, const ParamStore<double>& params) {
  Tape<double> tape(false);
  const double v = tape.value(f(tape, params))[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, ParamStore<double>& params,
                           const GradCheckOptions& options) {
  params.zero_grad();
  {
    Tape<double> tape;
    Var root = f(tape, params);
    if (!tape.value(root).all_finite()) {
      throw NumericError("grad_check: function value is not finite");
    }
    tape.backward(root);
    tape.accumulate_into(params);
  }

  GradCheckResult result;
  const double h = options.step;
  for (auto& [name, entry] : params.entries()) {
    const std::size_t n = entry.value.size();
    std::size_t stride = 1;
    if (options.max_elements_per_param > 0 && n > options.max_elements_per_param) {
      stride = (n + options.max_elements_per_param - 1) / options.max_elements_per_param;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double original = entry.value[i];
      entry.value[i] = original + h;
      const double fp = evaluate(f, params);
      entry.value[i] = original - h;
      const double fm = evaluate(f, params);
      entry.value[i] = original;

      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = entry.grad[i];
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.checked;
      if (result.worst_param.empty() || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = name;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace ssdrl
