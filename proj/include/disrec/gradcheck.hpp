#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "disrec/common.hpp"
#include "disrec/tensor.hpp"

namespace disrec {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central-difference check of analytic gradients. `objective` evaluates the
// scalar loss at the parameters' current values; the analytic gradients must
// already be stored in each parameter's grad slot (one backward pass).
//
// Relative error per coordinate: |analytic - numeric| / max(1, |analytic|).
// When a parameter has more coordinates than `max_coords_per_param`, a
// deterministic random subset is checked.
inline GradCheckResult finite_difference_check(
    const std::function<double()>& objective, const std::vector<Parameter*>& params,
    double h = 1e-5, std::size_t max_coords_per_param = static_cast<std::size_t>(-1),
    std::uint64_t sample_seed = 0) {
  require(h > 0.0, "finite_difference_check: h must be positive");
  GradCheckResult result;
  Rng rng(sample_seed);
  for (Parameter* p : params) {
    std::vector<std::size_t> coords;
    if (p->size() <= max_coords_per_param) {
      coords.resize(p->size());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < max_coords_per_param; ++i) {
        coords.push_back(rng.below(p->size()));
      }
    }
    for (std::size_t c : coords) {
      const double saved = p->value[c];
      p->value[c] = saved + h;
      const double f_plus = objective();
      p->value[c] = saved - h;
      const double f_minus = objective();
      p->value[c] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw ContractViolation("finite_difference_check: non-finite objective");
      }
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double analytic = p->value.grad_at(c);
      const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p->name;
        result.worst_coord = c;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace disrec
