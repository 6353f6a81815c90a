#pragma once

#include <functional>
#include <span>
#include <string>

#include "timnet/autodiff.hpp"

namespace timnet::diff {

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  std::size_t n_coords = 0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  std::vector<std::pair<std::string, double>> per_param;  // (name, max rel err)
};

/// Compare analytic gradients against central differences
/// (f(t+eps*e) - f(t-eps*e)) / (2*eps), coordinate by coordinate, with
/// relative error denominator max(|analytic|, |numeric|, 1e-8).
///
/// `build_loss` must rebuild the scalar loss from the current parameter
/// values and be deterministic: dropout seed-frozen, batch-norm running-stat
/// updates disabled. Two baseline evaluations that disagree are an error.
FiniteDiffReport finite_diff_check(const std::function<DiffValue()>& build_loss,
                                   std::span<DiffValue> params, double eps);

}  // namespace timnet::diff
