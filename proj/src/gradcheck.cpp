#include "timnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace timnet::diff {

FiniteDiffReport finite_diff_check(const std::function<DiffValue()>& build_loss,
                                   std::span<DiffValue> params, double eps) {
  if (!(eps > 0.0)) throw ValidationError("finite_diff_check: eps must be positive");

  zero_grad(params);
  DiffValue loss = build_loss();
  if (loss.value().numel() != 1) throw ValidationError("finite_diff_check: loss must be scalar");
  const double base = loss.value()[0];
  backward(loss);

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  const double base2 = build_loss().value()[0];
  if (base2 != base)
    throw RuntimeFailure("finite_diff_check: two baseline evaluations differ (" +
                         std::to_string(base) + " vs " + std::to_string(base2) +
                         "); the loss function is not deterministic");

  FiniteDiffReport report;
  double err_sum = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& theta = params[pi].value();
    double param_max = 0.0;
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + eps;
      const double plus = build_loss().value()[0];
      theta[i] = saved - eps;
      const double minus = build_loss().value()[0];
      theta[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      err_sum += rel;
      ++report.n_coords;
      param_max = std::max(param_max, rel);
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].name();
        report.worst_coord = i;
      }
    }
    report.per_param.emplace_back(params[pi].name(), param_max);
  }
  report.mean_rel_err = report.n_coords > 0 ? err_sum / static_cast<double>(report.n_coords) : 0.0;
  return report;
}

}  // namespace timnet::diff
