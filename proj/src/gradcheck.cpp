#include "gfslt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace gfslt {

FdResult finite_diff_check(const ParameterStore& params, DifferentiableLoss& loss, double step,
                           int sample_count, std::uint64_t seed) {
  if (step <= 0) throw ConfigError("finite_diff_check: step must be > 0");
  if (sample_count < 1) throw ConfigError("finite_diff_check: sample_count must be >= 1");

  GradSink sink(params);
  const double base = loss.analytic(params, sink);
  if (!std::isfinite(base)) throw NumericError("finite_diff_check: loss is non-finite");

  std::int64_t total = params.total_elems();
  if (total == 0) throw ConfigError("finite_diff_check: empty parameter store");

  Rng rng(derive_seed(seed, "fdcheck"));
  FdResult res;
  for (int s = 0; s < sample_count; ++s) {
    std::int64_t flat = static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(total));
    int t = 0;
    while (flat >= shape_numel(params.info(t).shape)) {
      flat -= shape_numel(params.info(t).shape);
      ++t;
    }
    const double ga = (*sink.grad(t))[static_cast<std::size_t>(flat)];
    const double lp = loss.value(params, t, flat, step);
    const double lm = loss.value(params, t, flat, -step);
    if (!std::isfinite(lp) || !std::isfinite(lm))
      throw NumericError("finite_diff_check: perturbed loss is non-finite");
    const double gn = (lp - lm) / (2.0 * step);
    const double abs_err = std::fabs(ga - gn);
    const double rel = abs_err / std::max(1e-8, std::fabs(ga) + std::fabs(gn));
    res.max_rel_err = std::max(res.max_rel_err, rel);
    res.max_abs_err = std::max(res.max_abs_err, abs_err);
    ++res.checked;
  }
  return res;
}

}  // namespace gfslt
