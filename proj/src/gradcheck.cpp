#include "fedscan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedscan/errors.hpp"
#include "fedscan/rng.hpp"

namespace fedscan {

double gradient_check(const LossFn& fn, const ModelParams& params, double eps,
                      std::size_t min_coords, std::uint64_t seed) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw DomainError("gradient_check: eps must be in [1e-7, 1e-3]");
  }
  const LossAndGrad base = fn(params);
  require_same_names(base.grads, params, "gradient_check");
  const std::vector<double> analytic = base.grads.flatten();
  const std::size_t total = analytic.size();

  std::vector<std::size_t> coords(total);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (total > min_coords) {
    Rng rng(derive_key(seed, {fnv1a64("gradcheck")}));
    rng.shuffle(coords);
    coords.resize(min_coords);
    std::sort(coords.begin(), coords.end());
  }

  std::vector<double> flat = params.flatten();
  ModelParams probe = params;
  double worst = 0.0;
  for (std::size_t c : coords) {
    const double saved = flat[c];
    flat[c] = saved + eps;
    probe.unflatten(flat);
    const double up = fn(probe).loss;
    flat[c] = saved - eps;
    probe.unflatten(flat);
    const double down = fn(probe).loss;
    flat[c] = saved;

    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[c];
    // the 1e-6 floor keeps finite-difference roundoff on near-zero
    // coordinates from swamping the comparison
    const double rel =
        std::abs(a - numeric) /
        std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, rel);
  }
  probe.unflatten(flat);
  return worst;
}

}  // namespace fedscan
