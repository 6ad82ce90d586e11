#pragma once

#include <cstdint>
#include <functional>

#include "fedscan/params.hpp"

namespace fedscan {

struct LossAndGrad {
  double loss = 0.0;
  ModelParams grads;
};

/// A differentiable objective: maps parameters to a scalar loss plus the
/// analytic gradient for every entry (same names and shapes as the input).
using LossFn = std::function<LossAndGrad(const ModelParams&)>;

/// Compares analytic gradients against central finite differences
/// (f(p+eps) - f(p-eps)) / (2 eps) on a seeded sample of at least
/// `min_coords` coordinates (all of them when the model is smaller).
/// Relative error per coordinate is |a-n| / max(|a|, |n|, 1e-6); returns the
/// maximum over the sample. eps must lie in [1e-7, 1e-3].
double gradient_check(const LossFn& fn, const ModelParams& params, double eps,
                      std::size_t min_coords = 200, std::uint64_t seed = 0);

}  // namespace fedscan
