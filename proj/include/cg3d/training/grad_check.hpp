#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "cg3d/model/encoders.hpp"

namespace cg3d {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t coords = 0;
};

// |a - n| / max(|a|, |n|, floor, kGradCheckResolution * noise) per coordinate,
// maximised over coordinates. noise = eps_mach * |f(x)| / eps is the rounding
// floor of the difference quotient; gradients far below it cannot be resolved
// relatively, so they must agree to within that noise in absolute terms.
inline constexpr double kGradCheckFloor = 1e-7;
inline constexpr double kGradCheckResolution = 1e4;

// Central differences (f(x+eps) - f(x-eps)) / 2eps against the analytic
// gradient of the graph built by `loss`. Checks every coordinate when the
// parameters hold at most n_coords values, otherwise a random subset of
// n_coords drawn from `seed`. Parameters need not be trainable.
GradCheckResult grad_check(const std::function<nn::Var(nn::Graph<double>&)>& loss, const ParamList<double>& params,
                           double eps, std::size_t n_coords = 256, std::uint64_t seed = 0);

// Same check for a plain function of the values behind `coords`.
GradCheckResult grad_check(const std::function<double()>& f, std::span<double* const> coords,
                           std::span<const double> analytic, double eps);

}  // namespace cg3d
