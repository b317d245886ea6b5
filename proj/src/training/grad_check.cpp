#include "cg3d/training/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cg3d/util/rng.hpp"

namespace cg3d {

GradCheckResult grad_check(const std::function<double()>& f, std::span<double* const> coords,
                           std::span<const double> analytic, double eps) {
  GradCheckResult r;
  r.coords = coords.size();
  // Cancellation noise of (up - down) / 2eps when f is only known to ~1 ulp.
  const double noise = std::numeric_limits<double>::epsilon() * std::abs(f()) / eps;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    double& x = *coords[i];
    const double saved = x;
    x = saved + eps;
    const double up = f();
    x = saved - eps;
    const double down = f();
    x = saved;
    const double num = (up - down) / (2 * eps);
    const double a = analytic[i];
    const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), kGradCheckFloor, kGradCheckResolution * noise});
    r.max_rel_error = std::max(r.max_rel_error, rel);
  }
  return r;
}

GradCheckResult grad_check(const std::function<nn::Var(nn::Graph<double>&)>& loss, const ParamList<double>& params,
                           double eps, std::size_t n_coords, std::uint64_t seed) {
  for (auto* p : params) p->grad = nn::Tensor<double>(p->value.rows(), p->value.cols());
  {
    nn::Graph<double> g;
    g.set_force_grad(true);
    auto l = loss(g);
    g.backward(l);
  }
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k]->value.size(); ++i) all.emplace_back(k, i);
  if (all.size() > n_coords) {
    Rng rng(seed);
    for (std::size_t i = 0; i < n_coords; ++i) std::swap(all[i], all[i + uniform_index(rng, all.size() - i)]);
    all.resize(n_coords);
  }
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (auto [k, i] : all) {
    coords.push_back(params[k]->value.data() + i);
    analytic.push_back(params[k]->grad[i]);
  }
  const auto eval = [&] {
    nn::Graph<double> g(false);
    return g.value(loss(g))[0];
  };
  return grad_check(eval, coords, analytic, eps);
}

}  // namespace cg3d
