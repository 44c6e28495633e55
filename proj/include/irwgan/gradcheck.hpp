#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "irwgan/params.hpp"
#include "irwgan/rng.hpp"

namespace irwgan {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
};

// Central-difference check of analytic gradients, always in the scalar type
// of the parameters (use double for verification). `loss` must be a pure
// function of params.values; `analytic` holds the gradient being verified.
// Checks every coordinate, or a seeded random subset of `max_coords` when
// the parameter vector is larger.
template <class S, class LossFn>
GradCheckResult grad_check(LossFn&& loss, ParamVector<S>& params, const std::vector<S>& analytic, double h,
                           std::size_t max_coords = 0, std::uint64_t subset_seed = 17) {
  require(analytic.size() == params.size(), "gradient length mismatch");
  std::vector<std::size_t> coords;
  if (max_coords == 0 || max_coords >= params.size()) {
    coords.resize(params.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  } else {
    Rng rng(subset_seed, "grad_check");
    std::vector<std::size_t> pool(params.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t i = 0; i < max_coords; ++i) {
      std::size_t j = i + rng.uniform_index(pool.size() - i);
      std::swap(pool[i], pool[j]);
      coords.push_back(pool[i]);
    }
  }

  GradCheckResult res;
  res.coords_checked = coords.size();
  for (std::size_t c : coords) {
    const S saved = params.values[c];
    params.values[c] = saved + static_cast<S>(h);
    const double fp = static_cast<double>(loss(params));
    params.values[c] = saved - static_cast<S>(h);
    const double fm = static_cast<double>(loss(params));
    params.values[c] = saved;
    require(std::isfinite(fp) && std::isfinite(fm), "non-finite loss during grad_check");
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = static_cast<double>(analytic[c]);
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_coord = c;
    }
  }
  return res;
}

}  // namespace irwgan
