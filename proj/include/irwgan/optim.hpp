#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "irwgan/config.hpp"
#include "irwgan/params.hpp"

namespace irwgan {

struct AdamState {
  std::int64_t step = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected Adam update; grads are zeroed afterwards so the
// next accumulation cycle starts clean. Throws "divergence detected" naming
// the network when a non-finite gradient is found.
template <class S>
void adam_step(ParamVector<S>& params, AdamState& state, const std::string& net_name = "") {
  if (!params.grads_finite())
    throw Error("divergence detected" + (net_name.empty() ? "" : " in " + net_name));
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(params.grads[i]);
    const double m = b1 * static_cast<double>(params.m[i]) + (1.0 - b1) * g;
    const double v = b2 * static_cast<double>(params.v[i]) + (1.0 - b2) * g * g;
    params.m[i] = static_cast<S>(m);
    params.v[i] = static_cast<S>(v);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    params.values[i] = static_cast<S>(static_cast<double>(params.values[i]) -
                                      state.learning_rate * mhat / (std::sqrt(vhat) + state.eps));
  }
  params.zero_grads();
}

// Base rate through decay_start_epoch, then linear decay that stays
// positive through the last epoch and reaches zero one epoch past it:
//   lr(e) = base * min(1, (epochs + 1 - e) / (epochs + 1 - decay_start))
inline double lr_schedule(int epoch, const ExperimentConfig& config) {
  const double num = static_cast<double>(config.epochs + 1 - epoch);
  const double den = static_cast<double>(config.epochs + 1 - config.decay_start_epoch);
  const double frac = num / den;
  return config.learning_rate * (frac < 1.0 ? (frac > 0.0 ? frac : 0.0) : 1.0);
}

}  // namespace irwgan
