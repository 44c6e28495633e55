#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "irwgan/config.hpp"
#include "irwgan/importance.hpp"
#include "irwgan/tensor.hpp"

namespace irwgan {

// All objective terms of one optimizer step. total_g is assembled exactly
// as ((gan_g_xy + gan_g_yx) + lambda_cyc*cyc) + lambda_idt*idt.
struct LossReport {
  double gan_g_xy = 0, gan_g_yx = 0;
  double disc_y = 0, disc_x = 0;
  double ess_x = 0, ess_y = 0;
  double cyc = 0, idt = 0;
  double total_g = 0, total_beta_x = 0, total_beta_y = 0;

  static const std::vector<std::string>& field_names() {
    static const std::vector<std::string> names = {"gan_g_xy", "gan_g_yx", "disc_y",  "disc_x",
                                                   "ess_x",    "ess_y",    "cyc",     "idt",
                                                   "total_g",  "total_beta_x", "total_beta_y"};
    return names;
  }

  std::vector<double> values() const {
    return {gan_g_xy, gan_g_yx, disc_y, disc_x, ess_x, ess_y, cyc, idt, total_g, total_beta_x, total_beta_y};
  }

  bool finite() const {
    for (double v : values())
      if (!std::isfinite(v)) return false;
    return true;
  }
};

namespace detail {

template <class S>
S weighted_mean_sq_err(const std::vector<S>& scores, S target, const std::vector<S>& beta) {
  require(scores.size() == beta.size(), "score/weight length mismatch");
  S acc = S(0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const S d = target - scores[i];
    acc += beta[i] * d * d;
  }
  return acc / static_cast<S>(scores.size());
}

// mean absolute difference per sample over all per-sample entries
template <class S>
std::vector<S> mae_per_sample(const Tensor<S>& a, const Tensor<S>& b) {
  require(a.same_shape(b), "batch shape mismatch");
  require(!a.shape.empty(), "empty batch");
  const int n = a.dim(0);
  const std::size_t per = a.size() / static_cast<std::size_t>(n);
  std::vector<S> out(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    const S* pa = a.ptr() + static_cast<std::size_t>(s) * per;
    const S* pb = b.ptr() + static_cast<std::size_t>(s) * per;
    S acc = S(0);
    for (std::size_t i = 0; i < per; ++i) acc += std::abs(pa[i] - pb[i]);
    out[static_cast<std::size_t>(s)] = acc / static_cast<S>(per);
  }
  return out;
}

template <class S>
S weighted_mean(const std::vector<S>& value, const std::vector<S>& beta) {
  require(value.size() == beta.size(), "value/weight length mismatch");
  S acc = S(0);
  for (std::size_t i = 0; i < value.size(); ++i) acc += beta[i] * value[i];
  return acc / static_cast<S>(value.size());
}

}  // namespace detail

// (1/n) sum beta_real_i (real_i - 1)^2 + (1/n) sum beta_fake_i fake_i^2.
// Fake scores are constants with respect to the generator here.
template <class S>
S disc_loss(const std::vector<S>& real_scores, const std::vector<S>& fake_scores, const WeightVector<S>& beta_real,
            const WeightVector<S>& beta_fake) {
  require(real_scores.size() == beta_real.size() && fake_scores.size() == beta_fake.size(),
          "score/weight length mismatch");
  const S real_term = detail::weighted_mean_sq_err(real_scores, S(1), beta_real.weights);
  S fake_acc = S(0);
  for (std::size_t i = 0; i < fake_scores.size(); ++i) fake_acc += beta_fake.weights[i] * fake_scores[i] * fake_scores[i];
  return real_term + fake_acc / static_cast<S>(fake_scores.size());
}

// (1/n) sum beta_i (1 - fake_i)^2: the generator/beta side of the
// reweighted adversarial loss (targets 1 on fakes).
template <class S>
S gen_adv_loss(const std::vector<S>& fake_scores, const WeightVector<S>& beta) {
  return detail::weighted_mean_sq_err(fake_scores, S(1), beta.weights);
}

// Euclidean norm of the weight vector (the effective-sample-size loss).
template <class S>
S ess_loss(const WeightVector<S>& beta) {
  S acc = S(0);
  for (S w : beta.weights) acc += w * w;
  return std::sqrt(acc);
}

// (1/n) sum beta_x_i |x_i - F(G(x_i))| + (1/n) sum beta_y_j |y_j - G(F(y_j))|
// with per-pixel mean absolute error per sample; beta is a constant here.
template <class S>
S cycle_loss(const Tensor<S>& x, const Tensor<S>& x_rec, const Tensor<S>& y, const Tensor<S>& y_rec,
             const WeightVector<S>& beta_x, const WeightVector<S>& beta_y) {
  const std::vector<S> lx = detail::mae_per_sample(x, x_rec);
  const std::vector<S> ly = detail::mae_per_sample(y, y_rec);
  return detail::weighted_mean(lx, beta_x.weights) + detail::weighted_mean(ly, beta_y.weights);
}

// same form, comparing x against F(x) and y against G(y)
template <class S>
S identity_loss(const Tensor<S>& x, const Tensor<S>& f_of_x, const Tensor<S>& y, const Tensor<S>& g_of_y,
                const WeightVector<S>& beta_x, const WeightVector<S>& beta_y) {
  return cycle_loss(x, f_of_x, y, g_of_y, beta_x, beta_y);
}

struct LossTerms {
  double gan_g_xy = 0, gan_g_yx = 0;
  double disc_y = 0, disc_x = 0;
  double ess_x = 0, ess_y = 0;
  double cyc = 0, idt = 0;
  double gan_beta_x = 0, gan_beta_y = 0;  // adversarial terms seen by the beta updates
};

// Totals per the full objective. The beta totals pair each importance
// network with its own translation direction only.
inline LossReport assemble(const LossTerms& t, const ExperimentConfig& config) {
  LossReport r;
  r.gan_g_xy = t.gan_g_xy;
  r.gan_g_yx = t.gan_g_yx;
  r.disc_y = t.disc_y;
  r.disc_x = t.disc_x;
  r.ess_x = t.ess_x;
  r.ess_y = t.ess_y;
  r.cyc = t.cyc;
  r.idt = t.idt;
  r.total_g = ((t.gan_g_xy + t.gan_g_yx) + config.lambda_cyc * t.cyc) + config.lambda_idt * t.idt;
  r.total_beta_x = t.gan_beta_x + config.lambda_ess * t.ess_x;
  r.total_beta_y = t.gan_beta_y + config.lambda_ess * t.ess_y;
  return r;
}

}  // namespace irwgan
