#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irwgan/dataset.hpp"
#include "irwgan/image.hpp"
#include "irwgan/io.hpp"
#include "irwgan/losses.hpp"
#include "irwgan/metrics.hpp"
#include "irwgan/nets.hpp"
#include "irwgan/optim.hpp"

namespace irwgan {

// All trainable state of one run: the six networks with their optimizer
// states plus the position counters. Sampling state is derived from
// (seed, epoch), so a checkpoint at an epoch boundary resumes bit-exactly.
template <class S>
struct TrainState {
  ExperimentConfig config;
  int channels = 1;
  int resolution = 16;

  Network<S> G, F;            // G: X -> Y, F: Y -> X
  DiscriminatorPair<S> DY, DX;
  Network<S> BX, BY;
  AdamState adam_g, adam_f, adam_dy, adam_dx, adam_bx, adam_by;

  int epoch = 0;               // completed epochs
  std::int64_t global_step = 0;

  TrainState() = default;
  TrainState(const ExperimentConfig& cfg, int chans, int res) : config(cfg), channels(chans), resolution(res) {
    config.validate();
    G = Network<S>("G", NetworkSpec::generator(chans, cfg.gen_base_width, cfg.gen_downsample, cfg.gen_resblocks));
    F = Network<S>("F", NetworkSpec::generator(chans, cfg.gen_base_width, cfg.gen_downsample, cfg.gen_resblocks));
    DY = DiscriminatorPair<S>("D_Y", chans, cfg.disc_base_width, cfg.disc_layers);
    DX = DiscriminatorPair<S>("D_X", chans, cfg.disc_base_width, cfg.disc_layers);
    BX = Network<S>("B_X", NetworkSpec::importance(chans, cfg.imp_base_width, cfg.imp_conv_layers, res,
                                                   std::min(res, cfg.imp_downsample_to)));
    BY = Network<S>("B_Y", NetworkSpec::importance(chans, cfg.imp_base_width, cfg.imp_conv_layers, res,
                                                   std::min(res, cfg.imp_downsample_to)));
    G.init(cfg.seed);
    F.init(cfg.seed);
    DY.init(cfg.seed);
    DX.init(cfg.seed);
    BX.init(cfg.seed);
    BY.init(cfg.seed);
    const double lr = cfg.learning_rate;
    for (AdamState* a : {&adam_g, &adam_f, &adam_dy, &adam_dx, &adam_bx, &adam_by}) {
      a->learning_rate = lr;
      a->beta1 = cfg.adam_beta1;
      a->beta2 = cfg.adam_beta2;
      a->eps = cfg.adam_eps;
    }
  }

  void set_lr(double lr) {
    for (AdamState* a : {&adam_g, &adam_f, &adam_dy, &adam_dx, &adam_bx, &adam_by}) a->learning_rate = lr;
  }
};

namespace detail {

// Per-epoch without-replacement cycling: a seeded permutation consumed in
// batch-size slices, reshuffled (carrying the remainder) on exhaustion.
class EpochSampler {
 public:
  EpochSampler(std::uint64_t seed, const std::string& tag, int epoch, std::size_t dataset_size,
               const std::string& mode)
      : rng_(seed, tag + "/" + std::to_string(epoch)), size_(dataset_size), mode_(mode) {
    if (mode_ == "cycle") reshuffle();
  }

  std::vector<int> next(int n) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(n));
    if (mode_ == "iid") return sample_indices(size_, n, rng_);
    while (static_cast<int>(out.size()) < n) {
      if (cursor_ >= perm_.size()) reshuffle();
      out.push_back(perm_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    perm_.resize(size_);
    for (std::size_t i = 0; i < size_; ++i) perm_[i] = static_cast<int>(i);
    for (std::size_t i = 0; i + 1 < size_; ++i) {
      std::size_t j = i + rng_.uniform_index(size_ - i);
      std::swap(perm_[i], perm_[j]);
    }
    cursor_ = 0;
  }

  Rng rng_;
  std::size_t size_;
  std::string mode_;
  std::vector<int> perm_;
  std::size_t cursor_ = 0;
};

template <class S>
Tensor<S> slice_sample(const Tensor<S>& block, int s) {
  const int c = block.dim(1), h = block.dim(2), w = block.dim(3);
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  Tensor<S> out = Tensor<S>::uninit({1, c, h, w});
  std::copy(block.data.begin() + static_cast<std::ptrdiff_t>(s * per),
            block.data.begin() + static_cast<std::ptrdiff_t>((s + 1) * per), out.data.begin());
  return out;
}

// No-grad forward of a generator over a block, chunked by micro_batch so
// at most micro_batch samples of activations are alive at once.
template <class S>
Tensor<S> eval_chunked(Network<S>& net, const Tensor<S>& block, int micro) {
  const int n = block.dim(0);
  if (micro >= n) return net.eval(block);
  Tensor<S> out;
  for (int start = 0; start < n; start += micro) {
    const int count = std::min(micro, n - start);
    Tensor<S> chunk({count, block.dim(1), block.dim(2), block.dim(3)});
    const std::size_t per = block.size() / static_cast<std::size_t>(n);
    std::copy(block.data.begin() + static_cast<std::ptrdiff_t>(start * per),
              block.data.begin() + static_cast<std::ptrdiff_t>((start + count) * per), chunk.data.begin());
    Tensor<S> res = net.eval(chunk);
    if (out.data.empty()) {
      out = Tensor<S>({n, res.dim(1), res.dim(2), res.dim(3)});
    }
    std::copy(res.data.begin(), res.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * res.size() / count));
  }
  return out;
}

// pair-of-branches scores for a block, no grad: [branch][sample]
template <class S>
std::vector<std::vector<S>> pair_scores(DiscriminatorPair<S>& d, const Tensor<S>& block) {
  auto t = d.eval_scores(block);
  std::vector<std::vector<S>> out;
  for (const auto& v : t) out.emplace_back(v.data.begin(), v.data.end());
  return out;
}

// 0.5-averaged squared error against target 1 over the branch pair
template <class S>
std::vector<S> pair_gen_error(const std::vector<std::vector<S>>& scores) {
  const std::size_t n = scores[0].size();
  std::vector<S> e(n, S(0));
  for (const auto& branch : scores)
    for (std::size_t i = 0; i < n; ++i) {
      const S d = S(1) - branch[i];
      e[i] += d * d;
    }
  const S inv = S(1) / static_cast<S>(scores.size());
  for (S& v : e) v *= inv;
  return e;
}

// mean over branches of the pure discriminator/generator losses
template <class S>
S pair_disc_loss(const std::vector<std::vector<S>>& real, const std::vector<std::vector<S>>& fake,
                 const WeightVector<S>& beta_real, const WeightVector<S>& beta_fake) {
  S acc = S(0);
  for (std::size_t b = 0; b < real.size(); ++b) acc += disc_loss(real[b], fake[b], beta_real, beta_fake);
  return acc / static_cast<S>(real.size());
}

template <class S>
S pair_gen_adv_loss(const std::vector<std::vector<S>>& fake, const WeightVector<S>& beta) {
  S acc = S(0);
  for (std::size_t b = 0; b < fake.size(); ++b) acc += gen_adv_loss(fake[b], beta);
  return acc / static_cast<S>(fake.size());
}

struct SoftmaxNormalizer {
  double max_score = 0;
  double z = 0;
};

template <class S>
SoftmaxNormalizer normalizer_of(const std::vector<S>& scores) {
  SoftmaxNormalizer n;
  double mx = static_cast<double>(scores[0]);
  for (S s : scores) mx = std::max(mx, static_cast<double>(s));
  double z = 0;
  for (S s : scores) z += std::exp(static_cast<double>(s) - mx);
  n.max_score = mx;
  n.z = z;
  return n;
}

}  // namespace detail

// Per-epoch diagnostics written to epoch_summary.csv. The adversarial
// means are label-split and never feed any loss.
struct EpochSummary {
  int epoch = 0;
  double ess_x = 0, ess_y = 0;
  double ess_x_ratio = 0, ess_y_ratio = 0;
  std::optional<double> adv_x_aligned, adv_x_unaligned;
  std::optional<double> adv_y_aligned, adv_y_unaligned;
  double wall_seconds = 0;
};

// Batched tape construction of total_g over a logical batch, used by the
// gradient verification suite and the joint update mode. The adversarial
// terms use beta_*_live when given (live softmax weights); the cycle and
// identity terms always take the constant weights.
template <class S>
struct TotalGBuild {
  typename Tape<S>::Var total;
  std::vector<std::vector<S>> dgx, dfy;            // branch score values
  std::vector<S> cyc_x, cyc_y, idt_x, idt_y;       // per-sample mae values
};

template <class S>
TotalGBuild<S> build_total_g(Tape<S>& t, TrainState<S>& st, typename Tape<S>::Var x, typename Tape<S>::Var y,
                             const WeightVector<S>& wx, const WeightVector<S>& wy,
                             typename Tape<S>::Var beta_x_live = {}, typename Tape<S>::Var beta_y_live = {}) {
  using Var = typename Tape<S>::Var;
  const ExperimentConfig& cfg = st.config;
  const int n = t.val(x).dim(0);

  auto gx = st.G.forward(t, x);
  auto fy = st.F.forward(t, y);
  auto rec_x = st.F.forward(t, gx);
  auto rec_y = st.G.forward(t, fy);
  auto idt_x = st.F.forward(t, x);
  auto idt_y = st.G.forward(t, y);
  auto dgx_v = st.DY.discriminate(t, gx, true);
  auto dfy_v = st.DX.discriminate(t, fy, true);

  auto adv_term = [&](Var score, Var beta_live, const WeightVector<S>& w) {
    Var err = t.square(t.affine(score, S(-1), S(1)));  // (1 - D)^2 per sample
    if (beta_live.valid()) return t.mean_vec(t.mul(err, beta_live));
    std::vector<S> coeff(w.weights.begin(), w.weights.end());
    return t.weighted_mean(err, coeff);
  };

  std::vector<Var> parts;
  std::vector<S> coeff;
  const S half = S(1) / static_cast<S>(dgx_v.size());
  TotalGBuild<S> out;
  out.dgx.resize(dgx_v.size());
  out.dfy.resize(dfy_v.size());
  for (std::size_t b = 0; b < dgx_v.size(); ++b) {
    parts.push_back(adv_term(dgx_v[b], beta_x_live, wx));
    coeff.push_back(half);
    parts.push_back(adv_term(dfy_v[b], beta_y_live, wy));
    coeff.push_back(half);
    const auto& da = t.val(dgx_v[b]).data;
    const auto& db = t.val(dfy_v[b]).data;
    out.dgx[b].assign(da.begin(), da.end());
    out.dfy[b].assign(db.begin(), db.end());
  }

  auto mae_x = t.mean_chw(t.abs(t.sub(x, rec_x)));
  auto mae_y = t.mean_chw(t.abs(t.sub(y, rec_y)));
  auto mae_ix = t.mean_chw(t.abs(t.sub(x, idt_x)));
  auto mae_iy = t.mean_chw(t.abs(t.sub(y, idt_y)));
  auto assign_vec = [&t](std::vector<S>& dst, typename Tape<S>::Var v) {
    const auto& d = t.val(v).data;
    dst.assign(d.begin(), d.end());
  };
  assign_vec(out.cyc_x, mae_x);
  assign_vec(out.cyc_y, mae_y);
  assign_vec(out.idt_x, mae_ix);
  assign_vec(out.idt_y, mae_iy);

  std::vector<S> cwx(wx.weights.begin(), wx.weights.end());
  std::vector<S> cwy(wy.weights.begin(), wy.weights.end());
  parts.push_back(t.weighted_mean(mae_x, cwx));
  coeff.push_back(static_cast<S>(cfg.lambda_cyc));
  parts.push_back(t.weighted_mean(mae_y, cwy));
  coeff.push_back(static_cast<S>(cfg.lambda_cyc));
  parts.push_back(t.weighted_mean(mae_ix, cwx));
  coeff.push_back(static_cast<S>(cfg.lambda_idt));
  parts.push_back(t.weighted_mean(mae_iy, cwy));
  coeff.push_back(static_cast<S>(cfg.lambda_idt));

  (void)n;
  out.total = t.sum_scaled(parts, coeff);
  return out;
}

// Batched total_beta for one importance network: the live-softmax weights
// against fixed per-sample adversarial errors plus lambda_ess * |beta|_2.
template <class S>
typename Tape<S>::Var build_total_beta(Tape<S>& t, Network<S>& B, typename Tape<S>::Var block,
                                       const std::vector<S>& frozen_err, double lambda_ess) {
  auto scores = B.forward(t, block);
  auto beta = t.softmax_scale(scores);
  auto gan = t.mean_vec(t.mul(t.constant(Tensor<S>({static_cast<int>(frozen_err.size())}, frozen_err)), beta));
  auto ess = t.l2_norm(beta);
  return t.sum_scaled({gan, ess}, {S(1), static_cast<S>(lambda_ess)});
}

// One alternating optimization step over a logical batch:
//   (1) D_Y and D_X on the reweighted discriminator loss, beta frozen;
//   (2) G and F jointly on total_g, beta frozen;
//   (3) beta_X on its adversarial term + lambda_ess * ESS, G/D_Y frozen;
//   (4) beta_Y symmetrically against F and D_X.
// Importance weights are computed once over the full logical batch (fixed
// softmax normalizer); gradient passes run one sample at a time, so
// accumulation order never depends on the micro-batch setting.
// With joint_beta_update the generators and importance networks share one
// backward pass (live softmax weights in the adversarial terms; the beta
// sub-steps are folded away); this requires micro_batch == batch_size.
// Passing hardwired weights makes the step run with those constants and no
// importance-network involvement at all (the Baseline step).
template <class S>
LossReport train_step(TrainState<S>& st, const Batch& batch_x, const Batch& batch_y,
                      const WeightVector<S>* hardwired_wx = nullptr, const WeightVector<S>* hardwired_wy = nullptr) {
  const ExperimentConfig& cfg = st.config;
  const int n = batch_x.size();
  require(n == batch_y.size(), "domain batches must have equal size");
  require(n >= 2, "train_step needs batches of at least 2 samples");
  const int micro = cfg.effective_micro_batch();
  using Tp = Tape<S>;
  using Var = typename Tp::Var;

  Tensor<S> bx = batch_x.tensors.template cast<S>();
  Tensor<S> by = batch_y.tensors.template cast<S>();

  auto check_finite = [&st](double v, const char* term) {
    if (!std::isfinite(v))
      throw Error("non-finite " + std::string(term) + " at step " + std::to_string(st.global_step));
  };

  // ---- weights for this step (no grad, full logical batch)
  const bool beta_x_active = hardwired_wx == nullptr && cfg.learn_beta_x;
  const bool beta_y_active = hardwired_wy == nullptr && cfg.learn_beta_y;
  std::vector<S> scores_x, scores_y;
  WeightVector<S> wx, wy;
  detail::SoftmaxNormalizer norm_x, norm_y;
  if (hardwired_wx != nullptr) {
    require(static_cast<int>(hardwired_wx->size()) == n, "hardwired weight length mismatch");
    wx = *hardwired_wx;
  } else if (beta_x_active) {
    Tensor<S> sx = st.BX.eval(bx);
    scores_x.assign(sx.data.begin(), sx.data.end());
    wx = batch_weights(scores_x, batch_x.indices);
    norm_x = detail::normalizer_of(scores_x);
  } else {
    wx = unit_weights<S>(static_cast<std::size_t>(n), batch_x.indices);
  }
  if (hardwired_wy != nullptr) {
    require(static_cast<int>(hardwired_wy->size()) == n, "hardwired weight length mismatch");
    wy = *hardwired_wy;
  } else if (beta_y_active) {
    Tensor<S> sy = st.BY.eval(by);
    scores_y.assign(sy.data.begin(), sy.data.end());
    wy = batch_weights(scores_y, batch_y.indices);
    norm_y = detail::normalizer_of(scores_y);
  } else {
    wy = unit_weights<S>(static_cast<std::size_t>(n), batch_y.indices);
  }

  LossTerms terms;
  terms.ess_x = static_cast<double>(ess_loss(wx));
  terms.ess_y = static_cast<double>(ess_loss(wy));

  // ---- (1) discriminator update
  {
    Tensor<S> fake_y = detail::eval_chunked(st.G, bx, micro);
    Tensor<S> fake_x = detail::eval_chunked(st.F, by, micro);
    std::vector<std::vector<S>> ry(2), fy(2), rx(2), fx(2);
    for (int s = 0; s < n; ++s) {
      Tp t;
      auto y_s = t.constant(detail::slice_sample(by, s));
      auto gy_s = t.constant(detail::slice_sample(fake_y, s));
      auto x_s = t.constant(detail::slice_sample(bx, s));
      auto fx_s = t.constant(detail::slice_sample(fake_x, s));
      auto ry_v = st.DY.discriminate(t, y_s);
      auto fy_v = st.DY.discriminate(t, gy_s);
      auto rx_v = st.DX.discriminate(t, x_s);
      auto fx_v = st.DX.discriminate(t, fx_s);

      std::vector<Var> parts;
      std::vector<S> coeff;
      const S half_n = S(0.5) / static_cast<S>(n);
      for (std::size_t b = 0; b < ry_v.size(); ++b) {
        parts.push_back(t.square(t.affine(ry_v[b], S(1), S(-1))));  // (D(y)-1)^2
        coeff.push_back(wy.weights[static_cast<std::size_t>(s)] * half_n);
        parts.push_back(t.square(fy_v[b]));                         // D(G(x))^2
        coeff.push_back(wx.weights[static_cast<std::size_t>(s)] * half_n);
        parts.push_back(t.square(t.affine(rx_v[b], S(1), S(-1))));
        coeff.push_back(wx.weights[static_cast<std::size_t>(s)] * half_n);
        parts.push_back(t.square(fx_v[b]));
        coeff.push_back(wy.weights[static_cast<std::size_t>(s)] * half_n);
      }
      t.backward(t.sum_scaled(parts, coeff));

      for (std::size_t b = 0; b < ry_v.size(); ++b) {
        if (ry[b].empty()) {
          ry[b].reserve(static_cast<std::size_t>(n));
          fy[b].reserve(static_cast<std::size_t>(n));
          rx[b].reserve(static_cast<std::size_t>(n));
          fx[b].reserve(static_cast<std::size_t>(n));
        }
        ry[b].push_back(t.val(ry_v[b])[0]);
        fy[b].push_back(t.val(fy_v[b])[0]);
        rx[b].push_back(t.val(rx_v[b])[0]);
        fx[b].push_back(t.val(fx_v[b])[0]);
      }
    }
    terms.disc_y = static_cast<double>(detail::pair_disc_loss(ry, fy, wy, wx));
    terms.disc_x = static_cast<double>(detail::pair_disc_loss(rx, fx, wx, wy));
    check_finite(terms.disc_y, "disc_y");
    check_finite(terms.disc_x, "disc_x");
    adam_step(st.DY.params(), st.adam_dy, "D_Y");
    adam_step(st.DX.params(), st.adam_dx, "D_X");
  }

  const bool joint = cfg.joint_beta_update && (beta_x_active || beta_y_active);
  if (joint) {
    // ---- (2'+3'+4') one backward pass over G, F and the active importance
    // networks; adversarial terms see live weights, cycle/identity see the
    // frozen ones, and each active beta adds its ESS term.
    require(micro == n, "joint_beta_update requires micro_batch == batch_size");
    using Var = typename Tp::Var;
    Tp t;
    auto x = t.constant(bx);
    auto y = t.constant(by);
    Var beta_x_live, beta_y_live;
    if (beta_x_active) beta_x_live = t.softmax_scale(st.BX.forward(t, x));
    if (beta_y_active) beta_y_live = t.softmax_scale(st.BY.forward(t, y));
    TotalGBuild<S> built = build_total_g(t, st, x, y, wx, wy, beta_x_live, beta_y_live);
    std::vector<Var> parts{built.total};
    std::vector<S> coeff{S(1)};
    if (beta_x_active) {
      parts.push_back(t.l2_norm(beta_x_live));
      coeff.push_back(static_cast<S>(cfg.lambda_ess));
    }
    if (beta_y_active) {
      parts.push_back(t.l2_norm(beta_y_live));
      coeff.push_back(static_cast<S>(cfg.lambda_ess));
    }
    t.backward(t.sum_scaled(parts, coeff));

    terms.gan_g_xy = static_cast<double>(detail::pair_gen_adv_loss(built.dgx, wx));
    terms.gan_g_yx = static_cast<double>(detail::pair_gen_adv_loss(built.dfy, wy));
    terms.cyc = static_cast<double>(detail::weighted_mean(built.cyc_x, wx.weights) +
                                    detail::weighted_mean(built.cyc_y, wy.weights));
    terms.idt = static_cast<double>(detail::weighted_mean(built.idt_x, wx.weights) +
                                    detail::weighted_mean(built.idt_y, wy.weights));
    terms.gan_beta_x = terms.gan_g_xy;
    terms.gan_beta_y = terms.gan_g_yx;
    check_finite(terms.gan_g_xy, "gan_g_xy");
    check_finite(terms.gan_g_yx, "gan_g_yx");
    check_finite(terms.cyc, "cyc");
    check_finite(terms.idt, "idt");
    adam_step(st.G.params(), st.adam_g, "G");
    adam_step(st.F.params(), st.adam_f, "F");
    if (beta_x_active) adam_step(st.BX.params(), st.adam_bx, "B_X");
    if (beta_y_active) adam_step(st.BY.params(), st.adam_by, "B_Y");

    st.global_step += 1;
    LossReport report = assemble(terms, cfg);
    if (!report.finite()) throw Error("non-finite loss at step " + std::to_string(st.global_step - 1));
    return report;
  }

  // ---- (2) generator update (G and F jointly; beta and discriminators frozen)
  {
    std::vector<std::vector<S>> dgx(2), dfy(2);
    std::vector<S> cyc_x_v, cyc_y_v, idt_x_v, idt_y_v;
    for (int s = 0; s < n; ++s) {
      Tp t;
      auto x_s = t.constant(detail::slice_sample(bx, s));
      auto y_s = t.constant(detail::slice_sample(by, s));
      auto gx = st.G.forward(t, x_s);
      auto fy = st.F.forward(t, y_s);
      auto rec_x = st.F.forward(t, gx);
      auto rec_y = st.G.forward(t, fy);
      auto idt_x = st.F.forward(t, x_s);
      auto idt_y = st.G.forward(t, y_s);
      auto dgx_v = st.DY.discriminate(t, gx, true);
      auto dfy_v = st.DX.discriminate(t, fy, true);

      auto mae_cx = t.mean_chw(t.abs(t.sub(x_s, rec_x)));
      auto mae_cy = t.mean_chw(t.abs(t.sub(y_s, rec_y)));
      auto mae_ix = t.mean_chw(t.abs(t.sub(x_s, idt_x)));
      auto mae_iy = t.mean_chw(t.abs(t.sub(y_s, idt_y)));

      const S bxw = wx.weights[static_cast<std::size_t>(s)];
      const S byw = wy.weights[static_cast<std::size_t>(s)];
      const S inv_n = S(1) / static_cast<S>(n);
      const S half_n = S(0.5) / static_cast<S>(n);

      std::vector<Var> parts;
      std::vector<S> coeff;
      for (std::size_t b = 0; b < dgx_v.size(); ++b) {
        parts.push_back(t.square(t.affine(dgx_v[b], S(-1), S(1))));  // (1-D(G(x)))^2
        coeff.push_back(bxw * half_n);
        parts.push_back(t.square(t.affine(dfy_v[b], S(-1), S(1))));
        coeff.push_back(byw * half_n);
      }
      parts.push_back(mae_cx);
      coeff.push_back(static_cast<S>(cfg.lambda_cyc) * bxw * inv_n);
      parts.push_back(mae_cy);
      coeff.push_back(static_cast<S>(cfg.lambda_cyc) * byw * inv_n);
      parts.push_back(mae_ix);
      coeff.push_back(static_cast<S>(cfg.lambda_idt) * bxw * inv_n);
      parts.push_back(mae_iy);
      coeff.push_back(static_cast<S>(cfg.lambda_idt) * byw * inv_n);
      t.backward(t.sum_scaled(parts, coeff));

      for (std::size_t b = 0; b < dgx_v.size(); ++b) {
        dgx[b].push_back(t.val(dgx_v[b])[0]);
        dfy[b].push_back(t.val(dfy_v[b])[0]);
      }
      cyc_x_v.push_back(t.val(mae_cx)[0]);
      cyc_y_v.push_back(t.val(mae_cy)[0]);
      idt_x_v.push_back(t.val(mae_ix)[0]);
      idt_y_v.push_back(t.val(mae_iy)[0]);
    }
    terms.gan_g_xy = static_cast<double>(detail::pair_gen_adv_loss(dgx, wx));
    terms.gan_g_yx = static_cast<double>(detail::pair_gen_adv_loss(dfy, wy));
    terms.cyc = static_cast<double>(detail::weighted_mean(cyc_x_v, wx.weights) +
                                    detail::weighted_mean(cyc_y_v, wy.weights));
    terms.idt = static_cast<double>(detail::weighted_mean(idt_x_v, wx.weights) +
                                    detail::weighted_mean(idt_y_v, wy.weights));
    check_finite(terms.gan_g_xy, "gan_g_xy");
    check_finite(terms.gan_g_yx, "gan_g_yx");
    check_finite(terms.cyc, "cyc");
    check_finite(terms.idt, "idt");
    adam_step(st.G.params(), st.adam_g, "G");
    adam_step(st.F.params(), st.adam_f, "F");
  }

  // ---- (3)+(4) importance updates against the refreshed generators and
  // discriminators; fixed softmax normalizer from the full logical batch.
  // d(total_beta)/d(score_k) through the logical-batch softmax is
  // beta_k (c_k - K) with c_k = e_k/n + lambda_ess beta_k/|beta| and
  // K = (1/n) sum_j beta_j c_j. K is a constant of the no-grad pass, so the
  // exact full-batch gradient decomposes into per-sample passes against the
  // frozen normalizer.
  auto beta_update = [&](Network<S>& B, AdamState& adam, const Tensor<S>& block, Network<S>& gen,
                         DiscriminatorPair<S>& disc, const WeightVector<S>& w_hat,
                         const detail::SoftmaxNormalizer& norm, double ess_hat, const char* tag) {
    Tensor<S> fake = detail::eval_chunked(gen, block, micro);
    std::vector<S> err = detail::pair_gen_error(detail::pair_scores(disc, fake));
    std::vector<S> coeff(static_cast<std::size_t>(n));
    S mean_coeff = S(0);
    for (int s = 0; s < n; ++s) {
      coeff[static_cast<std::size_t>(s)] =
          err[static_cast<std::size_t>(s)] / static_cast<S>(n) +
          static_cast<S>(cfg.lambda_ess) * w_hat.weights[static_cast<std::size_t>(s)] / static_cast<S>(ess_hat);
      mean_coeff += w_hat.weights[static_cast<std::size_t>(s)] * coeff[static_cast<std::size_t>(s)];
    }
    mean_coeff /= static_cast<S>(n);
    for (int s = 0; s < n; ++s) {
      Tp t;
      auto x_s = t.constant(detail::slice_sample(block, s));
      auto sc = B.forward(t, x_s);
      auto beta_s = t.softmax_fixed(sc, static_cast<S>(norm.max_score), static_cast<S>(norm.z), n);
      t.backward(t.sum_scaled({beta_s}, {coeff[static_cast<std::size_t>(s)] - mean_coeff}));
    }
    adam_step(B.params(), adam, tag);
    return static_cast<double>(detail::weighted_mean(err, w_hat.weights));
  };

  if (beta_x_active) {
    terms.gan_beta_x = beta_update(st.BX, st.adam_bx, bx, st.G, st.DY, wx, norm_x, terms.ess_x, "B_X");
    check_finite(terms.gan_beta_x, "total_beta_x");
  } else {
    terms.gan_beta_x = terms.gan_g_xy;
  }
  if (beta_y_active) {
    terms.gan_beta_y = beta_update(st.BY, st.adam_by, by, st.F, st.DX, wy, norm_y, terms.ess_y, "B_Y");
    check_finite(terms.gan_beta_y, "total_beta_y");
  } else {
    terms.gan_beta_y = terms.gan_g_yx;
  }

  st.global_step += 1;
  LossReport report = assemble(terms, cfg);
  if (!report.finite()) throw Error("non-finite loss at step " + std::to_string(st.global_step - 1));
  return report;
}

// ---- checkpointing ----

template <class S>
nlohmann::json net_to_json(const ParamVector<S>& p, const AdamState& a) {
  auto vec = [](const std::vector<S>& v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]);
    return out;
  };
  return {{"values", vec(p.values)}, {"m", vec(p.m)}, {"v", vec(p.v)}, {"adam_step", a.step}};
}

template <class S>
void net_from_json(const nlohmann::json& j, ParamVector<S>& p, AdamState& a) {
  auto load = [](const nlohmann::json& arr, std::vector<S>& dst) {
    require(arr.size() == dst.size(), "checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<S>(arr[i].get<double>());
  };
  load(j.at("values"), p.values);
  load(j.at("m"), p.m);
  load(j.at("v"), p.v);
  a.step = j.at("adam_step").get<std::int64_t>();
}

inline constexpr const char* kCheckpointFormat = "irwgan-ckpt-v1";

template <class S>
void save_checkpoint(const TrainState<S>& st, const std::string& path) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["precision"] = st.config.precision;
  j["epoch"] = st.epoch;
  j["global_step"] = st.global_step;
  j["channels"] = st.channels;
  j["resolution"] = st.resolution;
  j["config"] = to_json(st.config);
  j["conventions"] = net_conventions();
  j["nets"] = {{"G", net_to_json(st.G.params(), st.adam_g)},   {"F", net_to_json(st.F.params(), st.adam_f)},
               {"D_Y", net_to_json(st.DY.params(), st.adam_dy)}, {"D_X", net_to_json(st.DX.params(), st.adam_dx)},
               {"B_X", net_to_json(st.BX.params(), st.adam_bx)}, {"B_Y", net_to_json(st.BY.params(), st.adam_by)}};
  write_text_file(path, j.dump());
}

template <class S>
TrainState<S> load_checkpoint(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(path));
  require(j.at("format") == kCheckpointFormat, "unknown checkpoint format");
  ExperimentConfig cfg = config_from_json(j.at("config"));
  TrainState<S> st(cfg, j.at("channels").get<int>(), j.at("resolution").get<int>());
  st.epoch = j.at("epoch").get<int>();
  st.global_step = j.at("global_step").get<std::int64_t>();
  net_from_json(j.at("nets").at("G"), st.G.params(), st.adam_g);
  net_from_json(j.at("nets").at("F"), st.F.params(), st.adam_f);
  net_from_json(j.at("nets").at("D_Y"), st.DY.params(), st.adam_dy);
  net_from_json(j.at("nets").at("D_X"), st.DX.params(), st.adam_dx);
  net_from_json(j.at("nets").at("B_X"), st.BX.params(), st.adam_bx);
  net_from_json(j.at("nets").at("B_Y"), st.BY.params(), st.adam_by);
  return st;
}

// ---- the run loop ----

namespace detail {

inline int default_iters(const ExperimentConfig& cfg, std::size_t nx, std::size_t ny) {
  if (cfg.iters_per_epoch > 0) return cfg.iters_per_epoch;
  const std::size_t n = std::max(nx, ny);
  return std::max<int>(1, static_cast<int>(n / static_cast<std::size_t>(cfg.batch_size)));
}

// mean pair-averaged (1 - D(fake))^2 over a dataset, split by label
template <class S>
std::pair<std::optional<double>, std::optional<double>> adv_error_by_label(Network<S>& gen, DiscriminatorPair<S>& disc,
                                                                           const DomainDataset& data, int micro) {
  if (!data.labels) return {std::nullopt, std::nullopt};
  TrainView view = train_view(data);
  std::vector<int> all(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) all[i] = static_cast<int>(i);
  Tensor<S> block = make_batch(view, all).tensors.template cast<S>();
  Tensor<S> fake = eval_chunked(gen, block, micro);
  std::vector<S> err = pair_gen_error(pair_scores(disc, fake));
  double sa = 0, su = 0;
  int na = 0, nu = 0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    if ((*data.labels)[i] == Label::aligned) {
      sa += static_cast<double>(err[i]);
      ++na;
    } else {
      su += static_cast<double>(err[i]);
      ++nu;
    }
  }
  return {na > 0 ? std::optional<double>(sa / na) : std::nullopt,
          nu > 0 ? std::optional<double>(su / nu) : std::nullopt};
}

inline std::string csv_opt(const std::optional<double>& v) { return v ? fmt_g17(*v) : ""; }

template <class S>
void write_sample_grid(TrainState<S>& st, const DomainDataset& x, const DomainDataset& y, const std::string& path) {
  const int k = static_cast<int>(std::min<std::size_t>(8, std::min(x.size(), y.size())));
  if (k == 0) return;
  TrainView vx = train_view(x), vy = train_view(y);
  std::vector<int> idx(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
  Tensor<S> bx = make_batch(vx, idx).tensors.template cast<S>();
  Tensor<S> by = make_batch(vy, idx).tensors.template cast<S>();
  Tensor<S> gx = st.G.eval(bx);
  Tensor<S> fgx = st.F.eval(gx);
  Tensor<S> fy = st.F.eval(by);
  Tensor<S> gfy = st.G.eval(fy);

  const int res = st.resolution, c = st.channels;
  const Tensor<S>* rows[6] = {&bx, &gx, &fgx, &by, &fy, &gfy};
  ImageTensor grid(6 * res, k * res, c);
  for (int r = 0; r < 6; ++r)
    for (int s = 0; s < k; ++s)
      for (int ch = 0; ch < c; ++ch)
        for (int py = 0; py < res; ++py)
          for (int px = 0; px < res; ++px)
            grid.at(ch, r * res + py, s * res + px) =
                std::clamp(static_cast<double>(rows[r]->at4(s, ch, py, px)), -1.0, 1.0);
  write_png(path, grid);
}

}  // namespace detail

template <class S>
struct RunResult {
  TrainState<S> state;
  std::vector<LossReport> log;
  std::vector<EpochSummary> summaries;
};

// Executes epochs * iters_per_epoch steps with the linear-decay schedule,
// writing config.json, log.csv, epoch_summary.csv, weight reports,
// checkpoints and sample grids into run_dir. Labels never reach the
// training path; they feed the epoch diagnostics only.
template <class S>
RunResult<S> run_training(const DomainDataset& data_x, const DomainDataset& data_y, const ExperimentConfig& config,
                          const std::string& run_dir, const std::optional<std::string>& resume_from = std::nullopt) {
  namespace fs = std::filesystem;
  data_x.validate();
  data_y.validate();
  require(data_x.channels() == data_y.channels() && data_x.height() == data_y.height(),
          "domain datasets disagree in shape");

  RunResult<S> result;
  if (resume_from) {
    result.state = load_checkpoint<S>(*resume_from);
    require(result.state.resolution == data_x.height(), "checkpoint resolution does not match datasets");
  } else {
    result.state = TrainState<S>(config, data_x.channels(), data_x.height());
  }
  TrainState<S>& st = result.state;
  const ExperimentConfig& cfg = st.config;

  fs::create_directories(run_dir);
  fs::create_directories(fs::path(run_dir) / "checkpoints");
  if (cfg.sample_every > 0) fs::create_directories(fs::path(run_dir) / "samples");
  write_text_file((fs::path(run_dir) / "config.json").string(), to_json(cfg).dump(2) + "\n");

  const bool fresh = !resume_from;
  std::ofstream log((fs::path(run_dir) / "log.csv").string(), fresh ? std::ios::trunc : std::ios::app);
  std::ofstream summary((fs::path(run_dir) / "epoch_summary.csv").string(), fresh ? std::ios::trunc : std::ios::app);
  require(log.good() && summary.good(), "cannot write run logs");
  if (fresh) {
    log << "epoch,step,lr";
    for (const auto& f : LossReport::field_names()) log << ',' << f;
    log << '\n';
    summary << "epoch,ess_x,ess_y,ess_x_ratio,ess_y_ratio,adv_x_aligned,adv_x_unaligned,adv_y_aligned,"
               "adv_y_unaligned,wall_seconds\n";
  }

  TrainView view_x = train_view(data_x);
  TrainView view_y = train_view(data_y);
  const int iters = detail::default_iters(cfg, data_x.size(), data_y.size());
  const int micro = cfg.effective_micro_batch();

  for (int epoch = st.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    st.set_lr(lr_schedule(epoch, cfg));
    detail::EpochSampler sampler_x(cfg.seed, "sampler-x", epoch, data_x.size(), cfg.sampling);
    detail::EpochSampler sampler_y(cfg.seed, "sampler-y", epoch, data_y.size(), cfg.sampling);

    for (int it = 0; it < iters; ++it) {
      Batch batch_x = make_batch(view_x, sampler_x.next(cfg.batch_size));
      Batch batch_y = make_batch(view_y, sampler_y.next(cfg.batch_size));
      LossReport rep = train_step(st, batch_x, batch_y);
      result.log.push_back(rep);
      log << epoch << ',' << (st.global_step - 1) << ',' << fmt_g17(lr_schedule(epoch, cfg));
      for (double v : rep.values()) log << ',' << fmt_g17(v);
      log << '\n';
    }
    st.epoch = epoch;

    EpochSummary es;
    es.epoch = epoch;
    if (cfg.learn_beta_x) {
      WeightReport wr = dataset_weights(st.BX, data_x, micro, cfg.batch_size);
      auto w = wr.weights();
      es.ess_x = ess_statistic(w);
      es.ess_x_ratio = ess_ratio_form(w);
    } else {
      es.ess_x = static_cast<double>(data_x.size());
      es.ess_x_ratio = 1.0;
    }
    if (cfg.learn_beta_y) {
      WeightReport wr = dataset_weights(st.BY, data_y, micro, cfg.batch_size);
      auto w = wr.weights();
      es.ess_y = ess_statistic(w);
      es.ess_y_ratio = ess_ratio_form(w);
    } else {
      es.ess_y = static_cast<double>(data_y.size());
      es.ess_y_ratio = 1.0;
    }
    std::tie(es.adv_x_aligned, es.adv_x_unaligned) = detail::adv_error_by_label(st.G, st.DY, data_x, micro);
    std::tie(es.adv_y_aligned, es.adv_y_unaligned) = detail::adv_error_by_label(st.F, st.DX, data_y, micro);
    es.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.summaries.push_back(es);
    summary << es.epoch << ',' << fmt_g17(es.ess_x) << ',' << fmt_g17(es.ess_y) << ',' << fmt_g17(es.ess_x_ratio)
            << ',' << fmt_g17(es.ess_y_ratio) << ',' << detail::csv_opt(es.adv_x_aligned) << ','
            << detail::csv_opt(es.adv_x_unaligned) << ',' << detail::csv_opt(es.adv_y_aligned) << ','
            << detail::csv_opt(es.adv_y_unaligned) << ',' << fmt_g17(es.wall_seconds) << '\n';

    const bool last = epoch == cfg.epochs;
    if (last || (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0))
      save_checkpoint(st, (fs::path(run_dir) / "checkpoints" / ("ep" + std::to_string(epoch) + ".ckpt")).string());
    if (cfg.sample_every > 0 && (last || epoch % cfg.sample_every == 0))
      detail::write_sample_grid(st, data_x, data_y,
                                (fs::path(run_dir) / "samples" / ("ep" + std::to_string(epoch) + ".png")).string());
  }

  // final per-domain weight reports (unit weights when beta was not learned)
  auto final_report = [&](Network<S>& B, const DomainDataset& d, bool learned, const std::string& stem) {
    WeightReport rep;
    if (learned) {
      rep = dataset_weights(B, d, micro, cfg.batch_size);
    } else {
      rep.rows.resize(d.size());
      for (std::size_t i = 0; i < d.size(); ++i) {
        rep.rows[i].index = static_cast<int>(i);
        rep.rows[i].filename = i < d.filenames.size() ? d.filenames[i] : "";
        rep.rows[i].weight = 1.0;
        if (d.labels) rep.rows[i].label = (*d.labels)[i];
      }
      rep.ess_kish = static_cast<double>(d.size());
      rep.ess_batch_mean = static_cast<double>(cfg.batch_size);
    }
    write_weight_report_csv(rep, (fs::path(run_dir) / ("weights_" + stem + ".csv")).string());
    write_text_file((fs::path(run_dir) / ("weights_" + stem + ".json")).string(),
                    weight_report_summary(rep).dump(2) + "\n");
    return rep;
  };
  final_report(st.BX, data_x, cfg.learn_beta_x, "X");
  final_report(st.BY, data_y, cfg.learn_beta_y, "Y");

  return result;
}

struct ProbeRow {
  int epoch = 0;
  double mean_aligned = 0;
  double mean_unaligned = 0;
};

// Trains in Baseline mode (beta fixed at 1) while recording the per-epoch
// generator-adversarial error (1 - D_X(F(y)))^2 split by the Y-domain
// alignment labels. Labels feed only this diagnostic.
template <class S>
std::vector<ProbeRow> hypothesis_probe(const DomainDataset& data_x, const DomainDataset& data_y,
                                       ExperimentConfig config, const std::string& run_dir) {
  require(data_y.labels.has_value(), "hypothesis_probe needs a labeled Y dataset");
  config.learn_beta_x = false;
  config.learn_beta_y = false;
  RunResult<S> res = run_training<S>(data_x, data_y, config, run_dir);
  std::vector<ProbeRow> rows;
  for (const auto& es : res.summaries) {
    require(es.adv_y_aligned && es.adv_y_unaligned, "probe needs both label classes in Y");
    rows.push_back({es.epoch, *es.adv_y_aligned, *es.adv_y_unaligned});
  }
  std::ofstream out((std::filesystem::path(run_dir) / "probe.csv").string());
  out << "epoch,mean_aligned,mean_unaligned\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << fmt_g17(r.mean_aligned) << ',' << fmt_g17(r.mean_unaligned) << '\n';
  return rows;
}

}  // namespace irwgan
