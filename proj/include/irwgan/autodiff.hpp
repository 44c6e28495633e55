#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "irwgan/params.hpp"
#include "irwgan/tensor.hpp"

namespace irwgan {

enum class PadMode { zero, reflect };

// Recorded computation for one forward pass. Operations append nodes in
// topological order; backward() sweeps them once in reverse and then marks
// the record consumed. Parameter leaves accumulate their gradients straight
// into ParamVector::grads, so repeated records accumulate (never overwrite).
template <class S>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // ---- leaves ----

  Var constant(Tensor<S> value) { return push(std::move(value), false); }

  Var leaf(Tensor<S> value) { return push(std::move(value), grad_enabled_); }

  Var param(ParamVector<S>& pv, std::size_t offset, std::vector<int> shape, bool frozen = false) {
    Tensor<S> val(shape);
    require(offset + val.size() <= pv.size(), "parameter slice out of range");
    std::copy(pv.values.begin() + static_cast<std::ptrdiff_t>(offset),
              pv.values.begin() + static_cast<std::ptrdiff_t>(offset + val.size()), val.data.begin());
    Var v = push(std::move(val), grad_enabled_ && !frozen);
    if (node(v).needs_grad) {
      node(v).pv = &pv;
      node(v).pv_offset = offset;
    }
    return v;
  }

  const Tensor<S>& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].val; }

  // gradient held on a (non-parameter) node after backward
  const Tensor<S>& grad_of(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    require(!n.grad.data.empty(), "no gradient recorded for this node");
    return n.grad;
  }

  void backward(Var loss) {
    require(grad_enabled_, "backward on a no-grad record");
    require(!consumed_, "backward called twice on a consumed record");
    consumed_ = true;
    Node& out = node(loss);
    require(out.val.size() == 1, "backward expects a scalar loss");
    for (Node& n : nodes_)
      if (n.needs_grad && n.pv == nullptr) n.grad = Tensor<S>(n.val.shape);
    if (out.needs_grad) {
      if (out.pv != nullptr)
        out.pv->grads[out.pv_offset] += S(1);
      else
        out.grad[0] = S(1);
    }
    for (std::size_t i = nodes_.size(); i-- > 0;)
      if (nodes_[i].back) nodes_[i].back();
  }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    require(val(a).same_shape(val(b)), "add: shape mismatch");
    Tensor<S> out = val(a);
    const Tensor<S>& vb = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return unary_or_binary(std::move(out), a, b, [this](Var a, Var b, Var o) {
      axpy(a, o, S(1));
      axpy(b, o, S(1));
    });
  }

  Var sub(Var a, Var b) {
    require(val(a).same_shape(val(b)), "sub: shape mismatch");
    Tensor<S> out = val(a);
    const Tensor<S>& vb = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
    return unary_or_binary(std::move(out), a, b, [this](Var a, Var b, Var o) {
      axpy(a, o, S(1));
      axpy(b, o, S(-1));
    });
  }

  Var mul(Var a, Var b) {
    require(val(a).same_shape(val(b)), "mul: shape mismatch");
    Tensor<S> out = val(a);
    const Tensor<S>& vb = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return unary_or_binary(std::move(out), a, b, [this](Var a, Var b, Var o) {
      const S* g = gsrc(o);
      if (wants(a)) {
        S* ga = gdst(a);
        const S* vb_ = val(b).ptr();
        for (std::size_t i = 0; i < val(a).size(); ++i) ga[i] += g[i] * vb_[i];
      }
      if (wants(b)) {
        S* gb = gdst(b);
        const S* va_ = val(a).ptr();
        for (std::size_t i = 0; i < val(b).size(); ++i) gb[i] += g[i] * va_[i];
      }
    });
  }

  // mul * x + add, elementwise with scalars
  Var affine(Var a, S mul, S add) {
    Tensor<S> out = val(a);
    for (S& x : out.data) x = mul * x + add;
    return unary(std::move(out), a, [this, mul](Var a, Var o) { axpy(a, o, mul); });
  }

  Var square(Var a) {
    Tensor<S> out = val(a);
    for (S& x : out.data) x = x * x;
    return unary(std::move(out), a, [this](Var a, Var o) {
      const S* g = gsrc(o);
      const S* va = val(a).ptr();
      S* ga = gdst(a);
      for (std::size_t i = 0; i < val(a).size(); ++i) ga[i] += S(2) * va[i] * g[i];
    });
  }

  Var abs(Var a) {
    Tensor<S> out = val(a);
    for (S& x : out.data) x = x < S(0) ? -x : x;
    return unary(std::move(out), a, [this](Var a, Var o) {
      const S* g = gsrc(o);
      const S* va = val(a).ptr();
      S* ga = gdst(a);
      for (std::size_t i = 0; i < val(a).size(); ++i) {
        if (va[i] > S(0))
          ga[i] += g[i];
        else if (va[i] < S(0))
          ga[i] -= g[i];
      }
    });
  }

  Var tanh(Var a) {
    Tensor<S> out = val(a);
    for (S& x : out.data) x = std::tanh(x);
    int oid = next_id();
    return unary(std::move(out), a, [this, oid](Var a, Var o) {
      (void)oid;
      const S* g = gsrc(o);
      const S* y = val(o).ptr();
      S* ga = gdst(a);
      for (std::size_t i = 0; i < val(a).size(); ++i) ga[i] += (S(1) - y[i] * y[i]) * g[i];
    });
  }

  Var relu(Var a) { return leaky_relu(a, S(0)); }

  Var leaky_relu(Var a, S slope) {
    Tensor<S> out = val(a);
    for (S& x : out.data) x = x > S(0) ? x : slope * x;
    return unary(std::move(out), a, [this, slope](Var a, Var o) {
      const S* g = gsrc(o);
      const S* va = val(a).ptr();
      S* ga = gdst(a);
      for (std::size_t i = 0; i < val(a).size(); ++i) ga[i] += (va[i] > S(0) ? S(1) : slope) * g[i];
    });
  }

  Var reshape(Var a, std::vector<int> shape) {
    require(Tensor<S>::count(shape) == val(a).size(), "reshape: element count mismatch");
    Tensor<S> out = Tensor<S>::uninit(std::move(shape));
    out.data = val(a).data;
    return unary(std::move(out), a, [this](Var a, Var o) { axpy(a, o, S(1)); });
  }

  // ---- structured layers ----

  // x {n,ic,h,w}, w {oc,ic,kh,kw}, b {oc}. Loops are arranged so the inner
  // span over ox is branchless (padding handled on precomputed borders) and
  // parameter-gradient accumulation stays sample-sequential.
  Var conv2d(Var x, Var w, Var b, int stride, int pad, PadMode mode) {
    const Tensor<S>& vx = val(x);
    const Tensor<S>& vw = val(w);
    require(vx.shape.size() == 4 && vw.shape.size() == 4, "conv2d expects 4-d input and weight");
    const int n = vx.dim(0), ic = vx.dim(1), h = vx.dim(2), ww = vx.dim(3);
    const int oc = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
    require(vw.dim(1) == ic, "conv2d: channel mismatch");
    require(val(b).size() == static_cast<std::size_t>(oc), "conv2d: bias size mismatch");
    if (mode == PadMode::reflect) require(pad < h && pad < ww, "reflect pad too large");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (ww + 2 * pad - kw) / stride + 1;
    require(oh >= 1 && ow >= 1, "conv2d: output would be empty");

    Tensor<S> out = Tensor<S>::uninit({n, oc, oh, ow});
    conv_forward(out.ptr(), vx.ptr(), vw.ptr(), val(b).ptr(), n, ic, h, ww, oc, kh, kw, oh, ow, stride, pad, mode);

    std::vector<Var> ins{x, w, b};
    return nary(std::move(out), ins, [this, x, w, b, stride, pad, mode, n, ic, h, ww, oc, kh, kw, oh, ow](Var o) {
      conv_backward(gsrc(o), val(x).ptr(), val(w).ptr(), wants(x) ? gdst(x) : nullptr,
                    wants(w) ? gdst(w) : nullptr, wants(b) ? gdst(b) : nullptr, n, ic, h, ww, oc, kh, kw, oh, ow,
                    stride, pad, mode);
    });
  }

  // x {n,d}, w {od,d}, b {od} -> {n,od}
  Var linear(Var x, Var w, Var b) {
    const Tensor<S>& vx = val(x);
    const Tensor<S>& vw = val(w);
    require(vx.shape.size() == 2 && vw.shape.size() == 2, "linear expects 2-d input and weight");
    const int n = vx.dim(0), d = vx.dim(1), od = vw.dim(0);
    require(vw.dim(1) == d, "linear: feature mismatch");
    require(val(b).size() == static_cast<std::size_t>(od), "linear: bias size mismatch");

    Tensor<S> out = Tensor<S>::uninit({n, od});
    for (int s = 0; s < n; ++s)
      for (int o = 0; o < od; ++o) {
        S acc = val(b)[static_cast<std::size_t>(o)];
        const S* xr = vx.ptr() + static_cast<std::size_t>(s) * d;
        const S* wr = vw.ptr() + static_cast<std::size_t>(o) * d;
        for (int k = 0; k < d; ++k) acc += wr[k] * xr[k];
        out[static_cast<std::size_t>(s) * od + o] = acc;
      }

    std::vector<Var> ins{x, w, b};
    return nary(std::move(out), ins, [this, x, w, b, n, d, od](Var o) {
      const S* g = gsrc(o);
      const S* px = val(x).ptr();
      const S* pw = val(w).ptr();
      S* gx = wants(x) ? gdst(x) : nullptr;
      S* gw = wants(w) ? gdst(w) : nullptr;
      S* gb = wants(b) ? gdst(b) : nullptr;
      for (int s = 0; s < n; ++s)
        for (int o_ = 0; o_ < od; ++o_) {
          const S go = g[static_cast<std::size_t>(s) * od + o_];
          if (go == S(0)) continue;
          if (gb) gb[o_] += go;
          for (int k = 0; k < d; ++k) {
            if (gw) gw[static_cast<std::size_t>(o_) * d + k] += go * px[static_cast<std::size_t>(s) * d + k];
            if (gx) gx[static_cast<std::size_t>(s) * d + k] += go * pw[static_cast<std::size_t>(o_) * d + k];
          }
        }
    });
  }

  // per-sample, per-channel normalization over spatial positions
  Var instance_norm(Var x, S eps) {
    const Tensor<S>& vx = val(x);
    require(vx.shape.size() == 4, "instance_norm expects 4-d input");
    const int n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    const int m = h * w;
    Tensor<S> out = Tensor<S>::uninit(vx.shape);
    Tensor<S> inv_std = Tensor<S>::uninit({n, c});
    for (int s = 0; s < n; ++s)
      for (int ch = 0; ch < c; ++ch) {
        const S* px = vx.ptr() + (static_cast<std::size_t>(s) * c + ch) * m;
        S mean = S(0);
        for (int i = 0; i < m; ++i) mean += px[i];
        mean /= S(m);
        S var = S(0);
        for (int i = 0; i < m; ++i) var += (px[i] - mean) * (px[i] - mean);
        var /= S(m);
        const S istd = S(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(s) * c + ch] = istd;
        S* po = out.ptr() + (static_cast<std::size_t>(s) * c + ch) * m;
        for (int i = 0; i < m; ++i) po[i] = (px[i] - mean) * istd;
      }

    auto istd_keep = std::make_shared<Tensor<S>>(std::move(inv_std));
    return unary(std::move(out), x, [this, istd_keep, n, c, m](Var x, Var o) {
      const S* g = gsrc(o);
      const S* y = val(o).ptr();
      S* gx = gdst(x);
      for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t off = (static_cast<std::size_t>(s) * c + ch) * m;
          S gmean = S(0), gdoty = S(0);
          for (int i = 0; i < m; ++i) {
            gmean += g[off + i];
            gdoty += g[off + i] * y[off + i];
          }
          gmean /= S(m);
          gdoty /= S(m);
          const S istd = (*istd_keep)[static_cast<std::size_t>(s) * c + ch];
          for (int i = 0; i < m; ++i) gx[off + i] += istd * (g[off + i] - gmean - y[off + i] * gdoty);
        }
    });
  }

  Var upsample2(Var x) {
    const Tensor<S>& vx = val(x);
    require(vx.shape.size() == 4, "upsample2 expects 4-d input");
    const int n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    Tensor<S> out = Tensor<S>::uninit({n, c, 2 * h, 2 * w});
    for (int s = 0; s < n; ++s)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
          for (int x_ = 0; x_ < 2 * w; ++x_) out.at4(s, ch, y, x_) = vx.at4(s, ch, y / 2, x_ / 2);
    return unary(std::move(out), x, [this, n, c, h, w](Var x, Var o) {
      const S* g = gsrc(o);
      S* gx = gdst(x);
      for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < 2 * h; ++y)
            for (int x_ = 0; x_ < 2 * w; ++x_)
              gx[((static_cast<std::size_t>(s) * c + ch) * h + y / 2) * w + x_ / 2] +=
                  g[((static_cast<std::size_t>(s) * c + ch) * 2 * h + y) * 2 * w + x_];
    });
  }

  // integer-factor area downsample
  Var avgpool(Var x, int factor) {
    const Tensor<S>& vx = val(x);
    require(vx.shape.size() == 4, "avgpool expects 4-d input");
    require(factor >= 1, "avgpool factor must be >= 1");
    if (factor == 1) return x;
    const int n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    require(h % factor == 0 && w % factor == 0, "avgpool requires divisible spatial size");
    const int oh = h / factor, ow = w / factor;
    const S inv = S(1) / static_cast<S>(factor * factor);
    Tensor<S> out = Tensor<S>::uninit({n, c, oh, ow});
    for (int s = 0; s < n; ++s)
      for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            S acc = S(0);
            for (int dy = 0; dy < factor; ++dy)
              for (int dx = 0; dx < factor; ++dx) acc += vx.at4(s, ch, oy * factor + dy, ox * factor + dx);
            out.at4(s, ch, oy, ox) = acc * inv;
          }
    return unary(std::move(out), x, [this, n, c, oh, ow, factor, inv, h, w](Var x, Var o) {
      const S* g = gsrc(o);
      S* gx = gdst(x);
      for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const S go = g[((static_cast<std::size_t>(s) * c + ch) * oh + oy) * ow + ox] * inv;
              for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx)
                  gx[((static_cast<std::size_t>(s) * c + ch) * h + oy * factor + dy) * w + ox * factor + dx] += go;
            }
    });
  }

  // ---- reductions ----

  // {n,c,h,w} -> {n}: mean over all per-sample entries
  Var mean_chw(Var x) {
    const Tensor<S>& vx = val(x);
    require(vx.shape.size() == 4, "mean_chw expects 4-d input");
    const int n = vx.dim(0);
    const std::size_t per = vx.size() / static_cast<std::size_t>(n);
    Tensor<S> out = Tensor<S>::uninit({n});
    for (int s = 0; s < n; ++s) {
      S acc = S(0);
      const S* p = vx.ptr() + static_cast<std::size_t>(s) * per;
      for (std::size_t i = 0; i < per; ++i) acc += p[i];
      out[static_cast<std::size_t>(s)] = acc / static_cast<S>(per);
    }
    return unary(std::move(out), x, [this, n, per](Var x, Var o) {
      const S* g = gsrc(o);
      S* gx = gdst(x);
      const S inv = S(1) / static_cast<S>(per);
      for (int s = 0; s < n; ++s) {
        const S go = g[static_cast<std::size_t>(s)] * inv;
        S* p = gx + static_cast<std::size_t>(s) * per;
        for (std::size_t i = 0; i < per; ++i) p[i] += go;
      }
    });
  }

  // {n} -> {1}: mean over the batch, sample-sequential sum
  Var mean_vec(Var x) {
    const Tensor<S>& vx = val(x);
    require(vx.shape.size() == 1, "mean_vec expects a vector");
    const std::size_t n = vx.size();
    S acc = S(0);
    for (std::size_t i = 0; i < n; ++i) acc += vx[i];
    Tensor<S> out({1});
    out[0] = acc / static_cast<S>(n);
    return unary(std::move(out), x, [this, n](Var x, Var o) {
      const S go = gsrc(o)[0] / static_cast<S>(n);
      S* gx = gdst(x);
      for (std::size_t i = 0; i < n; ++i) gx[i] += go;
    });
  }

  // {n} -> {1}: (sum_i c_i x_i) / n  with constant coefficients
  Var weighted_mean(Var x, std::vector<S> coeff) {
    const Tensor<S>& vx = val(x);
    require(vx.shape.size() == 1 && vx.size() == coeff.size(), "weighted_mean: length mismatch");
    const std::size_t n = vx.size();
    S acc = S(0);
    for (std::size_t i = 0; i < n; ++i) acc += coeff[i] * vx[i];
    Tensor<S> out({1});
    out[0] = acc / static_cast<S>(n);
    auto keep = std::make_shared<std::vector<S>>(std::move(coeff));
    return unary(std::move(out), x, [this, keep, n](Var x, Var o) {
      const S go = gsrc(o)[0] / static_cast<S>(n);
      S* gx = gdst(x);
      for (std::size_t i = 0; i < n; ++i) gx[i] += (*keep)[i] * go;
    });
  }

  // {n} -> {1}: Euclidean norm
  Var l2_norm(Var x) {
    const Tensor<S>& vx = val(x);
    require(vx.shape.size() == 1, "l2_norm expects a vector");
    S acc = S(0);
    for (std::size_t i = 0; i < vx.size(); ++i) acc += vx[i] * vx[i];
    Tensor<S> out({1});
    out[0] = std::sqrt(acc);
    return unary(std::move(out), x, [this](Var x, Var o) {
      const S norm = val(o)[0];
      if (norm == S(0)) return;
      const S go = gsrc(o)[0] / norm;
      const S* vx = val(x).ptr();
      S* gx = gdst(x);
      for (std::size_t i = 0; i < val(x).size(); ++i) gx[i] += vx[i] * go;
    });
  }

  // scores {n} -> weights {n}: beta_i = n * softmax(s)_i, max-subtracted
  Var softmax_scale(Var s) {
    const Tensor<S>& vs = val(s);
    require(vs.shape.size() == 1 && vs.size() >= 2, "softmax_scale expects a vector of length >= 2");
    const std::size_t n = vs.size();
    S mx = vs[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, vs[i]);
    Tensor<S> out = Tensor<S>::uninit({static_cast<int>(n)});
    S z = S(0);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = std::exp(vs[i] - mx);
      z += out[i];
    }
    const S scale = static_cast<S>(n) / z;
    for (std::size_t i = 0; i < n; ++i) out[i] *= scale;
    return unary(std::move(out), s, [this, n](Var s, Var o) {
      const S* g = gsrc(o);
      const S* beta = val(o).ptr();
      S* gs = gdst(s);
      S dot = S(0);
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * beta[i];
      dot /= static_cast<S>(n);
      for (std::size_t i = 0; i < n; ++i) gs[i] += beta[i] * (g[i] - dot);
    });
  }

  // scores {k} -> weights {k} against a frozen normalizer from the full
  // logical batch: beta_i = n_logical * exp(s_i - max) / z
  Var softmax_fixed(Var s, S max_score, S z, int n_logical) {
    const Tensor<S>& vs = val(s);
    require(vs.shape.size() == 1, "softmax_fixed expects a vector");
    const S scale = static_cast<S>(n_logical) / z;
    Tensor<S> out = Tensor<S>::uninit(vs.shape);
    for (std::size_t i = 0; i < vs.size(); ++i) out[i] = std::exp(vs[i] - max_score) * scale;
    return unary(std::move(out), s, [this](Var s, Var o) {
      const S* g = gsrc(o);
      const S* beta = val(o).ptr();
      S* gs = gdst(s);
      for (std::size_t i = 0; i < val(s).size(); ++i) gs[i] += beta[i] * g[i];
    });
  }

  // total = sum_k coeff_k * term_k over scalar vars, left to right
  Var sum_scaled(const std::vector<Var>& terms, const std::vector<S>& coeff) {
    require(terms.size() == coeff.size() && !terms.empty(), "sum_scaled: length mismatch");
    S acc = S(0);
    for (std::size_t k = 0; k < terms.size(); ++k) {
      require(val(terms[k]).size() == 1, "sum_scaled expects scalar terms");
      acc += coeff[k] * val(terms[k])[0];
    }
    Tensor<S> out({1});
    out[0] = acc;
    bool any = false;
    for (Var t : terms) any = any || node(t).needs_grad;
    Var o = push(std::move(out), grad_enabled_ && any);
    if (node(o).needs_grad) {
      auto ts = terms;
      auto cs = coeff;
      node(o).back = [this, ts, cs, o]() {
        const S go = gsrc(o)[0];
        for (std::size_t k = 0; k < ts.size(); ++k)
          if (wants(ts[k])) gdst(ts[k])[0] += cs[k] * go;
      };
    }
    return o;
  }

 private:
  struct Node {
    Tensor<S> val;
    Tensor<S> grad;
    ParamVector<S>* pv = nullptr;
    std::size_t pv_offset = 0;
    bool needs_grad = false;
    std::function<void()> back;
  };

  // inclusive ox range whose input index ox*stride + kx - pad is in bounds
  static void ox_bounds(int kx, int pad, int stride, int in_w, int out_w, int& lo, int& hi) {
    const int shift = pad - kx;
    lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
    const int num = in_w - 1 - kx + pad;
    hi = num < 0 ? -1 : std::min(out_w - 1, num / stride);
  }

  static int mirror(int i, int lim) { return i < 0 ? -i : (i >= lim ? 2 * lim - 2 - i : i); }

  using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapRM = Eigen::Map<MatRM>;
  using CMapRM = Eigen::Map<const MatRM>;

  // one sample -> (ic*kh*kw) x (oh*ow) patch matrix, row-major
  static void im2col(S* __restrict buf, const S* __restrict xplane, int ic, int h, int ww, int kh, int kw, int oh,
                     int ow, int stride, int pad, PadMode mode) {
    const int P = oh * ow;
    S* dst = buf;
    for (int c = 0; c < ic; ++c) {
      const S* chan = xplane + static_cast<std::size_t>(c) * h * ww;
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          int lo, hi;
          ox_bounds(kx, pad, stride, ww, ow, lo, hi);
          const int base = kx - pad;
          for (int oy = 0; oy < oh; ++oy) {
            S* __restrict row = dst + static_cast<std::size_t>(oy) * ow;
            int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) {
              if (mode == PadMode::zero) {
                for (int ox = 0; ox < ow; ++ox) row[ox] = S(0);
                continue;
              }
              iy = mirror(iy, h);
            }
            const S* __restrict xrow = chan + static_cast<std::size_t>(iy) * ww;
            for (int ox = 0; ox < lo; ++ox)
              row[ox] = mode == PadMode::zero ? S(0) : xrow[mirror(ox * stride + base, ww)];
            if (stride == 1) {
              const S* src = xrow + lo + base;
              for (int ox = lo; ox <= hi; ++ox) row[ox] = src[ox - lo];
            } else {
              for (int ox = lo; ox <= hi; ++ox) row[ox] = xrow[ox * stride + base];
            }
            for (int ox = hi + 1; ox < ow; ++ox)
              row[ox] = mode == PadMode::zero ? S(0) : xrow[mirror(ox * stride + base, ww)];
          }
          dst += P;
        }
    }
  }

  // scatter-add of a patch-gradient matrix back onto one input sample
  static void col2im_add(const S* __restrict buf, S* __restrict gxplane, int ic, int h, int ww, int kh, int kw,
                         int oh, int ow, int stride, int pad, PadMode mode) {
    const int P = oh * ow;
    const S* src_k = buf;
    for (int c = 0; c < ic; ++c) {
      S* chan = gxplane + static_cast<std::size_t>(c) * h * ww;
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          int lo, hi;
          ox_bounds(kx, pad, stride, ww, ow, lo, hi);
          const int base = kx - pad;
          for (int oy = 0; oy < oh; ++oy) {
            const S* __restrict row = src_k + static_cast<std::size_t>(oy) * ow;
            int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) {
              if (mode == PadMode::zero) continue;
              iy = mirror(iy, h);
            }
            S* __restrict gxrow = chan + static_cast<std::size_t>(iy) * ww;
            if (mode == PadMode::reflect)
              for (int ox = 0; ox < lo; ++ox) gxrow[mirror(ox * stride + base, ww)] += row[ox];
            if (stride == 1) {
              S* dst = gxrow + lo + base;
              for (int ox = lo; ox <= hi; ++ox) dst[ox - lo] += row[ox];
            } else {
              for (int ox = lo; ox <= hi; ++ox) gxrow[ox * stride + base] += row[ox];
            }
            if (mode == PadMode::reflect)
              for (int ox = hi + 1; ox < ow; ++ox) gxrow[mirror(ox * stride + base, ww)] += row[ox];
          }
          src_k += P;
        }
    }
  }

  static void conv_forward(S* out, const S* px, const S* pw, const S* pb, int n, int ic, int h, int ww, int oc,
                           int kh, int kw, int oh, int ow, int stride, int pad, PadMode mode) {
    const int K = ic * kh * kw;
    const int P = oh * ow;
    typename Tensor<S>::DataVec col(static_cast<std::size_t>(K) * P);
    CMapRM wmap(pw, oc, K);
    for (int s = 0; s < n; ++s) {
      im2col(col.data(), px + static_cast<std::size_t>(s) * ic * h * ww, ic, h, ww, kh, kw, oh, ow, stride, pad,
             mode);
      CMapRM cmap(col.data(), K, P);
      MapRM omap(out + static_cast<std::size_t>(s) * oc * P, oc, P);
      omap.noalias() = wmap * cmap;
      for (int o = 0; o < oc; ++o) omap.row(o).array() += pb[o];
    }
  }

  static void conv_backward(const S* g, const S* px, const S* pw, S* gx, S* gw, S* gb, int n, int ic, int h, int ww,
                            int oc, int kh, int kw, int oh, int ow, int stride, int pad, PadMode mode) {
    const int K = ic * kh * kw;
    const int P = oh * ow;
    typename Tensor<S>::DataVec col((gw != nullptr) ? static_cast<std::size_t>(K) * P : 0);
    typename Tensor<S>::DataVec dcol((gx != nullptr) ? static_cast<std::size_t>(K) * P : 0);
    CMapRM wmap(pw, oc, K);
    for (int s = 0; s < n; ++s) {
      CMapRM gmap(g + static_cast<std::size_t>(s) * oc * P, oc, P);
      if (gb != nullptr)
        for (int o = 0; o < oc; ++o) {
          const S* __restrict grow = g + (static_cast<std::size_t>(s) * oc + o) * P;
          S acc = S(0);
          for (int p = 0; p < P; ++p) acc += grow[p];
          gb[o] += acc;
        }
      if (gw != nullptr) {
        im2col(col.data(), px + static_cast<std::size_t>(s) * ic * h * ww, ic, h, ww, kh, kw, oh, ow, stride, pad,
               mode);
        CMapRM cmap(col.data(), K, P);
        MapRM gwmap(gw, oc, K);
        gwmap.noalias() += gmap * cmap.transpose();
      }
      if (gx != nullptr) {
        MapRM dmap(dcol.data(), K, P);
        dmap.noalias() = wmap.transpose() * gmap;
        col2im_add(dcol.data(), gx + static_cast<std::size_t>(s) * ic * h * ww, ic, h, ww, kh, kw, oh, ow, stride,
                   pad, mode);
      }
    }
  }

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool consumed_ = false;

  int next_id() const { return static_cast<int>(nodes_.size()); }
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }

  Var push(Tensor<S> v, bool needs_grad) {
    Node n;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool wants(Var v) { return node(v).needs_grad; }

  // gradient buffer of a node (params accumulate straight into the vector)
  S* gdst(Var v) {
    Node& n = node(v);
    if (n.pv != nullptr) return n.pv->grads.data() + n.pv_offset;
    return n.grad.ptr();
  }
  const S* gsrc(Var v) { return gdst(v); }

  void axpy(Var dst, Var src, S a) {
    if (!wants(dst)) return;
    const S* g = gsrc(src);
    S* d = gdst(dst);
    for (std::size_t i = 0; i < node(dst).val.size(); ++i) d[i] += a * g[i];
  }

  template <class F>
  Var unary(Tensor<S> out, Var a, F&& bw) {
    const bool ng = grad_enabled_ && node(a).needs_grad;
    Var o = push(std::move(out), ng);
    if (ng) node(o).back = [this, a, o, bw = std::forward<F>(bw)]() { bw(a, o); };
    return o;
  }

  template <class F>
  Var unary_or_binary(Tensor<S> out, Var a, Var b, F&& bw) {
    const bool ng = grad_enabled_ && (node(a).needs_grad || node(b).needs_grad);
    Var o = push(std::move(out), ng);
    if (ng) node(o).back = [this, a, b, o, bw = std::forward<F>(bw)]() { bw(a, b, o); };
    return o;
  }

  template <class F>
  Var nary(Tensor<S> out, const std::vector<Var>& ins, F&& bw) {
    bool any = false;
    for (Var v : ins) any = any || node(v).needs_grad;
    const bool ng = grad_enabled_ && any;
    Var o = push(std::move(out), ng);
    if (ng) node(o).back = [this, o, bw = std::forward<F>(bw)]() { bw(o); };
    return o;
  }
};

}  // namespace irwgan
