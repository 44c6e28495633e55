#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "irwgan/autodiff.hpp"
#include "irwgan/rng.hpp"

namespace irwgan {

enum class NetKind { generator, discriminator, importance, test_mlp };

inline std::string to_string(NetKind k) {
  switch (k) {
    case NetKind::generator: return "generator";
    case NetKind::discriminator: return "discriminator";
    case NetKind::importance: return "importance-backbone";
    default: return "test-mlp";
  }
}

// Sizing for one network. Generators follow the residual encoder/decoder
// lineage: reflection padding, instance norm, nearest-neighbor upsampling,
// tanh output. The importance backbone is a stride-2 conv stack over
// area-downsampled input feeding a zero-initialized linear head, so initial
// scores are equal and initial weights exactly uniform.
struct NetworkSpec {
  NetKind kind = NetKind::generator;
  int in_channels = 3;
  int out_channels = 3;
  int base_width = 64;
  int n_downsample = 2;    // generator
  int n_resblocks = 9;     // generator
  int n_layers = 3;        // importance conv layers
  int input_resolution = 256;
  int downsample_to = 64;  // importance pre-pool target
  int mlp_in = 4, mlp_hidden = 16, mlp_depth = 2, mlp_out = 1;

  static NetworkSpec generator(int channels, int base, int n_down, int n_res) {
    NetworkSpec s;
    s.kind = NetKind::generator;
    s.in_channels = s.out_channels = channels;
    s.base_width = base;
    s.n_downsample = n_down;
    s.n_resblocks = n_res;
    return s;
  }
  static NetworkSpec importance(int channels, int base, int layers, int resolution, int downsample_to) {
    NetworkSpec s;
    s.kind = NetKind::importance;
    s.in_channels = channels;
    s.out_channels = 1;
    s.base_width = base;
    s.n_layers = layers;
    s.input_resolution = resolution;
    s.downsample_to = downsample_to;
    return s;
  }
  static NetworkSpec test_mlp(int in, int hidden, int depth, int out) {
    NetworkSpec s;
    s.kind = NetKind::test_mlp;
    s.mlp_in = in;
    s.mlp_hidden = hidden;
    s.mlp_depth = depth;
    s.mlp_out = out;
    return s;
  }
};

inline nlohmann::json to_json(const NetworkSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"in_channels", s.in_channels},
          {"out_channels", s.out_channels},
          {"base_width", s.base_width},
          {"n_downsample", s.n_downsample},
          {"n_resblocks", s.n_resblocks},
          {"n_layers", s.n_layers},
          {"input_resolution", s.input_resolution},
          {"downsample_to", s.downsample_to}};
}

inline nlohmann::json net_conventions() {
  return {{"norm", "instance"},
          {"generator_padding", "reflect"},
          {"upsampling", "nearest+conv"},
          {"discriminator_padding", "zero"},
          {"weight_init", "gauss std 0.02"},
          {"importance_head_init", "zeros"}};
}

namespace detail {

enum class InitKind { gauss, zero };

struct ConvDesc {
  std::size_t w_off = 0, b_off = 0;
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;
  PadMode mode = PadMode::zero;
};

struct LinearDesc {
  std::size_t w_off = 0, b_off = 0;
  int in_dim = 0, out_dim = 0;
  InitKind init = InitKind::gauss;
};

struct ParamLayout {
  std::vector<ConvDesc> convs;
  std::vector<LinearDesc> linears;
  std::size_t total = 0;

  ConvDesc& add_conv(int in_ch, int out_ch, int k, int stride, int pad, PadMode mode) {
    ConvDesc d{0, 0, in_ch, out_ch, k, stride, pad, mode};
    d.w_off = total;
    total += static_cast<std::size_t>(out_ch) * in_ch * k * k;
    d.b_off = total;
    total += static_cast<std::size_t>(out_ch);
    convs.push_back(d);
    return convs.back();
  }

  LinearDesc& add_linear(int in_dim, int out_dim, InitKind init) {
    LinearDesc d{0, 0, in_dim, out_dim, init};
    d.w_off = total;
    total += static_cast<std::size_t>(out_dim) * in_dim;
    d.b_off = total;
    total += static_cast<std::size_t>(out_dim);
    linears.push_back(d);
    return linears.back();
  }
};

// Weights ~ N(0, 0.02^2) drawn in allocation order, biases zero.
template <class S>
void init_params(const ParamLayout& layout, ParamVector<S>& params, Rng& rng) {
  std::fill(params.values.begin(), params.values.end(), S(0));
  for (const auto& c : layout.convs) {
    const std::size_t nw = static_cast<std::size_t>(c.out_ch) * c.in_ch * c.kernel * c.kernel;
    for (std::size_t i = 0; i < nw; ++i) params.values[c.w_off + i] = static_cast<S>(0.02 * rng.normal());
  }
  for (const auto& l : layout.linears) {
    if (l.init == InitKind::zero) continue;
    const std::size_t nw = static_cast<std::size_t>(l.out_dim) * l.in_dim;
    for (std::size_t i = 0; i < nw; ++i) params.values[l.w_off + i] = static_cast<S>(0.02 * rng.normal());
  }
}

template <class S>
typename Tape<S>::Var apply_conv(Tape<S>& t, typename Tape<S>::Var x, ParamVector<S>& pv, const ConvDesc& c,
                                 bool frozen) {
  auto w = t.param(pv, c.w_off, {c.out_ch, c.in_ch, c.kernel, c.kernel}, frozen);
  auto b = t.param(pv, c.b_off, {c.out_ch}, frozen);
  return t.conv2d(x, w, b, c.stride, c.pad, c.mode);
}

inline int width_at(int base, int i) { return base * (1 << std::min(i, 3)); }

}  // namespace detail

inline constexpr double kNormEps = 1e-5;

// Generator / importance backbone / test MLP: spec + flat parameters.
// Forward records onto the caller's tape; `frozen` routes the parameters
// through constant leaves so no gradient reaches this network.
template <class S>
class Network {
 public:
  using Var = typename Tape<S>::Var;

  Network() = default;
  Network(std::string name, const NetworkSpec& spec) : name_(std::move(name)), spec_(spec) { build(); }

  const std::string& name() const { return name_; }
  const NetworkSpec& spec() const { return spec_; }
  ParamVector<S>& params() { return params_; }
  const ParamVector<S>& params() const { return params_; }

  void init(std::uint64_t seed) {
    Rng rng(seed, name_);
    detail::init_params(layout_, params_, rng);
  }

  Var forward(Tape<S>& t, Var x, bool frozen = false) {
    switch (spec_.kind) {
      case NetKind::generator: return generator_forward(t, x, frozen);
      case NetKind::importance: return importance_forward(t, x, frozen);
      case NetKind::test_mlp: return mlp_forward(t, x, frozen);
      default: throw Error("discriminators live in DiscriminatorPair");
    }
  }

  Tensor<S> eval(const Tensor<S>& input) {
    Tape<S> t(false);
    return t.val(forward(t, t.constant(input), true));
  }

 private:
  std::string name_;
  NetworkSpec spec_;
  detail::ParamLayout layout_;
  ParamVector<S> params_;
  int pool_factor_ = 1;

  void build() {
    switch (spec_.kind) {
      case NetKind::generator: {
        const int b = spec_.base_width;
        layout_.add_conv(spec_.in_channels, b, 7, 1, 3, PadMode::reflect);
        int ch = b;
        for (int i = 0; i < spec_.n_downsample; ++i) {
          layout_.add_conv(ch, ch * 2, 3, 2, 1, PadMode::reflect);
          ch *= 2;
        }
        for (int i = 0; i < spec_.n_resblocks; ++i) {
          layout_.add_conv(ch, ch, 3, 1, 1, PadMode::reflect);
          layout_.add_conv(ch, ch, 3, 1, 1, PadMode::reflect);
        }
        for (int i = 0; i < spec_.n_downsample; ++i) {
          layout_.add_conv(ch, ch / 2, 3, 1, 1, PadMode::reflect);
          ch /= 2;
        }
        layout_.add_conv(ch, spec_.out_channels, 7, 1, 3, PadMode::reflect);
        break;
      }
      case NetKind::importance: {
        require(spec_.input_resolution % spec_.downsample_to == 0,
                "importance downsample target must divide input resolution");
        pool_factor_ = spec_.input_resolution / spec_.downsample_to;
        int res = spec_.downsample_to;
        int ch = spec_.in_channels;
        for (int i = 0; i < spec_.n_layers; ++i) {
          const int oc = detail::width_at(spec_.base_width, i);
          layout_.add_conv(ch, oc, 4, 2, 1, PadMode::zero);
          ch = oc;
          res /= 2;
          require(res >= 1, "importance network downsamples below one pixel");
        }
        layout_.add_linear(ch * res * res, 1, detail::InitKind::zero);
        break;
      }
      case NetKind::test_mlp: {
        int d = spec_.mlp_in;
        for (int i = 0; i + 1 < spec_.mlp_depth; ++i) {
          layout_.add_linear(d, spec_.mlp_hidden, detail::InitKind::gauss);
          d = spec_.mlp_hidden;
        }
        layout_.add_linear(d, spec_.mlp_out, detail::InitKind::gauss);
        break;
      }
      default: throw Error("NetworkSpec kind not supported by Network");
    }
    params_.resize(layout_.total);
  }

  Var generator_forward(Tape<S>& t, Var x, bool frozen) {
    std::size_t ci = 0;
    Var h = detail::apply_conv(t, x, params_, layout_.convs[ci++], frozen);
    h = t.instance_norm(h, S(kNormEps));
    h = t.relu(h);
    for (int i = 0; i < spec_.n_downsample; ++i) {
      h = detail::apply_conv(t, h, params_, layout_.convs[ci++], frozen);
      h = t.instance_norm(h, S(kNormEps));
      h = t.relu(h);
    }
    for (int i = 0; i < spec_.n_resblocks; ++i) {
      Var r = detail::apply_conv(t, h, params_, layout_.convs[ci++], frozen);
      r = t.instance_norm(r, S(kNormEps));
      r = t.relu(r);
      r = detail::apply_conv(t, r, params_, layout_.convs[ci++], frozen);
      r = t.instance_norm(r, S(kNormEps));
      h = t.add(h, r);
    }
    for (int i = 0; i < spec_.n_downsample; ++i) {
      h = t.upsample2(h);
      h = detail::apply_conv(t, h, params_, layout_.convs[ci++], frozen);
      h = t.instance_norm(h, S(kNormEps));
      h = t.relu(h);
    }
    h = detail::apply_conv(t, h, params_, layout_.convs[ci++], frozen);
    return t.tanh(h);
  }

  Var importance_forward(Tape<S>& t, Var x, bool frozen) {
    Var h = t.avgpool(x, pool_factor_);
    for (const auto& c : layout_.convs) {
      h = detail::apply_conv(t, h, params_, c, frozen);
      h = t.leaky_relu(h, S(0.2));
    }
    const auto& shape = t.val(h).shape;
    const int n = shape[0];
    const int flat = shape[1] * shape[2] * shape[3];
    h = t.reshape(h, {n, flat});
    const auto& l = layout_.linears[0];
    auto w = t.param(params_, l.w_off, {l.out_dim, l.in_dim}, frozen);
    auto b = t.param(params_, l.b_off, {l.out_dim}, frozen);
    h = t.linear(h, w, b);
    return t.reshape(h, {n});
  }

  Var mlp_forward(Tape<S>& t, Var x, bool frozen) {
    Var h = x;
    for (std::size_t i = 0; i < layout_.linears.size(); ++i) {
      const auto& l = layout_.linears[i];
      auto w = t.param(params_, l.w_off, {l.out_dim, l.in_dim}, frozen);
      auto b = t.param(params_, l.b_off, {l.out_dim}, frozen);
      h = t.linear(h, w, b);
      if (i + 1 < layout_.linears.size()) h = t.tanh(h);
    }
    return h;
  }
};

// The global/local discriminator branches of one mapping direction, held in
// a single ParamVector with a single optimizer state. Each branch is a
// stack of stride-2 convs (instance norm except the first, leaky relu)
// followed by a 1-channel score map reduced to one scalar per sample.
template <class S>
class DiscriminatorPair {
 public:
  using Var = typename Tape<S>::Var;

  DiscriminatorPair() = default;
  DiscriminatorPair(std::string name, int channels, int base, std::vector<int> layers)
      : name_(std::move(name)), channels_(channels), base_(base), layers_(std::move(layers)) {
    require(!layers_.empty(), "discriminator pair needs at least one branch");
    for (int branch_layers : layers_) {
      int ch = channels_;
      for (int i = 0; i < branch_layers; ++i) {
        const int oc = detail::width_at(base_, i);
        layout_.add_conv(ch, oc, 4, 2, 1, PadMode::zero);
        ch = oc;
      }
      layout_.add_conv(ch, 1, 4, 1, 1, PadMode::zero);
    }
    params_.resize(layout_.total);
  }

  const std::string& name() const { return name_; }
  const std::vector<int>& branch_layers() const { return layers_; }
  ParamVector<S>& params() { return params_; }
  const ParamVector<S>& params() const { return params_; }

  void init(std::uint64_t seed) {
    Rng rng(seed, name_);
    detail::init_params(layout_, params_, rng);
  }

  // one score vector {n} per branch
  std::vector<Var> discriminate(Tape<S>& t, Var x, bool frozen = false) {
    std::vector<Var> scores;
    std::size_t ci = 0;
    for (int branch_layers : layers_) {
      Var h = x;
      for (int li = 0; li <= branch_layers; ++li) {
        h = detail::apply_conv(t, h, params_, layout_.convs[ci++], frozen);
        if (li < branch_layers) {
          if (li > 0) h = t.instance_norm(h, S(kNormEps));
          h = t.leaky_relu(h, S(0.2));
        }
      }
      scores.push_back(t.mean_chw(h));
    }
    return scores;
  }

  std::vector<Tensor<S>> eval_scores(const Tensor<S>& input) {
    Tape<S> t(false);
    auto x = t.constant(input);
    std::vector<Tensor<S>> out;
    for (auto v : discriminate(t, x, true)) out.push_back(t.val(v));
    return out;
  }

  nlohmann::json spec_json() const {
    return {{"kind", "discriminator"}, {"in_channels", channels_}, {"base_width", base_}, {"branch_layers", layers_}};
  }

 private:
  std::string name_;
  int channels_ = 1;
  int base_ = 64;
  std::vector<int> layers_;
  detail::ParamLayout layout_;
  ParamVector<S> params_;
};

}  // namespace irwgan
