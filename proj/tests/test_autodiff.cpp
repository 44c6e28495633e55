#include <catch2/catch_amalgamated.hpp>

#include <functional>

#include "irwgan/autodiff.hpp"
#include "irwgan/rng.hpp"

using namespace irwgan;
using Tp = Tape<double>;
using Var = Tp::Var;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

// finite-difference check of d(loss)/d(input) for a tape-built scalar loss
double fd_max_rel_err(const Tensor<double>& input, const std::function<Var(Tp&, Var)>& build, double h = 1e-6) {
  Tp t;
  Var x = t.leaf(input);
  Var loss = build(t, x);
  t.backward(loss);
  Tensor<double> analytic = t.grad_of(x);

  double worst = 0.0;
  Tensor<double> probe = input;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    Tp tp;
    const double fp = tp.val(build(tp, tp.leaf(probe)))[0];
    probe[i] = saved - h;
    Tp tm;
    const double fm = tm.val(build(tm, tm.leaf(probe)))[0];
    probe[i] = saved;
    const double numeric = (fp - fm) / (2 * h);
    const double rel = std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, rel);
  }
  return worst;
}

Var sum_all(Tp& t, Var x) {
  const auto& shape = t.val(x).shape;
  if (shape.size() == 4) x = t.mean_chw(x);
  if (t.val(x).shape.size() == 2) x = t.reshape(x, {static_cast<int>(t.val(x).size())});
  Var m = t.mean_vec(x);
  return t.square(m);  // make the loss nonlinear so grads are informative
}

}  // namespace

TEST_CASE("scalar square gradient: L = theta^2 at 3 gives 6") {
  Tp t;
  Var x = t.leaf(Tensor<double>({1}, {3.0}));
  Var loss = t.square(x);
  t.backward(loss);
  REQUIRE(t.grad_of(x)[0] == 6.0);
}

TEST_CASE("two backward passes accumulate to exactly twice one pass") {
  ParamVector<double> pv;
  pv.resize(3);
  pv.values = {0.5, -1.25, 2.0};

  auto run_once = [&pv]() {
    Tp t;
    Var w = t.param(pv, 0, {3});
    Var s = t.mean_vec(t.square(w));
    t.backward(s);
  };
  run_once();
  std::vector<double> once = pv.grads;
  run_once();
  for (std::size_t i = 0; i < once.size(); ++i) REQUIRE(pv.grads[i] == 2.0 * once[i]);
}

TEST_CASE("backward twice on one record throws") {
  Tp t;
  Var x = t.leaf(Tensor<double>({1}, {1.0}));
  Var loss = t.square(x);
  t.backward(loss);
  REQUIRE_THROWS_AS(t.backward(loss), Error);
}

TEST_CASE("forward is pure: identical values across repeated evaluation") {
  Rng rng(5);
  Tensor<double> in = random_tensor({2, 3, 6, 6}, rng);
  Tensor<double> w = random_tensor({4, 3, 3, 3}, rng, 0.1);
  Tensor<double> b = random_tensor({4}, rng, 0.1);
  auto run = [&]() {
    Tp t(false);
    Var out = t.conv2d(t.constant(in), t.constant(w), t.constant(b), 1, 1, PadMode::reflect);
    return t.val(out).data;
  };
  REQUIRE(run() == run());
}

TEST_CASE("elementwise and reduction gradients match finite differences") {
  Rng rng(7);
  Tensor<double> in = random_tensor({2, 2, 4, 4}, rng);

  SECTION("tanh") {
    REQUIRE(fd_max_rel_err(in, [](Tp& t, Var x) { return sum_all(t, t.tanh(x)); }) < 1e-7);
  }
  SECTION("leaky relu") {
    REQUIRE(fd_max_rel_err(in, [](Tp& t, Var x) { return sum_all(t, t.leaky_relu(x, 0.2)); }) < 1e-6);
  }
  SECTION("abs") {
    REQUIRE(fd_max_rel_err(in, [](Tp& t, Var x) { return sum_all(t, t.abs(x)); }) < 1e-6);
  }
  SECTION("square") {
    REQUIRE(fd_max_rel_err(in, [](Tp& t, Var x) { return sum_all(t, t.square(x)); }) < 1e-7);
  }
  SECTION("affine") {
    REQUIRE(fd_max_rel_err(in, [](Tp& t, Var x) { return sum_all(t, t.affine(x, -2.5, 0.75)); }) < 1e-7);
  }
  SECTION("instance norm") {
    REQUIRE(fd_max_rel_err(in, [](Tp& t, Var x) { return sum_all(t, t.instance_norm(x, 1e-5)); }) < 1e-6);
  }
  SECTION("upsample") {
    REQUIRE(fd_max_rel_err(in, [](Tp& t, Var x) { return sum_all(t, t.upsample2(x)); }) < 1e-7);
  }
  SECTION("avgpool") {
    REQUIRE(fd_max_rel_err(in, [](Tp& t, Var x) { return sum_all(t, t.avgpool(x, 2)); }) < 1e-7);
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(9);
  Tensor<double> x = random_tensor({2, 2, 5, 5}, rng);
  Tensor<double> w = random_tensor({3, 2, 3, 3}, rng, 0.3);
  Tensor<double> b = random_tensor({3}, rng, 0.3);

  for (PadMode mode : {PadMode::zero, PadMode::reflect}) {
    for (int stride : {1, 2}) {
      auto wrt_x = [&](Tp& t, Var v) {
        return sum_all(t, t.conv2d(v, t.constant(w), t.constant(b), stride, 1, mode));
      };
      REQUIRE(fd_max_rel_err(x, wrt_x) < 1e-6);
      auto wrt_w = [&](Tp& t, Var v) {
        return sum_all(t, t.conv2d(t.constant(x), v, t.constant(b), stride, 1, mode));
      };
      REQUIRE(fd_max_rel_err(w, wrt_w) < 1e-6);
      auto wrt_b = [&](Tp& t, Var v) {
        return sum_all(t, t.conv2d(t.constant(x), t.constant(w), v, stride, 1, mode));
      };
      REQUIRE(fd_max_rel_err(b, wrt_b) < 1e-6);
    }
  }
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(13);
  Tensor<double> x = random_tensor({3, 4}, rng);
  Tensor<double> w = random_tensor({2, 4}, rng, 0.5);
  Tensor<double> b = random_tensor({2}, rng, 0.5);
  auto wrt_x = [&](Tp& t, Var v) { return sum_all(t, t.linear(v, t.constant(w), t.constant(b))); };
  REQUIRE(fd_max_rel_err(x, wrt_x) < 1e-7);
  auto wrt_w = [&](Tp& t, Var v) { return sum_all(t, t.linear(t.constant(x), v, t.constant(b))); };
  REQUIRE(fd_max_rel_err(w, wrt_w) < 1e-7);
}

TEST_CASE("softmax_scale gradient matches finite differences") {
  Rng rng(17);
  Tensor<double> s = random_tensor({6}, rng);
  auto build = [](Tp& t, Var v) {
    Var beta = t.softmax_scale(v);
    // weight the entries unevenly so the Jacobian cross-terms matter
    std::vector<double> c = {0.5, -1.0, 2.0, 0.25, -0.75, 1.5};
    return t.weighted_mean(beta, c);
  };
  REQUIRE(fd_max_rel_err(s, build) < 1e-7);
}

TEST_CASE("softmax_fixed propagates only the diagonal") {
  Rng rng(19);
  Tensor<double> s = random_tensor({4}, rng);
  double mx = *std::max_element(s.data.begin(), s.data.end());
  double z = 0;
  for (double v : s.data) z += std::exp(v - mx);
  auto build = [&](Tp& t, Var v) {
    Var beta = t.softmax_fixed(v, mx, z, 4);
    std::vector<double> c = {1.0, 2.0, 3.0, 4.0};
    return t.weighted_mean(beta, c);
  };
  // the analytic gradient of the frozen-normalizer map is its own function's
  // gradient, so finite differences of the same map must agree
  REQUIRE(fd_max_rel_err(s, build) < 1e-7);
}

TEST_CASE("l2_norm gradient matches finite differences") {
  Rng rng(23);
  Tensor<double> x = random_tensor({5}, rng);
  auto build = [](Tp& t, Var v) { return t.l2_norm(v); };
  REQUIRE(fd_max_rel_err(x, build) < 1e-7);
}

TEST_CASE("sum_scaled combines scalar terms with coefficients") {
  Tp t;
  Var a = t.leaf(Tensor<double>({1}, {2.0}));
  Var b = t.leaf(Tensor<double>({1}, {3.0}));
  Var sq_a = t.square(a);
  Var total = t.sum_scaled({sq_a, b}, {1.0, 10.0});
  REQUIRE(t.val(total)[0] == 34.0);
  t.backward(total);
  REQUIRE(t.grad_of(a)[0] == 4.0);
  REQUIRE(t.grad_of(b)[0] == 10.0);
}

TEST_CASE("gradient accumulation over micro-batches is bit-exact for a shared parameter") {
  Rng rng(29);
  Tensor<double> x = random_tensor({4, 2, 4, 4}, rng);
  ParamVector<double> pv;
  pv.resize(2 * 2 * 3 * 3 + 2);

  for (std::size_t i = 0; i < pv.size(); ++i) pv.values[i] = 0.1 * rng.normal();

  auto loss_on = [&pv](const Tensor<double>& block, double weight) {
    Tp t;
    Var w = t.param(pv, 0, {2, 2, 3, 3});
    Var b = t.param(pv, 2 * 2 * 3 * 3, {2});
    Var h = t.conv2d(t.constant(block), w, b, 1, 1, PadMode::zero);
    Var per = t.mean_chw(t.square(h));
    Var loss = t.weighted_mean(per, std::vector<double>(static_cast<std::size_t>(block.dim(0)), weight));
    t.backward(loss);
  };

  // full batch in one record
  pv.zero_grads();
  loss_on(x, 1.0);
  std::vector<double> full = pv.grads;

  // two records of two samples each; per-sample mean coefficients keep the
  // total loss identical: (1/4) sum == (1/2) sum over half with weight 1/2
  auto slice = [&x](int from, int count) {
    Tensor<double> out({count, 2, 4, 4});
    std::copy(x.data.begin() + from * 32, x.data.begin() + (from + count) * 32, out.data.begin());
    return out;
  };
  pv.zero_grads();
  loss_on(slice(0, 2), 0.5);
  loss_on(slice(2, 2), 0.5);
  REQUIRE(pv.grads == full);
}
