#include <catch2/catch_amalgamated.hpp>

#include "irwgan/gradcheck.hpp"
#include "irwgan/nets.hpp"
#include "irwgan/optim.hpp"

using namespace irwgan;

TEST_CASE("adam leaves parameters unchanged when grads are zero") {
  ParamVector<double> p;
  p.resize(4);
  p.values = {1.0, -2.0, 3.0, 0.5};
  AdamState st;
  st.learning_rate = 0.1;
  auto before = p.values;
  adam_step(p, st, "net");
  REQUIRE(p.values == before);
  REQUIRE(st.step == 1);
}

TEST_CASE("first adam step on unit gradient moves by about -lr") {
  ParamVector<double> p;
  p.resize(1);
  p.values = {0.0};
  p.grads = {1.0};
  AdamState st;
  st.learning_rate = 0.1;
  adam_step(p, st);

  // hand-evaluated recurrence for step 1
  const double m = 0.1 * 1.0;           // (1-b1) g
  const double v = 0.001 * 1.0;         // (1-b2) g^2
  const double mhat = m / 0.1;          // 1
  const double vhat = v / 0.001;        // 1
  const double expected = -0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  REQUIRE(p.values[0] == expected);
  REQUIRE(p.values[0] == Catch::Approx(-0.1).margin(1e-8));
  REQUIRE(p.grads[0] == 0.0);  // zeroed after the update
}

TEST_CASE("adam is deterministic across repeated runs") {
  auto run = []() {
    ParamVector<double> p;
    p.resize(3);
    p.values = {0.2, -0.4, 0.6};
    AdamState st;
    st.learning_rate = 0.01;
    for (int i = 0; i < 25; ++i) {
      for (std::size_t k = 0; k < p.size(); ++k) p.grads[k] = 0.3 * p.values[k] - 0.1;
      adam_step(p, st);
    }
    return p.values;
  };
  REQUIRE(run() == run());
}

TEST_CASE("non-finite gradient reports divergence naming the network") {
  ParamVector<double> p;
  p.resize(2);
  p.grads = {1.0, std::numeric_limits<double>::quiet_NaN()};
  AdamState st;
  try {
    adam_step(p, st, "D_Y");
    FAIL("expected divergence error");
  } catch (const Error& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("divergence detected") != std::string::npos);
    REQUIRE(msg.find("D_Y") != std::string::npos);
  }
}

TEST_CASE("lr schedule holds flat then decays linearly to zero past the last epoch") {
  ExperimentConfig c;
  c.learning_rate = 1e-4;
  c.epochs = 100;
  c.decay_start_epoch = 50;
  REQUIRE(lr_schedule(25, c) == 1e-4);
  REQUIRE(lr_schedule(50, c) == 1e-4);
  REQUIRE(lr_schedule(75, c) == Catch::Approx(1e-4 * 26.0 / 51.0).epsilon(1e-12));
  REQUIRE(lr_schedule(100, c) > 0.0);
  REQUIRE(lr_schedule(100, c) == Catch::Approx(1e-4 / 51.0).epsilon(1e-12));
  REQUIRE(lr_schedule(101, c) == 0.0);
}

TEST_CASE("grad_check on a quadratic is exact to rounding") {
  ParamVector<double> p;
  p.resize(5);
  p.values = {0.3, -0.7, 1.1, 0.0, 2.0};
  // L = sum a_i x_i^2 with a = 1..5 -> dL/dx_i = 2 a_i x_i
  auto loss = [](const ParamVector<double>& q) {
    double acc = 0;
    for (std::size_t i = 0; i < q.size(); ++i) acc += (static_cast<double>(i) + 1) * q.values[i] * q.values[i];
    return acc;
  };
  std::vector<double> analytic(5);
  for (std::size_t i = 0; i < 5; ++i) analytic[i] = 2.0 * (static_cast<double>(i) + 1) * p.values[i];
  auto res = grad_check(loss, p, analytic, 1e-5);
  REQUIRE(res.coords_checked == 5);
  REQUIRE(res.max_rel_err < 1e-9);
}

TEST_CASE("grad_check sees zero numeric gradient for an unused parameter") {
  ParamVector<double> p;
  p.resize(3);
  p.values = {1.0, 2.0, 3.0};
  auto loss = [](const ParamVector<double>& q) { return q.values[0] * q.values[0]; };
  std::vector<double> analytic = {2.0, 0.0, 0.0};
  auto res = grad_check(loss, p, analytic, 1e-5);
  REQUIRE(res.max_rel_err < 1e-8);
}

TEST_CASE("grad_check random subset covers the requested number of coordinates") {
  ParamVector<double> p;
  p.resize(200);
  for (std::size_t i = 0; i < 200; ++i) p.values[i] = 0.01 * static_cast<double>(i);
  auto loss = [](const ParamVector<double>& q) {
    double acc = 0;
    for (double v : q.values) acc += v * v;
    return acc;
  };
  std::vector<double> analytic(200);
  for (std::size_t i = 0; i < 200; ++i) analytic[i] = 2.0 * p.values[i];
  auto res = grad_check(loss, p, analytic, 1e-5, 50);
  REQUIRE(res.coords_checked == 50);
  REQUIRE(res.max_rel_err < 1e-8);
}
