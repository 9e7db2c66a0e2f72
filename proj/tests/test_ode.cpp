#include "pfbr/ode.hpp"

#include "doctest.h"

#include <cmath>

using namespace pfbr;
using namespace pfbr::ode;

namespace {

Vec scalar(double v) {
  Vec s(1);
  s[0] = v;
  return s;
}

auto exp_field = [](const Vec& s, double) -> Vec { return s; };

auto rotation_field = [](const Vec& s, double) -> Vec {
  Vec d(2);
  d << -s[1], s[0];
  return d;
};

}  // namespace

TEST_CASE("zero field keeps the state fixed") {
  IntegratorConfig cfg{Method::Rk4, 16, 0.0, 1.0};
  Vec s0(3);
  s0 << 1.0, -2.0, 0.5;
  Vec s1 = solve_ivp([](const Vec& s, double) { return Vec(Vec::Zero(s.size())); }, s0, cfg);
  CHECK((s1 - s0).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("exponential growth matches e with RK4") {
  IntegratorConfig cfg{Method::Rk4, 100, 0.0, 1.0};
  Vec s1 = solve_ivp(exp_field, scalar(1.0), cfg);
  CHECK(std::abs(s1[0] - std::exp(1.0)) < 1e-7);
}

TEST_CASE("full rotation returns to the start") {
  IntegratorConfig cfg{Method::Rk4, 200, 0.0, 2.0 * M_PI};
  Vec s0(2);
  s0 << 1.0, 0.25;
  Vec s1 = solve_ivp(rotation_field, s0, cfg);
  CHECK((s1 - s0).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("observed convergence orders") {
  Vec one = scalar(1.0);
  Vec e = scalar(std::exp(1.0));
  CHECK(std::abs(observed_order(Method::Rk4, exp_field, one, 0.0, 1.0, 32, e) - 4.0) < 0.2);
  CHECK(std::abs(observed_order(Method::Euler, exp_field, one, 0.0, 1.0, 64, e) - 1.0) < 0.2);

  Vec s0(2);
  s0 << 1.0, 0.0;
  Vec exact(2);
  exact << std::cos(1.0), std::sin(1.0);
  CHECK(std::abs(observed_order(Method::Midpoint, rotation_field, s0, 0.0, 1.0, 64, exact) - 2.0) <
        0.2);
}

TEST_CASE("property: forward then backward recovers the initial state") {
  auto field = [](const Vec& s, double t) -> Vec {
    Vec d(2);
    d << std::sin(s[1]) + 0.3 * std::cos(t), -0.5 * s[0];
    return d;
  };
  Vec s0(2);
  s0 << 0.8, -0.3;
  IntegratorConfig fwd{Method::Rk4, 64, 0.0, 1.0};
  IntegratorConfig bwd{Method::Rk4, 64, 1.0, 0.0};
  Vec back = solve_ivp(field, solve_ivp(field, s0, fwd), bwd);
  CHECK((back - s0).norm() / s0.norm() < 1e-6);
}

TEST_CASE("property: doubling steps does not increase error") {
  for (Method m : {Method::Euler, Method::Midpoint, Method::Rk4}) {
    double prev = std::numeric_limits<double>::infinity();
    for (int steps : {8, 16, 32, 64}) {
      IntegratorConfig cfg{m, steps, 0.0, 1.0};
      double err = std::abs(solve_ivp(exp_field, scalar(1.0), cfg)[0] - std::exp(1.0));
      CHECK(err <= prev);
      prev = err;
    }
  }
}

TEST_CASE("non-finite states report the step index") {
  auto blowup = [](const Vec& s, double t) -> Vec {
    Vec d(1);
    d[0] = t > 0.5 ? std::numeric_limits<double>::quiet_NaN() : s[0];
    return d;
  };
  IntegratorConfig cfg{Method::Euler, 10, 0.0, 1.0};
  try {
    solve_ivp(blowup, scalar(1.0), cfg);
    FAIL("expected NonFinite");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFinite);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}
