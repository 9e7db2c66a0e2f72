#pragma once

#include "pfbr/common.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace pfbr::ode {

enum class Method { Euler, Midpoint, Rk4 };

const char* to_string(Method m);
Method method_from_string(const std::string& s);

// Fixed uniform step grid; t1 < t0 integrates backward. No error control, so
// runs are bit-reproducible and discretize-then-differentiate gradients are
// exact for the grid.
struct IntegratorConfig {
  Method method = Method::Rk4;
  int steps = 20;
  double t0 = 0.0;
  double t1 = 1.0;

  void validate() const {
    require(steps >= 1, ErrorKind::ConfigError, "integrator steps must be >= 1");
  }
  double step_size() const { return (t1 - t0) / steps; }
};

// One explicit step from (s, t) with step h, in place.
template <typename Field>
void step(Method method, Field&& field, Vec& s, double t, double h) {
  switch (method) {
    case Method::Euler: {
      s += h * field(s, t);
      break;
    }
    case Method::Midpoint: {
      Vec k1 = field(s, t);
      Vec k2 = field(s + (0.5 * h) * k1, t + 0.5 * h);
      s += h * k2;
      break;
    }
    case Method::Rk4: {
      Vec k1 = field(s, t);
      Vec k2 = field(s + (0.5 * h) * k1, t + 0.5 * h);
      Vec k3 = field(s + (0.5 * h) * k2, t + 0.5 * h);
      Vec k4 = field(s + h * k3, t + h);
      s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      break;
    }
  }
}

template <typename Field>
Vec solve_ivp(Field&& field, Vec s0, const IntegratorConfig& cfg) {
  cfg.validate();
  require(s0.allFinite(), ErrorKind::NonFinite, "initial state is not finite");
  const double h = cfg.step_size();
  Vec s = std::move(s0);
  for (int i = 0; i < cfg.steps; ++i) {
    const double t = cfg.t0 + i * h;
    step(cfg.method, field, s, t, h);
    if (!s.allFinite())
      fail(ErrorKind::NonFinite, "non-finite state after step " + std::to_string(i));
  }
  return s;
}

inline double nominal_order(Method m) {
  switch (m) {
    case Method::Euler: return 1.0;
    case Method::Midpoint: return 2.0;
    case Method::Rk4: return 4.0;
  }
  return 0.0;
}

// Richardson ratio against a known solution: log2(err(h) / err(h/2)).
template <typename Field>
double observed_order(Method method, Field&& field, const Vec& s0, double t0, double t1, int steps,
                      const Vec& exact) {
  IntegratorConfig coarse{method, steps, t0, t1};
  IntegratorConfig fine{method, 2 * steps, t0, t1};
  const double e1 = (solve_ivp(field, s0, coarse) - exact).norm();
  const double e2 = (solve_ivp(field, s0, fine) - exact).norm();
  return std::log2(e1 / e2);
}

}  // namespace pfbr::ode
