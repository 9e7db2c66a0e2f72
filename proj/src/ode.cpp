#include "pfbr/ode.hpp"

namespace pfbr::ode {

const char* to_string(Method m) {
  switch (m) {
    case Method::Euler: return "euler";
    case Method::Midpoint: return "midpoint";
    case Method::Rk4: return "rk4";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "euler") return Method::Euler;
  if (s == "midpoint") return Method::Midpoint;
  if (s == "rk4") return Method::Rk4;
  fail(ErrorKind::ConfigError, "unknown integrator method '" + s + "'");
}

}  // namespace pfbr::ode
