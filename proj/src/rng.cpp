#include "pfbr/rng.hpp"

#include <cstdio>
#include <sstream>

namespace pfbr {

std::string Rng::state() const {
  std::ostringstream os;
  os << gen_ << ' ' << (has_cached_ ? 1 : 0);
  if (has_cached_) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", cached_);
    os << ' ' << buf;
  }
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> gen_;
  int flag = 0;
  is >> flag;
  has_cached_ = flag != 0;
  cached_ = 0.0;
  if (has_cached_) is >> cached_;
  require(!is.fail(), ErrorKind::ParseError, "malformed rng state string");
}

}  // namespace pfbr
