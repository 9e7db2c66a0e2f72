#pragma once

#include "pfbr/common.hpp"

#include <string>

namespace pfbr {

// Equally weighted particle set with tracked per-particle log-density.
// Row n of positions and entry n of logdens always describe the same
// particle; nothing in the pipeline is allowed to break that alignment.
struct ParticleEnsemble {
  Mat positions;  // N x d
  Vec logdens;    // N
  int stage = 0;

  int count() const { return static_cast<int>(positions.rows()); }
  int dim() const { return static_cast<int>(positions.cols()); }

  void validate() const {
    require(positions.rows() >= 1, ErrorKind::EmptyEnsemble, "ensemble has no particles");
    require(logdens.size() == positions.rows(), ErrorKind::ShapeMismatch,
            "logdens length does not match particle count");
    require(positions.allFinite() && logdens.allFinite(), ErrorKind::NonFinite,
            "ensemble contains NaN/Inf at stage " + std::to_string(stage));
  }
};

}  // namespace pfbr
