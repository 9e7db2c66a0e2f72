#pragma once

#include "pfbr/common.hpp"
#include "pfbr/models.hpp"
#include "pfbr/rng.hpp"

#include <vector>

namespace pfbr::baselines {

struct WeightedEnsemble {
  Mat positions;  // N x d
  Vec logw;       // unnormalized log-weights

  int count() const { return static_cast<int>(positions.rows()); }
  int dim() const { return static_cast<int>(positions.cols()); }

  // Normalized weights via log-sum-exp; DegenerateWeights when every
  // log-weight is -inf.
  Vec normalized_weights() const;
  double ess() const;  // (sum w)^2 / sum w^2 of the normalized weights
  Vec weighted_mean() const;
};

// Reweight by the batch likelihood, then systematic-resample when the
// effective sample size drops below threshold * N.
WeightedEnsemble smc_step(const WeightedEnsemble& we, const std::vector<Vec>& obs_batch,
                          const models::ModelSpec& model, Rng& rng, double ess_threshold);

WeightedEnsemble systematic_resample(const WeightedEnsemble& we, Rng& rng);

// Unadjusted Langevin iterates on log pi(x) + sum log p(o|x); returns the
// (steps + 1) x d trajectory including x0.
Mat sgld_run(const models::ModelSpec& model, const std::vector<Vec>& obs_so_far, const Vec& x0,
             double eps, int steps, Rng& rng);

}  // namespace pfbr::baselines
