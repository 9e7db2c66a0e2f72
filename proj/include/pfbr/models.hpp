#pragma once

#include "pfbr/common.hpp"
#include "pfbr/rng.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace pfbr::models {

struct GaussianPosterior {
  Vec mean;
  Mat cov;

  int dim() const { return static_cast<int>(mean.size()); }
  void validate() const;  // symmetry within 1e-12 and a successful Cholesky
  Mat sample(Rng& rng, int n) const;
  double log_density(const Vec& x) const;
  Vec grad_log_density(const Vec& x) const;
  double entropy() const;
};

// Conjugate update for o | x ~ N(x, obs_scale I): the closed-form posterior
// given a flat list of observations.
GaussianPosterior conjugate_update(const GaussianPosterior& prior, const std::vector<Vec>& obs,
                                   double obs_scale);

struct LdsSpec {
  Mat a;        // transition
  Mat b;        // emission
  Mat sigma1;   // state noise
  Mat sigma2;   // observation noise
  Mat sigma1_chol;

  // x~ = A x + eps, row-wise over the ensemble
  Mat transition(const Mat& positions, Rng& rng) const;
};

// Per-stage exact posterior marginals given the observation batches.
using Oracle =
    std::function<std::vector<GaussianPosterior>(const std::vector<std::vector<Vec>>& batches)>;

// A Bayesian model plug-in. Observations are plain vectors; for logistic
// regression an observation is [feature..., label] with the label last.
struct ModelSpec {
  std::string name;
  int d = 0;
  int obs_dim = 0;
  std::function<double(const Vec& x)> log_prior;
  std::function<Vec(const Vec& x)> grad_log_prior;
  std::function<Mat(Rng& rng, int n)> sample_prior;  // n x d
  std::function<double(const Vec& o, const Vec& x)> log_lik;
  std::function<Vec(const Vec& o, const Vec& x)> grad_x_log_lik;
  std::function<Vec(Rng& rng, const Vec& x)> sample_obs;  // o | x, null for dataset models
  Oracle oracle;                                          // null when no closed form exists
  std::shared_ptr<LdsSpec> transition;                    // set only for the LDS model

  bool hidden_markov() const { return transition != nullptr; }
};

// Prior N(0, I_d), likelihood o | x ~ N(x, obs_scale I_d), conjugate oracle.
ModelSpec mvn_model(int d, double obs_scale);

// d = 2, scalar observations o ~ 1/2 N(x1, 1) + 1/2 N(x1 + x2, 1); the
// posterior under truth (1, -2) carries a mirror mode at (-1, 2).
ModelSpec gmm_model();

ModelSpec lds_model(const Mat& a, const Mat& b, const Mat& sigma1, const Mat& sigma2);

std::vector<GaussianPosterior> kalman_filter(const Mat& a, const Mat& b, const Mat& sigma1,
                                             const Mat& sigma2, const GaussianPosterior& prior,
                                             const std::vector<std::vector<Vec>>& batches);

struct Dataset {
  Mat features;  // n x d
  Vec labels;    // entries in {-1, +1}
  std::vector<std::string> warnings;

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
};

ModelSpec blr_model(const Dataset& dataset);

// In-place 2-d rotation of feature coordinates (0, 1); the rest untouched.
Dataset rotate_features(const Dataset& dataset, double psi);

// Covariance eigendecomposition, top-k projection.
Dataset pca_project(const Dataset& dataset, int k);

// Closed-form Theorem-2 flow for the 1-d conjugate Gaussian case:
//   f(x, t) = d/dx log[pi(x) p(o|x)] - d/dx log q(x, t)
// with q(x, t) Gaussian; its moments follow linear ODEs solved here exactly.
struct AnalyticFpFlow1d {
  double prior_mean = 0.0;
  double prior_var = 1.0;
  double post_mean = 0.0;
  double post_prec = 1.0;

  double mean_at(double t) const;
  double var_at(double t) const;
  double velocity(double x, double t) const;
  double divergence(double t) const;  // field is affine in x
};

AnalyticFpFlow1d analytic_fp_flow_1d(double prior_mean, double prior_var, double obs,
                                     double lik_var);

}  // namespace pfbr::models
