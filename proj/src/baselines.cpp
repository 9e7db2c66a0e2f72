#include "pfbr/baselines.hpp"

#include <cmath>

namespace pfbr::baselines {

Vec WeightedEnsemble::normalized_weights() const {
  const double hi = logw.maxCoeff();
  require(std::isfinite(hi), ErrorKind::DegenerateWeights, "all log-weights are -inf");
  Vec w = (logw.array() - hi).exp();
  const double z = w.sum();
  require(z > 0 && std::isfinite(z), ErrorKind::DegenerateWeights, "weight normalization failed");
  return w / z;
}

double WeightedEnsemble::ess() const {
  Vec w = normalized_weights();
  return 1.0 / w.squaredNorm();
}

Vec WeightedEnsemble::weighted_mean() const { return positions.transpose() * normalized_weights(); }

WeightedEnsemble smc_step(const WeightedEnsemble& we, const std::vector<Vec>& obs_batch,
                          const models::ModelSpec& model, Rng& rng, double ess_threshold) {
  require(ess_threshold > 0 && ess_threshold <= 1.0, ErrorKind::ConfigError,
          "ESS threshold must lie in (0, 1]");
  require(!obs_batch.empty(), ErrorKind::EmptyBatch, "empty observation batch");
  WeightedEnsemble out = we;
  Vec x(we.dim());
  for (int n = 0; n < we.count(); ++n) {
    x = we.positions.row(n).transpose();
    double acc = 0.0;
    for (const Vec& o : obs_batch) acc += model.log_lik(o, x);
    out.logw[n] += acc;
  }
  if (out.ess() < ess_threshold * out.count()) out = systematic_resample(out, rng);
  return out;
}

WeightedEnsemble systematic_resample(const WeightedEnsemble& we, Rng& rng) {
  const int n = we.count();
  Vec w = we.normalized_weights();
  Vec cum(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += w[i];
    cum[i] = acc;
  }
  cum[n - 1] = 1.0;

  WeightedEnsemble out;
  out.positions.resize(n, we.dim());
  out.logw = Vec::Zero(n);
  const double u = rng.uniform();
  int src = 0;
  for (int i = 0; i < n; ++i) {
    const double pointer = (i + u) / n;
    while (cum[src] < pointer) ++src;
    out.positions.row(i) = we.positions.row(src);
  }
  return out;
}

Mat sgld_run(const models::ModelSpec& model, const std::vector<Vec>& obs_so_far, const Vec& x0,
             double eps, int steps, Rng& rng) {
  require(eps > 0, ErrorKind::ConfigError, "step size must be positive");
  require(x0.size() == model.d, ErrorKind::DimMismatch, "start point dimension mismatch");
  const int d = model.d;
  Mat traj(steps + 1, d);
  traj.row(0) = x0.transpose();
  Vec x = x0;
  const double noise_scale = std::sqrt(2.0 * eps);
  for (int k = 0; k < steps; ++k) {
    Vec g = model.grad_log_prior(x);
    for (const Vec& o : obs_so_far) g += model.grad_x_log_lik(o, x);
    x += eps * g + noise_scale * rng.normal_vec(d);
    require(x.allFinite(), ErrorKind::NonFinite, "SGLD diverged at step " + std::to_string(k));
    traj.row(k + 1) = x.transpose();
  }
  return traj;
}

}  // namespace pfbr::baselines
