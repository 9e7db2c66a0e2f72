#include "pfbr/tasks.hpp"

#include <cmath>

namespace pfbr::tasks {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

Kde::Kde(Mat particles, double bandwidth) : particles_(std::move(particles)), bandwidth_(bandwidth) {
  require(particles_.rows() >= 1, ErrorKind::EmptyEnsemble, "KDE needs at least one particle");
  require(bandwidth_ > 0, ErrorKind::ConfigError, "KDE bandwidth must be positive");
}

double Kde::scott_bandwidth(const Mat& particles) {
  const int n = static_cast<int>(particles.rows());
  const int d = static_cast<int>(particles.cols());
  require(n >= 2, ErrorKind::ConfigError, "Scott's rule needs at least two particles");
  Vec mean = particles.colwise().mean();
  double mean_std = 0.0;
  for (int j = 0; j < d; ++j)
    mean_std += std::sqrt((particles.col(j).array() - mean[j]).square().sum() / (n - 1));
  mean_std /= d;
  return std::pow(static_cast<double>(n), -1.0 / (d + 4)) * mean_std;
}

Kde Kde::with_scott(Mat particles) {
  double bw = scott_bandwidth(particles);
  return Kde(std::move(particles), bw);
}

double Kde::log_density(const Vec& x) const {
  require(x.size() == particles_.cols(), ErrorKind::DimMismatch, "KDE query dimension mismatch");
  const int n = static_cast<int>(particles_.rows());
  const int d = static_cast<int>(particles_.cols());
  const double inv2s2 = 1.0 / (2.0 * bandwidth_ * bandwidth_);
  double hi = -std::numeric_limits<double>::infinity();
  Vec expo(n);
  for (int i = 0; i < n; ++i) {
    expo[i] = -(x - particles_.row(i).transpose()).squaredNorm() * inv2s2;
    hi = std::max(hi, expo[i]);
  }
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += std::exp(expo[i] - hi);
  return hi + std::log(acc) - std::log(static_cast<double>(n)) - 0.5 * d * kLog2Pi -
         d * std::log(bandwidth_);
}

Vec Kde::grad_log_density(const Vec& x) const {
  Vec g = Vec::Zero(x.size());
  vjp(x, 1.0, &g, nullptr, nullptr);
  return g;
}

void Kde::vjp(const Vec& x, double cot, Vec* x_bar, Mat* bases_bar, double* sigma_bar) const {
  require(x.size() == particles_.cols(), ErrorKind::DimMismatch, "KDE query dimension mismatch");
  const int n = static_cast<int>(particles_.rows());
  const int d = static_cast<int>(particles_.cols());
  const double s2 = bandwidth_ * bandwidth_;
  Vec expo(n);
  double hi = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    expo[i] = -(x - particles_.row(i).transpose()).squaredNorm() / (2.0 * s2);
    hi = std::max(hi, expo[i]);
  }
  Vec w = (expo.array() - hi).exp();
  w /= w.sum();

  if (x_bar || bases_bar) {
    for (int i = 0; i < n; ++i) {
      Vec pull = (particles_.row(i).transpose() - x) * (w[i] / s2);
      if (x_bar) *x_bar += cot * pull;
      if (bases_bar) bases_bar->row(i) -= cot * pull.transpose();
    }
  }
  if (sigma_bar) {
    // d/dsigma: sum_i w_i r_i^2 / sigma^3 - d / sigma
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      acc += w[i] * (x - particles_.row(i).transpose()).squaredNorm();
    *sigma_bar += cot * (acc / (s2 * bandwidth_) - d / bandwidth_);
  }
}

void Kde::scott_vjp(const Mat& particles, double sigma_bar, Mat& bases_bar) {
  const int n = static_cast<int>(particles.rows());
  const int d = static_cast<int>(particles.cols());
  require(n >= 2, ErrorKind::ConfigError, "Scott's rule needs at least two particles");
  const double c = std::pow(static_cast<double>(n), -1.0 / (d + 4)) / d;
  Vec mean = particles.colwise().mean();
  for (int j = 0; j < d; ++j) {
    const double var = (particles.col(j).array() - mean[j]).square().sum() / (n - 1);
    const double std_j = std::sqrt(var);
    if (std_j == 0.0) continue;
    for (int i = 0; i < n; ++i)
      bases_bar(i, j) += sigma_bar * c * (particles(i, j) - mean[j]) / ((n - 1) * std_j);
  }
}

Mat Kde::sample(Rng& rng, int n) const {
  Mat out(n, particles_.cols());
  for (int i = 0; i < n; ++i) {
    const auto pick = rng.below(static_cast<std::uint64_t>(particles_.rows()));
    out.row(i) = particles_.row(static_cast<Eigen::Index>(pick)) +
                 bandwidth_ * rng.normal_vec(static_cast<int>(particles_.cols())).transpose();
  }
  return out;
}

double kde_log_density(const Mat& particles, double sigma, const Vec& x) {
  return Kde(particles, sigma).log_density(x);
}

Mat kde_sample(const Mat& particles, double sigma, Rng& rng, int n) {
  return Kde(particles, sigma).sample(rng, n);
}

PriorSpec PriorSpec::standard_normal(int d) {
  PriorSpec p;
  p.kind = Kind::Gaussian;
  p.gaussian = {Vec::Zero(d), Mat::Identity(d, d)};
  return p;
}

PriorSpec PriorSpec::from_gaussian(models::GaussianPosterior g) {
  PriorSpec p;
  p.kind = Kind::Gaussian;
  p.gaussian = std::move(g);
  return p;
}

PriorSpec PriorSpec::from_kde(Kde k) {
  PriorSpec p;
  p.kind = Kind::Kde;
  p.kde = std::move(k);
  return p;
}

int PriorSpec::dim() const {
  return kind == Kind::Gaussian ? gaussian.dim() : kde.dim();
}

double PriorSpec::log_density(const Vec& x) const {
  return kind == Kind::Gaussian ? gaussian.log_density(x) : kde.log_density(x);
}

Vec PriorSpec::grad_log_density(const Vec& x) const {
  return kind == Kind::Gaussian ? gaussian.grad_log_density(x) : kde.grad_log_density(x);
}

Mat PriorSpec::sample(Rng& rng, int n) const {
  return kind == Kind::Gaussian ? gaussian.sample(rng, n) : kde.sample(rng, n);
}

void InferenceTask::validate() const {
  require(stages() >= 1, ErrorKind::ConfigError, "task needs at least one stage");
  require(prior.dim() == model.d, ErrorKind::DimMismatch, "prior dimension != model dimension");
  for (int m = 0; m < stages(); ++m) {
    require(!observations[m].empty(), ErrorKind::EmptyBatch,
            "stage " + std::to_string(m + 1) + " has no observations");
    for (const Vec& o : observations[m])
      require(o.size() == model.obs_dim, ErrorKind::DimMismatch,
              "observation dimension mismatch at stage " + std::to_string(m + 1));
  }
}

std::pair<InferenceTask, InferenceTask> segment_sequence(
    const InferenceTask& task, const std::vector<ParticleEnsemble>& ensembles, int m_star) {
  const int m = task.stages();
  require(m_star >= 1 && m_star < m, ErrorKind::BadSplitIndex,
          "split index " + std::to_string(m_star) + " outside [1, " + std::to_string(m - 1) + "]");
  require(static_cast<int>(ensembles.size()) >= m_star, ErrorKind::BadSplitIndex,
          "no ensemble available at the split stage");

  InferenceTask head = task;
  head.observations.assign(task.observations.begin(), task.observations.begin() + m_star);

  InferenceTask tail = task;
  tail.prior = PriorSpec::from_kde(Kde::with_scott(ensembles[m_star - 1].positions));
  tail.observations.assign(task.observations.begin() + m_star, task.observations.end());
  tail.seed = task.seed + static_cast<std::uint64_t>(m_star);
  return {std::move(head), std::move(tail)};
}

std::vector<std::vector<Vec>> make_batches(const std::vector<Vec>& observations, int batch_size) {
  require(batch_size >= 1, ErrorKind::ConfigError, "batch size must be >= 1");
  std::vector<std::vector<Vec>> out;
  for (std::size_t i = 0; i < observations.size(); i += batch_size) {
    const std::size_t end = std::min(observations.size(), i + batch_size);
    out.emplace_back(observations.begin() + i, observations.begin() + end);
  }
  return out;
}

std::vector<baselines::WeightedEnsemble> smc_inference(const InferenceTask& task, int n,
                                                       double ess_threshold, Rng& rng) {
  task.validate();
  baselines::WeightedEnsemble we;
  we.positions = task.prior.sample(rng, n);
  we.logw = Vec::Zero(n);
  std::vector<baselines::WeightedEnsemble> out;
  out.reserve(task.observations.size());
  for (const auto& batch : task.observations) {
    if (task.model.hidden_markov()) {
      we.positions = task.model.transition->transition(we.positions, rng);
    }
    we = baselines::smc_step(we, batch, task.model, rng, ess_threshold);
    out.push_back(we);
  }
  return out;
}

void TaskGenConfig::validate() const {
  require(family == "gaussian" || family == "gmm" || family == "lds" || family == "blr",
          ErrorKind::ConfigError, "unknown model family '" + family + "'");
  require(count >= 0, ErrorKind::ConfigError, "task count must be >= 0");
  require(stages >= 1 && batch >= 1 && d >= 1, ErrorKind::ConfigError,
          "stages, batch and d must be positive");
  require(obs_scale > 0 && lds_noise > 0, ErrorKind::ConfigError, "scales must be positive");
  require(kde_prior_fraction >= 0 && kde_prior_fraction <= 1, ErrorKind::ConfigError,
          "kde_prior_fraction must lie in [0, 1]");
}

namespace {

std::vector<Vec> draw_observations(const models::ModelSpec& model, const Vec& truth, int count,
                                   Rng& rng) {
  std::vector<Vec> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(model.sample_obs(rng, truth));
  return out;
}

InferenceTask gaussian_task(const TaskGenConfig& cfg, Rng& rng) {
  models::ModelSpec model = models::mvn_model(cfg.d, cfg.obs_scale);
  InferenceTask task;
  task.model = model;
  task.seed = rng.raw();

  // Progress a synthetic inference a few steps and adopt its posterior as the
  // prior; this is what spreads the training priors away from N(0, I).
  const int progress = static_cast<int>(rng.below(cfg.prior_progress_max + 1));
  Vec progress_truth = cfg.progress_truth_std * rng.normal_vec(cfg.d);
  models::GaussianPosterior start{Vec::Zero(cfg.d), Mat::Identity(cfg.d, cfg.d)};
  auto progressed =
      models::conjugate_update(start, draw_observations(model, progress_truth, progress, rng),
                               cfg.obs_scale);
  Vec jitter = cfg.prior_mean_jitter * rng.normal_vec(cfg.d);
  if (progress > 0 && rng.uniform() < cfg.kde_prior_fraction) {
    InferenceTask synth;
    synth.prior = PriorSpec::standard_normal(cfg.d);
    synth.model = model;
    synth.observations = make_batches(draw_observations(model, progress_truth, progress, rng), 1);
    auto smc = smc_inference(synth, cfg.kde_prior_particles, 0.5, rng);
    auto equal = baselines::systematic_resample(smc.back(), rng);
    Mat bases = equal.positions.rowwise() + jitter.transpose();
    task.prior = PriorSpec::from_kde(Kde::with_scott(bases));
  } else {
    progressed.mean += jitter;
    task.prior = PriorSpec::from_gaussian(progressed);
  }

  Vec truth = rng.uniform() < cfg.truth_from_prior_fraction
                  ? Vec(task.prior.sample(rng, 1).row(0).transpose())
                  : rng.normal_vec(cfg.d);
  task.observations =
      make_batches(draw_observations(model, truth, cfg.stages * cfg.batch, rng), cfg.batch);
  return task;
}

InferenceTask gmm_task(const TaskGenConfig& cfg, Rng& rng) {
  models::ModelSpec model = models::gmm_model();
  InferenceTask task;
  task.model = model;
  task.seed = rng.raw();
  Vec truth(2);
  truth << 1.0, -2.0;

  const int progress = static_cast<int>(rng.below(cfg.prior_progress_max + 1));
  if (progress > 0 && rng.uniform() < cfg.kde_prior_fraction) {
    InferenceTask synth;
    synth.prior = PriorSpec::standard_normal(2);
    synth.model = model;
    synth.observations = make_batches(draw_observations(model, truth, progress, rng), 1);
    auto smc = smc_inference(synth, cfg.kde_prior_particles, 0.5, rng);
    auto equal = baselines::systematic_resample(smc.back(), rng);
    task.prior = PriorSpec::from_kde(Kde::with_scott(equal.positions));
  } else {
    task.prior = PriorSpec::standard_normal(2);
  }
  task.observations =
      make_batches(draw_observations(model, truth, cfg.stages * cfg.batch, rng), cfg.batch);
  return task;
}

InferenceTask lds_task(const TaskGenConfig& cfg, Rng& rng) {
  const int d = cfg.d;
  Mat a = rng.normal_mat(d, d) / std::sqrt(static_cast<double>(d));
  Mat b = rng.normal_mat(d, d) / std::sqrt(static_cast<double>(d));
  Mat q = cfg.lds_noise * Mat::Identity(d, d);
  models::ModelSpec model = models::lds_model(a, b, q, q);

  InferenceTask task;
  task.model = model;
  task.prior = PriorSpec::standard_normal(d);
  task.seed = rng.raw();

  Vec x = rng.normal_vec(d);
  Mat q_chol = model.transition->sigma1_chol;
  std::vector<Vec> obs;
  for (int m = 0; m < cfg.stages; ++m) {
    x = a * x + q_chol * rng.normal_vec(d);
    for (int l = 0; l < cfg.batch; ++l) obs.push_back(model.sample_obs(rng, x));
  }
  task.observations = make_batches(obs, cfg.batch);
  return task;
}

models::Dataset synth_blr_dataset(int count, int d, Rng& rng) {
  models::Dataset data;
  data.features = rng.normal_mat(count, d);
  data.labels.resize(count);
  Vec w = rng.normal_vec(d);
  w.normalize();
  for (int i = 0; i < count; ++i) {
    const double margin = data.features.row(i).dot(w) + 0.3 * rng.normal();
    data.labels[i] = margin >= 0 ? 1.0 : -1.0;
  }
  return data;
}

InferenceTask blr_task(const TaskGenConfig& cfg, Rng& rng) {
  models::Dataset base = cfg.dataset.size() > 0 ? cfg.dataset
                                                : synth_blr_dataset(cfg.blr_synth_count, cfg.d, rng);
  const double psi = rng.uniform(-cfg.rotation_range, cfg.rotation_range);
  models::Dataset rotated = base.dim() >= 2 ? models::rotate_features(base, psi) : base;
  models::ModelSpec model = models::blr_model(rotated);

  InferenceTask task;
  task.model = model;
  task.prior = PriorSpec::standard_normal(rotated.dim());
  task.seed = rng.raw();

  const int needed = cfg.stages * cfg.batch;
  std::vector<Vec> obs;
  obs.reserve(needed);
  for (int i = 0; i < needed; ++i) {
    const int row = static_cast<int>(rng.below(rotated.size()));
    Vec o(rotated.dim() + 1);
    o << rotated.features.row(row).transpose(), rotated.labels[row];
    obs.push_back(std::move(o));
  }
  task.observations = make_batches(obs, cfg.batch);
  return task;
}

}  // namespace

std::vector<InferenceTask> generate_training_set(const TaskGenConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<InferenceTask> out;
  out.reserve(cfg.count);
  for (int i = 0; i < cfg.count; ++i) {
    InferenceTask task;
    if (cfg.family == "gaussian") task = gaussian_task(cfg, rng);
    else if (cfg.family == "gmm") task = gmm_task(cfg, rng);
    else if (cfg.family == "lds") task = lds_task(cfg, rng);
    else task = blr_task(cfg, rng);
    task.validate();
    out.push_back(std::move(task));
  }
  return out;
}

}  // namespace pfbr::tasks
