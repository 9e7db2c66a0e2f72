#include "pfbr/models.hpp"

#include <cmath>

namespace pfbr::models {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Mat chol_or_fail(const Mat& m, const char* what) {
  Eigen::LLT<Mat> llt(m);
  require(llt.info() == Eigen::Success, ErrorKind::NonSpd,
          std::string(what) + " is not symmetric positive-definite");
  return llt.matrixL();
}

void check_symmetric(const Mat& m, const char* what) {
  require(m.rows() == m.cols(), ErrorKind::ShapeMismatch, std::string(what) + " must be square");
  require((m - m.transpose()).lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + m.norm()),
          ErrorKind::NonSpd, std::string(what) + " is not symmetric");
}

double log_normal_1d(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + r * r / var);
}

}  // namespace

void GaussianPosterior::validate() const {
  check_symmetric(cov, "covariance");
  require(mean.size() == cov.rows(), ErrorKind::ShapeMismatch, "mean/cov dimensions disagree");
  chol_or_fail(cov, "covariance");
}

Mat GaussianPosterior::sample(Rng& rng, int n) const {
  Mat l = chol_or_fail(cov, "covariance");
  Mat z = rng.normal_mat(n, dim());
  return (z * l.transpose()).rowwise() + mean.transpose();
}

double GaussianPosterior::log_density(const Vec& x) const {
  Eigen::LLT<Mat> llt(cov);
  require(llt.info() == Eigen::Success, ErrorKind::NonSpd, "covariance is not SPD");
  Vec r = x - mean;
  Vec w = llt.solve(r);
  double logdet = 0.0;
  for (int i = 0; i < dim(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * (dim() * kLog2Pi + logdet + r.dot(w));
}

Vec GaussianPosterior::grad_log_density(const Vec& x) const {
  Eigen::LLT<Mat> llt(cov);
  require(llt.info() == Eigen::Success, ErrorKind::NonSpd, "covariance is not SPD");
  return -llt.solve(x - mean);
}

double GaussianPosterior::entropy() const {
  Eigen::LLT<Mat> llt(cov);
  require(llt.info() == Eigen::Success, ErrorKind::NonSpd, "covariance is not SPD");
  double logdet = 0.0;
  for (int i = 0; i < dim(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return 0.5 * (dim() * (1.0 + kLog2Pi) + logdet);
}

GaussianPosterior conjugate_update(const GaussianPosterior& prior, const std::vector<Vec>& obs,
                                   double obs_scale) {
  require(obs_scale > 0, ErrorKind::ConfigError, "observation scale must be positive");
  if (obs.empty()) return prior;
  const int d = prior.dim();
  Mat prior_prec = prior.cov.llt().solve(Mat::Identity(d, d));
  Mat post_prec = prior_prec + (static_cast<double>(obs.size()) / obs_scale) * Mat::Identity(d, d);
  Vec h = prior_prec * prior.mean;
  for (const Vec& o : obs) {
    require(o.size() == d, ErrorKind::DimMismatch, "observation dimension mismatch");
    h += o / obs_scale;
  }
  GaussianPosterior post;
  post.cov = post_prec.llt().solve(Mat::Identity(d, d));
  post.cov = 0.5 * (post.cov + post.cov.transpose()).eval();
  post.mean = post.cov * h;
  return post;
}

Mat LdsSpec::transition(const Mat& positions, Rng& rng) const {
  const int n = static_cast<int>(positions.rows());
  Mat noise = rng.normal_mat(n, static_cast<int>(a.rows()));
  return positions * a.transpose() + noise * sigma1_chol.transpose();
}

ModelSpec mvn_model(int d, double obs_scale) {
  require(d >= 1, ErrorKind::ConfigError, "dimension must be >= 1");
  require(obs_scale > 0, ErrorKind::ConfigError, "observation scale must be positive");
  ModelSpec m;
  m.name = "gaussian";
  m.d = d;
  m.obs_dim = d;
  m.log_prior = [d](const Vec& x) { return -0.5 * (d * kLog2Pi + x.squaredNorm()); };
  m.grad_log_prior = [](const Vec& x) { return Vec(-x); };
  m.sample_prior = [d](Rng& rng, int n) { return rng.normal_mat(n, d); };
  m.log_lik = [d, obs_scale](const Vec& o, const Vec& x) {
    require(o.size() == d && x.size() == d, ErrorKind::DimMismatch, "gaussian likelihood dims");
    return -0.5 * (d * (kLog2Pi + std::log(obs_scale)) + (o - x).squaredNorm() / obs_scale);
  };
  m.grad_x_log_lik = [obs_scale](const Vec& o, const Vec& x) { return Vec((o - x) / obs_scale); };
  m.sample_obs = [obs_scale](Rng& rng, const Vec& x) {
    return Vec(x + std::sqrt(obs_scale) * rng.normal_vec(static_cast<int>(x.size())));
  };
  m.oracle = [d, obs_scale](const std::vector<std::vector<Vec>>& batches) {
    GaussianPosterior prior{Vec::Zero(d), Mat::Identity(d, d)};
    std::vector<GaussianPosterior> out;
    std::vector<Vec> seen;
    for (const auto& batch : batches) {
      seen.insert(seen.end(), batch.begin(), batch.end());
      out.push_back(conjugate_update(prior, seen, obs_scale));
    }
    return out;
  };
  return m;
}

ModelSpec gmm_model() {
  ModelSpec m;
  m.name = "gmm";
  m.d = 2;
  m.obs_dim = 1;
  m.log_prior = [](const Vec& x) { return -0.5 * (2 * kLog2Pi + x.squaredNorm()); };
  m.grad_log_prior = [](const Vec& x) { return Vec(-x); };
  m.sample_prior = [](Rng& rng, int n) { return rng.normal_mat(n, 2); };
  m.log_lik = [](const Vec& o, const Vec& x) {
    require(o.size() == 1 && x.size() == 2, ErrorKind::DimMismatch, "gmm likelihood dims");
    const double l1 = log_normal_1d(o[0], x[0], 1.0);
    const double l2 = log_normal_1d(o[0], x[0] + x[1], 1.0);
    const double hi = std::max(l1, l2);
    return hi + std::log(0.5 * std::exp(l1 - hi) + 0.5 * std::exp(l2 - hi));
  };
  m.grad_x_log_lik = [](const Vec& o, const Vec& x) {
    const double l1 = log_normal_1d(o[0], x[0], 1.0);
    const double l2 = log_normal_1d(o[0], x[0] + x[1], 1.0);
    const double w2 = 1.0 / (1.0 + std::exp(l1 - l2));
    const double w1 = 1.0 - w2;
    const double r1 = o[0] - x[0];
    const double r2 = o[0] - x[0] - x[1];
    Vec g(2);
    g[0] = w1 * r1 + w2 * r2;
    g[1] = w2 * r2;
    return g;
  };
  m.sample_obs = [](Rng& rng, const Vec& x) {
    Vec o(1);
    const double mean = rng.below(2) == 0 ? x[0] : x[0] + x[1];
    o[0] = mean + rng.normal();
    return o;
  };
  return m;
}

ModelSpec lds_model(const Mat& a, const Mat& b, const Mat& sigma1, const Mat& sigma2) {
  const int d = static_cast<int>(a.rows());
  require(a.cols() == d, ErrorKind::ShapeMismatch, "transition matrix must be square");
  require(b.cols() == d, ErrorKind::ShapeMismatch, "emission columns must match state dim");
  const int od = static_cast<int>(b.rows());
  check_symmetric(sigma1, "Sigma1");
  check_symmetric(sigma2, "Sigma2");

  auto spec = std::make_shared<LdsSpec>();
  spec->a = a;
  spec->b = b;
  spec->sigma1 = sigma1;
  spec->sigma2 = sigma2;
  spec->sigma1_chol = chol_or_fail(sigma1, "Sigma1");
  Mat sigma2_chol = chol_or_fail(sigma2, "Sigma2");

  Eigen::LLT<Mat> llt2(sigma2);
  Mat sigma2_inv = llt2.solve(Mat::Identity(od, od));
  double logdet2 = 0.0;
  for (int i = 0; i < od; ++i) logdet2 += 2.0 * std::log(sigma2_chol(i, i));
  const double lik_const = -0.5 * (od * kLog2Pi + logdet2);

  ModelSpec m;
  m.name = "lds";
  m.d = d;
  m.obs_dim = od;
  m.log_prior = [d](const Vec& x) { return -0.5 * (d * kLog2Pi + x.squaredNorm()); };
  m.grad_log_prior = [](const Vec& x) { return Vec(-x); };
  m.sample_prior = [d](Rng& rng, int n) { return rng.normal_mat(n, d); };
  m.log_lik = [b, sigma2_inv, lik_const, od, d](const Vec& o, const Vec& x) {
    require(o.size() == od && x.size() == d, ErrorKind::DimMismatch, "lds likelihood dims");
    Vec r = o - b * x;
    return lik_const - 0.5 * r.dot(sigma2_inv * r);
  };
  m.grad_x_log_lik = [b, sigma2_inv](const Vec& o, const Vec& x) {
    return Vec(b.transpose() * (sigma2_inv * (o - b * x)));
  };
  m.sample_obs = [b, sigma2_chol, od](Rng& rng, const Vec& x) {
    return Vec(b * x + sigma2_chol * rng.normal_vec(od));
  };
  m.transition = spec;
  return m;
}

std::vector<GaussianPosterior> kalman_filter(const Mat& a, const Mat& b, const Mat& sigma1,
                                             const Mat& sigma2, const GaussianPosterior& prior,
                                             const std::vector<std::vector<Vec>>& batches) {
  const int d = prior.dim();
  require(a.rows() == d && a.cols() == d, ErrorKind::ShapeMismatch, "transition shape");
  require(b.cols() == d, ErrorKind::ShapeMismatch, "emission shape");
  check_symmetric(sigma1, "Sigma1");
  check_symmetric(sigma2, "Sigma2");
  prior.validate();

  Vec mean = prior.mean;
  Mat cov = prior.cov;
  std::vector<GaussianPosterior> out;
  out.reserve(batches.size());
  for (const auto& batch : batches) {
    // predict
    mean = a * mean;
    cov = a * cov * a.transpose() + sigma1;
    // update, one observation at a time
    for (const Vec& o : batch) {
      require(o.size() == b.rows(), ErrorKind::DimMismatch, "observation dimension mismatch");
      Mat s = b * cov * b.transpose() + sigma2;
      Eigen::LLT<Mat> llt(s);
      require(llt.info() == Eigen::Success, ErrorKind::NonSpd,
              "singular innovation covariance in Kalman update");
      Mat k = cov * b.transpose() * llt.solve(Mat::Identity(s.rows(), s.cols()));
      mean = mean + k * (o - b * mean);
      cov = cov - k * b * cov;
      cov = 0.5 * (cov + cov.transpose()).eval();
    }
    GaussianPosterior g{mean, cov};
    g.validate();
    out.push_back(std::move(g));
  }
  return out;
}

ModelSpec blr_model(const Dataset& dataset) {
  const int d = dataset.dim();
  require(d >= 1, ErrorKind::ConfigError, "empty feature matrix");
  require(dataset.features.allFinite(), ErrorKind::NonFinite, "features contain NaN/Inf");
  for (int i = 0; i < dataset.size(); ++i)
    require(dataset.labels[i] == 1.0 || dataset.labels[i] == -1.0, ErrorKind::BadLabel,
            "label at row " + std::to_string(i) + " is not in {-1,+1}");

  ModelSpec m;
  m.name = "blr";
  m.d = d;
  m.obs_dim = d + 1;  // [feature..., label]
  m.log_prior = [d](const Vec& x) { return -0.5 * (d * kLog2Pi + x.squaredNorm()); };
  m.grad_log_prior = [](const Vec& x) { return Vec(-x); };
  m.sample_prior = [d](Rng& rng, int n) { return rng.normal_mat(n, d); };
  m.log_lik = [d](const Vec& o, const Vec& x) {
    require(o.size() == d + 1 && x.size() == d, ErrorKind::DimMismatch, "blr likelihood dims");
    const double label = o[d];
    require(label == 1.0 || label == -1.0, ErrorKind::BadLabel, "label is not in {-1,+1}");
    const double z = label * o.head(d).dot(x);
    return z > 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
  };
  m.grad_x_log_lik = [d](const Vec& o, const Vec& x) {
    const double label = o[d];
    const double z = label * o.head(d).dot(x);
    const double sig = 1.0 / (1.0 + std::exp(z));  // sigmoid(-z)
    return Vec(label * sig * o.head(d));
  };
  return m;
}

Dataset rotate_features(const Dataset& dataset, double psi) {
  require(dataset.dim() >= 2, ErrorKind::DimTooSmall, "rotation needs at least two features");
  Dataset out = dataset;
  const double c = std::cos(psi), s = std::sin(psi);
  for (int i = 0; i < out.size(); ++i) {
    const double x0 = out.features(i, 0), x1 = out.features(i, 1);
    out.features(i, 0) = c * x0 - s * x1;
    out.features(i, 1) = s * x0 + c * x1;
  }
  return out;
}

Dataset pca_project(const Dataset& dataset, int k) {
  require(k >= 1 && k <= dataset.dim(), ErrorKind::ConfigError, "pca dimension out of range");
  Vec mean = dataset.features.colwise().mean();
  Mat centered = dataset.features.rowwise() - mean.transpose();
  Mat cov = centered.transpose() * centered / std::max(1, dataset.size() - 1);
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  require(eig.info() == Eigen::Success, ErrorKind::NonFinite, "eigendecomposition failed");
  // eigenvalues ascend; take the top-k columns in descending order
  Mat basis(dataset.dim(), k);
  for (int j = 0; j < k; ++j) basis.col(j) = eig.eigenvectors().col(dataset.dim() - 1 - j);
  Dataset out;
  out.features = centered * basis;
  out.labels = dataset.labels;
  out.warnings = dataset.warnings;
  return out;
}

double AnalyticFpFlow1d::mean_at(double t) const {
  return post_mean + (prior_mean - post_mean) * std::exp(-post_prec * t);
}

double AnalyticFpFlow1d::var_at(double t) const {
  const double stat = 1.0 / post_prec;
  return stat + (prior_var - stat) * std::exp(-2.0 * post_prec * t);
}

double AnalyticFpFlow1d::velocity(double x, double t) const {
  return -post_prec * (x - post_mean) + (x - mean_at(t)) / var_at(t);
}

double AnalyticFpFlow1d::divergence(double t) const { return -post_prec + 1.0 / var_at(t); }

AnalyticFpFlow1d analytic_fp_flow_1d(double prior_mean, double prior_var, double obs,
                                     double lik_var) {
  require(prior_var > 0 && lik_var > 0, ErrorKind::ConfigError, "variances must be positive");
  AnalyticFpFlow1d flow;
  flow.prior_mean = prior_mean;
  flow.prior_var = prior_var;
  flow.post_prec = 1.0 / prior_var + 1.0 / lik_var;
  flow.post_mean = (prior_mean / prior_var + obs / lik_var) / flow.post_prec;
  return flow;
}

}  // namespace pfbr::models
