#include "pfbr/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace pfbr::metrics {

KernelSpec KernelSpec::rbf(double ell) {
  KernelSpec k;
  k.kind = Kind::Rbf;
  k.lengthscale = ell;
  return k;
}

KernelSpec KernelSpec::laplacian(double ell) {
  KernelSpec k;
  k.kind = Kind::Laplacian;
  k.lengthscale = ell;
  return k;
}

void KernelSpec::validate() const {
  switch (kind) {
    case Kind::Rbf:
    case Kind::Laplacian:
      require(lengthscale > 0, ErrorKind::ConfigError, "kernel lengthscale must be positive");
      break;
    case Kind::Polynomial:
      require(degree >= 1, ErrorKind::ConfigError, "polynomial degree must be >= 1");
      break;
    case Kind::Sigmoid:
    case Kind::Cosine:
      break;
  }
}

double KernelSpec::operator()(const Vec& x, const Vec& y) const {
  switch (kind) {
    case Kind::Rbf:
      return std::exp(-(x - y).squaredNorm() / (2.0 * lengthscale * lengthscale));
    case Kind::Laplacian:
      return std::exp(-(x - y).lpNorm<1>() / lengthscale);
    case Kind::Polynomial:
      return std::pow(gamma * x.dot(y) + coef, degree);
    case Kind::Sigmoid:
      return std::tanh(gamma * x.dot(y) + coef);
    case Kind::Cosine: {
      const double nx = x.norm(), ny = y.norm();
      if (nx == 0.0 || ny == 0.0) return 0.0;
      return x.dot(y) / (nx * ny);
    }
  }
  return 0.0;
}

const char* to_string(KernelSpec::Kind kind) {
  switch (kind) {
    case KernelSpec::Kind::Rbf: return "rbf";
    case KernelSpec::Kind::Laplacian: return "laplacian";
    case KernelSpec::Kind::Polynomial: return "polynomial";
    case KernelSpec::Kind::Sigmoid: return "sigmoid";
    case KernelSpec::Kind::Cosine: return "cosine";
  }
  return "?";
}

KernelSpec::Kind kernel_kind_from_string(const std::string& s) {
  if (s == "rbf") return KernelSpec::Kind::Rbf;
  if (s == "laplacian") return KernelSpec::Kind::Laplacian;
  if (s == "polynomial") return KernelSpec::Kind::Polynomial;
  if (s == "sigmoid") return KernelSpec::Kind::Sigmoid;
  if (s == "cosine") return KernelSpec::Kind::Cosine;
  fail(ErrorKind::ConfigError, "unknown kernel '" + s + "'");
}

double median_heuristic(const Mat& x, const Mat& y) {
  require(x.cols() == y.cols(), ErrorKind::DimMismatch, "sample dimensions disagree");
  Mat pooled(x.rows() + y.rows(), x.cols());
  pooled << x, y;
  const int n = static_cast<int>(pooled.rows());
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) dists.push_back((pooled.row(i) - pooled.row(j)).norm());
  if (dists.empty()) return 1.0;
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + mid, dists.end());
  const double med = dists[mid];
  return med > 0 ? med : 1.0;
}

namespace {

// within-set mean kernel value, all ordered pairs including the diagonal
double self_term(const Mat& x, const KernelSpec& kernel) {
  const int n = static_cast<int>(x.rows());
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) acc += kernel(x.row(i).transpose(), x.row(j).transpose());
  return acc / (static_cast<double>(n) * n);
}

bool lex_less(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(),
                                      b.data() + b.size());
}

}  // namespace

double mmd2(const Mat& x, const Mat& y, const KernelSpec& kernel) {
  require(x.rows() >= 1 && y.rows() >= 1, ErrorKind::EmptyEnsemble, "empty sample set");
  require(x.cols() == y.cols(), ErrorKind::DimMismatch, "sample dimensions disagree");
  kernel.validate();

  // the kernels are symmetric, so iterating the cross term over a canonical
  // ordering of the pair keeps mmd2(x, y) bit-identical to mmd2(y, x)
  const Mat& first = lex_less(x, y) ? x : y;
  const Mat& second = lex_less(x, y) ? y : x;
  double cross = 0.0;
  for (int i = 0; i < first.rows(); ++i)
    for (int j = 0; j < second.rows(); ++j)
      cross += kernel(first.row(i).transpose(), second.row(j).transpose());
  cross /= static_cast<double>(first.rows()) * second.rows();

  return self_term(x, kernel) + self_term(y, kernel) - 2.0 * cross;
}

double cross_entropy(const Mat& samples_p, const Mat& q_particles, double bandwidth) {
  require(samples_p.rows() >= 1 && q_particles.rows() >= 1, ErrorKind::EmptyEnsemble,
          "empty sample set");
  require(samples_p.cols() == q_particles.cols(), ErrorKind::DimMismatch,
          "sample dimensions disagree");
  // canonical row order makes the estimate independent of particle ordering
  std::vector<int> order(static_cast<std::size_t>(q_particles.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    for (int c = 0; c < q_particles.cols(); ++c)
      if (q_particles(i, c) != q_particles(j, c)) return q_particles(i, c) < q_particles(j, c);
    return false;
  });
  Mat canon(q_particles.rows(), q_particles.cols());
  for (std::size_t i = 0; i < order.size(); ++i) canon.row(static_cast<int>(i)) = q_particles.row(order[i]);
  tasks::Kde kde = bandwidth > 0 ? tasks::Kde(canon, bandwidth) : tasks::Kde::with_scott(canon);
  const int n = static_cast<int>(samples_p.rows());
  std::vector<double> vals(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) vals[i] = kde.log_density(samples_p.row(i).transpose());
  // canonical accumulation order, so the estimate ignores sample ordering
  std::sort(vals.begin(), vals.end());
  double acc = 0.0;
  for (double v : vals) acc += v;
  return -acc / n;
}

IntegralTruth integral_truth(const models::GaussianPosterior& truth, const Mat& a, const Mat& b,
                             const Vec& avec, const Vec& bvec) {
  const int d = truth.dim();
  require(a.rows() == d && a.cols() == d && b.rows() == d && b.cols() == d,
          ErrorKind::DimMismatch, "test matrices must be d x d");
  require(avec.size() == d && bvec.size() == d, ErrorKind::DimMismatch,
          "test vectors must have length d");
  IntegralTruth t;
  t.mean = truth.mean;
  t.quad = (a * truth.cov).trace() + truth.mean.dot(a * truth.mean);
  t.bilinear = (a * truth.cov * b.transpose()).trace() +
               (a * truth.mean + avec).dot(b * truth.mean + bvec);
  return t;
}

Vec integral_discrepancy(const Mat& q_particles, const models::GaussianPosterior& truth,
                         const Mat& a, const Mat& b, const Vec& avec, const Vec& bvec) {
  require(q_particles.rows() >= 1, ErrorKind::EmptyEnsemble, "empty particle set");
  require(q_particles.cols() == truth.dim(), ErrorKind::DimMismatch,
          "particle dimension does not match the truth");
  IntegralTruth t = integral_truth(truth, a, b, avec, bvec);

  const int n = static_cast<int>(q_particles.rows());
  Vec mean = q_particles.colwise().mean();
  double quad = 0.0, bilinear = 0.0;
  for (int i = 0; i < n; ++i) {
    Vec x = q_particles.row(i).transpose();
    quad += x.dot(a * x);
    bilinear += (a * x + avec).dot(b * x + bvec);
  }
  quad /= n;
  bilinear /= n;

  Vec out(3);
  out[0] = (mean - t.mean).norm();
  out[1] = std::abs(quad - t.quad);
  out[2] = std::abs(bilinear - t.bilinear);
  return out;
}

}  // namespace pfbr::metrics
