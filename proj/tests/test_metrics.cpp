#include "pfbr/metrics.hpp"

#include "pfbr/rng.hpp"

#include "doctest.h"

#include <cstring>

using namespace pfbr;
using namespace pfbr::metrics;

namespace {

Mat shuffle_rows(const Mat& m, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(m.rows()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.below(i))]);
  Mat out(m.rows(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<int>(i)) = m.row(idx[i]);
  return out;
}

}  // namespace

TEST_CASE("mmd2: zero on identical arrays, bit-exact symmetry") {
  Rng rng(1);
  Mat x = rng.normal_mat(40, 2);
  KernelSpec k = KernelSpec::rbf(1.0);
  CHECK(mmd2(x, x, k) == 0.0);

  Mat y = rng.normal_mat(30, 2).array() + 0.5;
  const double ab = mmd2(x, y, k);
  const double ba = mmd2(y, x, k);
  CHECK(std::memcmp(&ab, &ba, sizeof(double)) == 0);
}

TEST_CASE("mmd2: closed-form gaussian separation with the RBF kernel") {
  // For P = N(0, 1), Q = N(3, 1) in one dimension and lengthscale 1, the
  // population value is 2 sqrt(1/3) (1 - exp(-9/6)).
  const double pref = std::sqrt(1.0 / 3.0);
  const double expect = 2.0 * pref * (1.0 - std::exp(-9.0 / 6.0));

  Rng rng(2024);
  const int n = 2000;
  Mat x = rng.normal_mat(n, 1);
  Mat y = rng.normal_mat(n, 1).array() + 3.0;
  const double est = mmd2(x, y, KernelSpec::rbf(1.0));
  CHECK(std::abs(est - expect) < 0.1 * expect);
}

TEST_CASE("mmd2: nonnegative for PD kernels, permutation invariant") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Mat x = rng.normal_mat(25, 3);
    Mat y = rng.normal_mat(20, 3).array() * 0.8;
    for (auto kind : {KernelSpec::Kind::Rbf, KernelSpec::Kind::Laplacian}) {
      KernelSpec k;
      k.kind = kind;
      k.lengthscale = 0.7;
      const double v = mmd2(x, y, k);
      CHECK(v >= 0.0);
      const double shuffled = mmd2(shuffle_rows(x, rng), shuffle_rows(y, rng), k);
      CHECK(std::abs(v - shuffled) < 1e-12 * (1.0 + std::abs(v)));
    }
  }
}

TEST_CASE("median heuristic falls inside the pairwise distance range") {
  Rng rng(9);
  Mat x = rng.normal_mat(30, 2);
  Mat y = rng.normal_mat(30, 2);
  const double med = median_heuristic(x, y);
  CHECK(med > 0.0);
  CHECK(med < 20.0);
}

TEST_CASE("cross_entropy: self-entropy of a unit gaussian, shift response") {
  Rng rng(11);
  const int n = 10000;
  Mat p = rng.normal_mat(n, 1);
  Mat q = rng.normal_mat(n, 1);
  const double entropy = 0.5 * std::log(2.0 * M_PI * std::exp(1.0));
  const double est = cross_entropy(p, q);
  CHECK(std::abs(est - entropy) < 0.1);

  Mat q_shift = q.array() + 5.0;
  CHECK(cross_entropy(p, q_shift) > est);

  // bit-identical under reordering of both sets
  Mat p2 = shuffle_rows(p, rng);
  Mat q2 = shuffle_rows(q, rng);
  const double a = cross_entropy(p, q);
  const double b = cross_entropy(p2, q2);
  CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}

TEST_CASE("integral_truth: trace identity and algebraic reduction") {
  models::GaussianPosterior g{Vec::Zero(3), Mat::Identity(3, 3)};
  Mat eye = Mat::Identity(3, 3);
  auto t = integral_truth(g, eye, eye, Vec::Zero(3), Vec::Zero(3));
  CHECK(t.quad == doctest::Approx(3.0));
  // with a = b = 0 and A = B = I the bilinear form reduces to the quadratic
  CHECK(std::abs(t.bilinear - t.quad) < 1e-12);

  Rng rng(13);
  models::GaussianPosterior g2;
  g2.mean = rng.normal_vec(2);
  Mat m = rng.normal_mat(2, 2);
  g2.cov = m * m.transpose() + 0.5 * Mat::Identity(2, 2);
  Mat eye2 = Mat::Identity(2, 2);
  auto t2 = integral_truth(g2, eye2, eye2, Vec::Zero(2), Vec::Zero(2));
  CHECK(std::abs(t2.bilinear - t2.quad) < 1e-12);
}

TEST_CASE("integral_discrepancy: exact draws land inside the CLT bound") {
  Rng rng(2025);
  models::GaussianPosterior g{Vec::Zero(2), Mat::Identity(2, 2)};
  const int n = 10000;
  Mat draws = g.sample(rng, n);
  Mat a(2, 2), b(2, 2);
  a << 1.0, 0.2, 0.2, 0.8;
  b << 0.5, -0.1, 0.3, 1.1;
  Vec av(2), bv(2);
  av << 0.4, -0.2;
  bv << 1.0, 0.3;
  Vec disc = integral_discrepancy(draws, g, a, b, av, bv);
  CHECK(disc[0] < 4.0 * std::sqrt(g.cov.trace() / n));
  CHECK(disc[1] < 0.2);
  CHECK(disc[2] < 0.2);
}

TEST_CASE("integral truths match a large Monte Carlo oracle") {
  Rng rng(31);
  models::GaussianPosterior g;
  g.mean = rng.normal_vec(2);
  Mat m = rng.normal_mat(2, 2);
  g.cov = m * m.transpose() + 0.3 * Mat::Identity(2, 2);
  Mat a = rng.normal_mat(2, 2);
  Mat b = rng.normal_mat(2, 2);
  Vec av = rng.normal_vec(2);
  Vec bv = rng.normal_vec(2);
  auto t = integral_truth(g, a, b, av, bv);

  const int n = 1000000;
  Mat draws = g.sample(rng, n);
  Vec mean_mc = draws.colwise().mean();
  double quad = 0.0, bil = 0.0, quad2 = 0.0, bil2 = 0.0;
  for (int i = 0; i < n; ++i) {
    Vec x = draws.row(i).transpose();
    const double h2 = x.dot(a * x);
    const double h3 = (a * x + av).dot(b * x + bv);
    quad += h2;
    bil += h3;
    quad2 += h2 * h2;
    bil2 += h3 * h3;
  }
  quad /= n;
  bil /= n;
  const double quad_se = std::sqrt((quad2 / n - quad * quad) / n);
  const double bil_se = std::sqrt((bil2 / n - bil * bil) / n);
  CHECK((mean_mc - t.mean).lpNorm<Eigen::Infinity>() <
        3.0 * std::sqrt(g.cov.diagonal().maxCoeff() / n));
  CHECK(std::abs(quad - t.quad) < 3.0 * quad_se);
  CHECK(std::abs(bil - t.bilinear) < 3.0 * bil_se);
}

TEST_CASE("errors: dimension mismatch and bad kernel parameters") {
  Rng rng(3);
  Mat x = rng.normal_mat(5, 2);
  Mat y = rng.normal_mat(5, 3);
  CHECK_THROWS_AS(mmd2(x, y, KernelSpec::rbf(1.0)), Error);
  CHECK_THROWS_AS(mmd2(x, x, KernelSpec::rbf(0.0)), Error);
  CHECK_THROWS_AS(kernel_kind_from_string("triangle"), Error);
}
