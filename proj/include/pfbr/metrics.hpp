#pragma once

#include "pfbr/common.hpp"
#include "pfbr/models.hpp"
#include "pfbr/tasks.hpp"

#include <string>

namespace pfbr::metrics {

struct KernelSpec {
  enum class Kind { Rbf, Laplacian, Polynomial, Sigmoid, Cosine };
  Kind kind = Kind::Rbf;
  double lengthscale = 1.0;  // rbf / laplacian
  double gamma = 1.0;        // polynomial / sigmoid slope
  double coef = 1.0;         // polynomial / sigmoid offset
  int degree = 2;            // polynomial

  static KernelSpec rbf(double ell);
  static KernelSpec laplacian(double ell);

  void validate() const;
  double operator()(const Vec& x, const Vec& y) const;
};

const char* to_string(KernelSpec::Kind kind);
KernelSpec::Kind kernel_kind_from_string(const std::string& s);

// Median pairwise distance of the pooled sample (the usual lengthscale
// heuristic).
double median_heuristic(const Mat& x, const Mat& y);

// V-statistic (biased) squared MMD: empirical means over all pairs including
// the diagonal. Bit-exactly symmetric and permutation-invariant.
double mmd2(const Mat& x, const Mat& y, const KernelSpec& kernel);

// E_{x~p}[-log q(x)] with q a KDE over the particles (Scott bandwidth unless
// one is supplied).
double cross_entropy(const Mat& samples_p, const Mat& q_particles, double bandwidth = 0.0);

// Closed-form Gaussian expectations of the three test functions
//   h1(x) = x, h2(x) = x^T A x, h3(x) = (A x + a)^T (B x + b);
// entry 0 reports ||mu||-style vectors reduced to their l2 norm later, so the
// raw values are returned as (E h2, E h3) plus the mean vector.
struct IntegralTruth {
  Vec mean;        // E[x]
  double quad;     // E[x^T A x]
  double bilinear; // E[(Ax+a)^T (Bx+b)]
};

IntegralTruth integral_truth(const models::GaussianPosterior& truth, const Mat& a, const Mat& b,
                             const Vec& avec, const Vec& bvec);

// l2 discrepancies between empirical means of the test functions over the
// particles and their closed forms: returns (|E x|, |E h2|, |E h3|) gaps.
Vec integral_discrepancy(const Mat& q_particles, const models::GaussianPosterior& truth,
                         const Mat& a, const Mat& b, const Vec& avec, const Vec& bvec);

}  // namespace pfbr::metrics
