#include "pfbr/models.hpp"

#include "pfbr/ode.hpp"

#include "doctest.h"
#include "test_util.hpp"

using namespace pfbr;
using namespace pfbr::models;

namespace {

Vec vec1(double v) {
  Vec x(1);
  x[0] = v;
  return x;
}

void check_lik_gradient(const ModelSpec& m, const Vec& o, const Vec& x) {
  Vec g = m.grad_x_log_lik(o, x);
  Vec fd = testutil::fd_grad([&](const Vec& xx) { return m.log_lik(o, xx); }, x, 1e-6);
  CHECK(testutil::max_rel_err(g, fd, 1e-8) < 1e-6);
}

}  // namespace

TEST_CASE("rng: determinism and state round-trip") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  std::string s = a.state();
  double next = a.normal();
  Rng c(0);
  c.set_state(s);
  CHECK(c.normal() == next);
}

TEST_CASE("rng: prior sampler moments at N = 1e5") {
  Rng rng(2024);
  ModelSpec m = mvn_model(3, 3.0);
  Mat draws = m.sample_prior(rng, 100000);
  Vec mean = draws.colwise().mean();
  CHECK(mean.lpNorm<Eigen::Infinity>() < 4.0 / std::sqrt(1e5));
  Mat centered = draws.rowwise() - mean.transpose();
  Mat cov = centered.transpose() * centered / (draws.rows() - 1.0);
  CHECK((cov - Mat::Identity(3, 3)).norm() < 0.1 * Mat::Identity(3, 3).norm());
}

TEST_CASE("mvn: conjugate oracle closed forms") {
  ModelSpec m = mvn_model(1, 3.0);
  GaussianPosterior prior{Vec::Zero(1), Mat::Identity(1, 1)};

  auto post = conjugate_update(prior, {vec1(0.0)}, 3.0);
  CHECK(post.mean[0] == doctest::Approx(0.0));
  CHECK(post.cov(0, 0) == doctest::Approx(0.75));

  Rng rng(7);
  std::vector<Vec> obs;
  for (int i = 0; i < 6; ++i) obs.push_back(vec1(rng.normal()));
  double obar = 0.0;
  for (const Vec& o : obs) obar += o[0];
  obar /= obs.size();
  auto post2 = conjugate_update(prior, obs, 3.0);
  CHECK(post2.mean[0] == doctest::Approx(6.0 * obar / 9.0));
  CHECK(post2.cov(0, 0) == doctest::Approx(3.0 / 9.0));

  auto same = conjugate_update(prior, {}, 3.0);
  CHECK(same.mean == prior.mean);
  CHECK(same.cov == prior.cov);

  check_lik_gradient(m, vec1(0.4), vec1(-1.2));
}

TEST_CASE("gmm: mirror modes, coincident components, FD gradient") {
  ModelSpec m = gmm_model();
  Vec mode1(2), mode2(2);
  mode1 << 1, -2;
  mode2 << -1, 2;
  for (double o = -3.0; o <= 3.0; o += 0.5)
    CHECK(m.log_lik(vec1(o), mode1) == doctest::Approx(m.log_lik(vec1(o), mode2)).epsilon(1e-12));

  CHECK(m.log_lik(vec1(0.0), Vec::Zero(2)) == doctest::Approx(-0.5 * std::log(2.0 * M_PI)));

  Rng rng(3);
  for (int i = 0; i < 5; ++i) check_lik_gradient(m, vec1(rng.normal()), rng.normal_vec(2));
}

TEST_CASE("lds: SPD precondition, transition mean, FD gradient") {
  Mat a = Mat::Identity(2, 2);
  Mat b = Mat::Identity(2, 2);
  CHECK_THROWS_AS(lds_model(a, b, Mat::Zero(2, 2), Mat::Identity(2, 2)), Error);

  ModelSpec m = lds_model(a, b, Mat::Identity(2, 2), 0.5 * Mat::Identity(2, 2));
  Rng rng(11);
  Mat x0 = Mat::Zero(4096, 2);
  x0.col(0).setConstant(1.5);
  x0.col(1).setConstant(-0.5);
  Mat x1 = m.transition->transition(x0, rng);
  Vec mean = x1.colwise().mean();
  Vec expect = a * x0.row(0).transpose();
  CHECK((mean - expect).lpNorm<Eigen::Infinity>() < 3.0 / std::sqrt(4096.0));

  for (int i = 0; i < 5; ++i) check_lik_gradient(m, rng.normal_vec(2), rng.normal_vec(2));
}

TEST_CASE("kalman: static limit matches the conjugate update") {
  Mat eye = Mat::Identity(1, 1);
  GaussianPosterior prior{Vec::Zero(1), eye};
  std::vector<std::vector<Vec>> batches{{vec1(0.8)}};
  auto kal = kalman_filter(eye, eye, 1e-12 * eye, 3.0 * eye, prior, batches);
  auto conj = conjugate_update(prior, {vec1(0.8)}, 3.0);
  REQUIRE(kal.size() == 1);
  CHECK(std::abs(kal[0].mean[0] - conj.mean[0]) < 1e-8);
  CHECK(std::abs(kal[0].cov(0, 0) - conj.cov(0, 0)) < 1e-8);

  CHECK(kalman_filter(eye, eye, eye, eye, prior, {}).empty());
}

TEST_CASE("kalman: covariances stay SPD along a random run") {
  Rng rng(5);
  Mat a = rng.normal_mat(2, 2) / std::sqrt(2.0);
  Mat b = rng.normal_mat(2, 2) / std::sqrt(2.0);
  Mat q = 0.1 * Mat::Identity(2, 2);
  GaussianPosterior prior{Vec::Zero(2), Mat::Identity(2, 2)};
  std::vector<std::vector<Vec>> batches;
  for (int i = 0; i < 10; ++i) batches.push_back({rng.normal_vec(2)});
  auto out = kalman_filter(a, b, q, q, prior, batches);
  CHECK(out.size() == 10);
  for (const auto& g : out) g.validate();  // throws on failure
}

TEST_CASE("blr: log 2 at the origin and FD gradient") {
  Rng rng(17);
  Dataset data;
  data.features = rng.normal_mat(8, 3);
  data.labels = Vec::Ones(8);
  for (int i = 0; i < 4; ++i) data.labels[i] = -1.0;
  ModelSpec m = blr_model(data);

  Vec o(4);
  o << data.features.row(2).transpose(), data.labels[2];
  CHECK(m.log_lik(o, Vec::Zero(3)) == doctest::Approx(-std::log(2.0)));
  for (int i = 0; i < 5; ++i) {
    Vec oo(4);
    int row = static_cast<int>(rng.below(8));
    oo << data.features.row(row).transpose(), data.labels[row];
    check_lik_gradient(m, oo, rng.normal_vec(3));
  }

  Dataset bad = data;
  bad.labels[0] = 0.5;
  CHECK_THROWS_AS(blr_model(bad), Error);
}

TEST_CASE("rotate_features: identity, quarter turn, isometry") {
  Rng rng(23);
  Dataset data;
  data.features = rng.normal_mat(5, 3);
  data.labels = Vec::Ones(5);

  Dataset same = rotate_features(data, 0.0);
  CHECK((same.features - data.features).lpNorm<Eigen::Infinity>() == 0.0);

  Dataset unit;
  unit.features = Mat::Zero(1, 3);
  unit.features(0, 0) = 1.0;
  unit.labels = Vec::Ones(1);
  Dataset turned = rotate_features(unit, M_PI / 2.0);
  CHECK(std::abs(turned.features(0, 0)) < 1e-12);
  CHECK(std::abs(turned.features(0, 1) - 1.0) < 1e-12);

  Dataset rot = rotate_features(data, 0.3);
  for (int i = 0; i < 5; ++i)
    CHECK(std::abs(rot.features.row(i).norm() - data.features.row(i).norm()) < 1e-12);

  Dataset thin;
  thin.features = Mat::Zero(2, 1);
  thin.labels = Vec::Ones(2);
  CHECK_THROWS_AS(rotate_features(thin, 0.1), Error);
}

TEST_CASE("analytic FP flow: endpoints and pushed-ensemble moments") {
  auto flow = analytic_fp_flow_1d(0.25, 1.0, 0.0, 3.0);
  auto post = conjugate_update({vec1(0.25), Mat::Identity(1, 1)}, {vec1(0.0)}, 3.0);

  CHECK(flow.mean_at(0.0) == doctest::Approx(0.25));
  CHECK(flow.var_at(0.0) == doctest::Approx(1.0));
  CHECK(std::abs(flow.mean_at(20.0) - post.mean[0]) < 1e-6);
  CHECK(std::abs(flow.var_at(20.0) - post.cov(0, 0)) < 1e-6);

  // Push a moment-matched prior sample through the field to an intermediate
  // time; empirical moments must track the analytic ones.
  Rng rng(101);
  const int n = 10000;
  Vec z = rng.normal_vec(n);
  z.array() -= z.mean();
  z /= std::sqrt(z.squaredNorm() / n);
  Vec particles = 0.25 + z.array();

  ode::IntegratorConfig cfg{ode::Method::Rk4, 80, 0.0, 2.0};
  for (int i = 0; i < n; ++i) {
    Vec s0 = vec1(particles[i]);
    particles[i] = ode::solve_ivp(
        [&](const Vec& s, double t) { return vec1(flow.velocity(s[0], t)); }, s0, cfg)[0];
  }
  const double mean = particles.mean();
  const double var = (particles.array() - mean).square().sum() / n;
  CHECK(std::abs(mean - flow.mean_at(2.0)) < 5e-3);
  CHECK(std::abs(var - flow.var_at(2.0)) < 5e-3);
}

TEST_CASE("gaussian posterior: symmetry validation") {
  GaussianPosterior g;
  g.mean = Vec::Zero(2);
  g.cov = Mat::Identity(2, 2);
  g.cov(0, 1) = 0.5;  // asymmetric
  CHECK_THROWS_AS(g.validate(), Error);
}
