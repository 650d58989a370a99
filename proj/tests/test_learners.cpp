#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "coalmtl/learners.hpp"
#include "test_util.hpp"

using namespace coalmtl;
using namespace coalmtl::testing;

namespace {

TaskDataset dense_task(const MatrixXd& x, const VectorXd& y, TaskKind kind) {
  TaskDataset t;
  t.name = "t";
  t.kind = kind;
  t.y = y;
  std::vector<Eigen::Triplet<double>> trips;
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c)
      if (x(r, c) != 0.0) trips.emplace_back(r, c, x(r, c));
  t.x.resize(x.rows(), x.cols());
  t.x.setFromTriplets(trips.begin(), trips.end());
  return t;
}

TaskDataset random_task(int n, int d, TaskKind kind, RandomStream& rng, double w_scale = 1.0) {
  MatrixXd x(n, d);
  VectorXd w(d);
  for (int i = 0; i < d; ++i) w[i] = w_scale * rng.normal();
  VectorXd y(n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) x(r, c) = rng.normal();
    double f = x.row(r).dot(w);
    if (kind == TaskKind::Regression)
      y[r] = f + 0.3 * rng.normal();
    else
      y[r] = rng.uniform() < logistic(f) ? 1.0 : -1.0;
  }
  return dense_task(x, y, kind);
}

double neg_log_posterior(const TaskDataset& t, const GaussianMessage& prior, double rho2,
                         const VectorXd& w) {
  double out = -log_density(prior, w);
  out -= data_log_likelihood(t, w, rho2);
  return out;
}

}  // namespace

TEST_CASE("map_weights: empty data returns the prior mean") {
  TaskDataset t = dense_task(MatrixXd::Zero(0, 3), VectorXd::Zero(0), TaskKind::Regression);
  GaussianMessage prior = GaussianMessage::isotropic((VectorXd(3) << 1, 2, 3).finished(), 2.0,
                                                     CovKind::Full);
  VectorXd w = map_weights(t, prior, 1.0);
  CHECK((w - prior.mean).norm() == 0.0);
}

TEST_CASE("map_weights: 1-D ridge hand value") {
  TaskDataset t = dense_task(MatrixXd::Constant(1, 1, 1.0), VectorXd::Constant(1, 2.0),
                             TaskKind::Regression);
  GaussianMessage prior = GaussianMessage::isotropic(VectorXd::Zero(1), 1.0, CovKind::Diag);
  VectorXd w = map_weights(t, prior, 1.0);
  CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("map_weights equals the closed-form ridge solution") {
  RandomStream rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    int d = 1 + static_cast<int>(rng.uniform_index(10));
    int n = 3 + static_cast<int>(rng.uniform_index(30));
    double rho2 = 0.2 + rng.uniform();
    MatrixXd x(n, d);
    VectorXd y(n);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < d; ++c) x(r, c) = rng.normal();
      y[r] = rng.normal() * 2.0;
    }
    VectorXd m0(d);
    for (int i = 0; i < d; ++i) m0[i] = 0.5 * rng.normal();
    MatrixXd p0 = random_spd(d, rng);

    TaskDataset t = dense_task(x, y, TaskKind::Regression);
    VectorXd got = map_weights(t, GaussianMessage::full_cov(m0, p0), rho2);
    VectorXd want = ridge_oracle(x, y, m0, p0, rho2);
    CHECK((got - want).lpNorm<Eigen::Infinity>() < 1e-8 * std::max(1.0, want.norm()));
  }
}

TEST_CASE("map_weights: logistic solutions satisfy first-order optimality") {
  RandomStream rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    int d = 1 + static_cast<int>(rng.uniform_index(5));
    TaskDataset t = random_task(20, d, TaskKind::Classification, rng);
    GaussianMessage prior = GaussianMessage::isotropic(VectorXd::Zero(d), 2.0, CovKind::Diag);
    VectorXd w = map_weights(t, prior, 1.0);
    auto f = [&](const VectorXd& v) { return neg_log_posterior(t, prior, 1.0, v); };
    VectorXd g = finite_difference_gradient(f, w);
    CHECK(g.norm() < 2e-5 * std::max(1.0, w.norm()));
  }
}

TEST_CASE("laplace_covariance: hand values") {
  // Regression: C = (1/rho2 + 1/prior)^-1 = 0.5.
  TaskDataset reg = dense_task(MatrixXd::Constant(1, 1, 1.0), VectorXd::Constant(1, 2.0),
                               TaskKind::Regression);
  GaussianMessage prior = GaussianMessage::isotropic(VectorXd::Zero(1), 1.0, CovKind::Diag);
  MatrixXd c = laplace_covariance(reg, VectorXd::Zero(1), prior, 1.0);
  CHECK(c(0, 0) == doctest::Approx(0.5).epsilon(1e-12));

  // Classification at w = 0: every s_n = 0.5 so A_nn = 1/4.
  TaskDataset cls = dense_task(MatrixXd::Constant(1, 1, 1.0), VectorXd::Constant(1, 1.0),
                               TaskKind::Classification);
  MatrixXd cc = laplace_covariance(cls, VectorXd::Zero(1), prior, 1.0);
  CHECK(cc(0, 0) == doctest::Approx(1.0 / (0.25 + 1.0)).epsilon(1e-12));
}

TEST_CASE("laplace_covariance matches the finite-difference Hessian inverse") {
  RandomStream rng(7);
  for (int rep = 0; rep < 8; ++rep) {
    int d = 1 + static_cast<int>(rng.uniform_index(4));
    TaskKind kind = rep % 2 == 0 ? TaskKind::Regression : TaskKind::Classification;
    TaskDataset t = random_task(12, d, kind, rng);
    GaussianMessage prior = GaussianMessage::full_cov(VectorXd::Zero(d), random_spd(d, rng));
    double rho2 = 0.7;
    VectorXd w = map_weights(t, prior, rho2);

    auto f = [&](const VectorXd& v) { return neg_log_posterior(t, prior, rho2, v); };
    const double h = 1e-5;
    MatrixXd hess(d, d);
    for (int i = 0; i < d; ++i) {
      auto fi = [&](const VectorXd& v) {
        VectorXd hi = v, lo = v;
        hi[i] += h;
        lo[i] -= h;
        return (f(hi) - f(lo)) / (2.0 * h);
      };
      hess.col(i) = finite_difference_gradient(fi, w, h);
    }
    hess = 0.5 * (hess + hess.transpose().eval());
    MatrixXd c = laplace_covariance(t, w, prior, rho2);
    MatrixXd expect = hess.inverse();
    CHECK((c - expect).lpNorm<Eigen::Infinity>() <
          1e-4 * std::max(1.0, expect.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("laplace_covariance is symmetric PSD; diag variant matches diagonal structure") {
  RandomStream rng(9);
  TaskDataset t = random_task(10, 3, TaskKind::Classification, rng);
  GaussianMessage prior = GaussianMessage::isotropic(VectorXd::Zero(3), 1.5, CovKind::Diag);
  VectorXd w = map_weights(t, prior, 1.0);
  MatrixXd c = laplace_covariance(t, w, prior, 1.0);
  CHECK((c - c.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(c);
  CHECK(eig.eigenvalues().minCoeff() > 0.0);

  // With a diagonal design (one feature per row) X'AX is diagonal, so the
  // diag variant equals the full result's diagonal.
  MatrixXd xd = MatrixXd::Zero(3, 3);
  xd(0, 0) = 1.0;
  xd(1, 1) = 2.0;
  xd(2, 2) = 0.5;
  TaskDataset td = dense_task(xd, (VectorXd(3) << 1, -1, 1).finished(), TaskKind::Classification);
  VectorXd wd = map_weights(td, prior, 1.0);
  MatrixXd cf = laplace_covariance(td, wd, prior, 1.0);
  VectorXd cd = laplace_covariance_diag(td, wd, prior, 1.0);
  CHECK((cf.diagonal() - cd).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK(std::abs(cf(0, 1)) < 1e-12);
}

TEST_CASE("likelihood message: regression information form is X'y/rho2, X'X/rho2") {
  RandomStream rng(11);
  MatrixXd x(4, 2);
  VectorXd y(4);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 2; ++c) x(r, c) = rng.normal();
    y[r] = rng.normal();
  }
  double rho2 = 0.6;
  TaskDataset t = dense_task(x, y, TaskKind::Regression);
  GaussianMessage prior = GaussianMessage::isotropic(VectorXd::Zero(2), 1.0, CovKind::Full);
  WeightPosterior p = fit_weight_posterior(t, prior, rho2, false);
  CHECK((p.like.prec_full - x.transpose() * x / rho2).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK((p.like.shift - x.transpose() * y / rho2).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("Laplace marginal likelihood is close to quadrature (logistic, D=1)") {
  RandomStream rng(13);
  int within = 0;
  const int total = 20;
  for (int rep = 0; rep < total; ++rep) {
    int n = 1 + static_cast<int>(rng.uniform_index(3));
    MatrixXd x(n, 1);
    VectorXd y(n);
    for (int r = 0; r < n; ++r) {
      x(r, 0) = 0.3 + 1.2 * rng.uniform();
      y[r] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    }
    double sigma2 = 0.3 + 0.9 * rng.uniform();
    TaskDataset t = dense_task(x, y, TaskKind::Classification);
    GaussianMessage prior = GaussianMessage::isotropic(VectorXd::Zero(1), sigma2, CovKind::Full);

    double laplace = laplace_log_marginal(t, prior, 1.0);

    // Simpson quadrature of the true marginal over a wide bracket.
    double sd = std::sqrt(sigma2);
    double lo = -12.0 * sd, hi = 12.0 * sd;
    const int steps = 4000;  // even
    double hstep = (hi - lo) / steps;
    double acc = 0.0;
    for (int i = 0; i <= steps; ++i) {
      double w = lo + i * hstep;
      VectorXd wv = VectorXd::Constant(1, w);
      double v = std::exp(data_log_likelihood(t, wv, 1.0) + log_density(prior, wv));
      double coef = (i == 0 || i == steps) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      acc += coef * v;
    }
    double quad = std::log(acc * hstep / 3.0);
    // 5% relative error on the marginal itself, not its log.
    if (std::abs(std::expm1(laplace - quad)) <= 0.05) ++within;
  }
  CHECK(within == total);
}
