#include "coalmtl/learners.hpp"

#include <cmath>
#include <iostream>

#include "coalmtl/errors.hpp"
#include "coalmtl/util.hpp"

namespace coalmtl {

double linear_score(const SparseMatrix& x, int row, const VectorXd& w) {
  double s = 0.0;
  for (SparseMatrix::InnerIterator it(x, row); it; ++it) s += it.value() * w[it.col()];
  return s;
}

double logistic(double score) {
  if (score >= 0.0) return 1.0 / (1.0 + std::exp(-score));
  double e = std::exp(score);
  return e / (1.0 + e);
}

namespace {

double log1p_exp(double v) {
  // log(1 + e^v) without overflow.
  if (v > 35.0) return v;
  if (v < -35.0) return std::exp(v);
  return std::log1p(std::exp(v));
}

// Negative log posterior (up to a constant) and its gradient, solved in
// Jacobi-preconditioned coordinates w = mean + scale .* v where scale is
// the inverse square root of the Hessian diagonal. This keeps conjugate
// gradient well conditioned when prior scales span orders of magnitude.
class MapObjective {
 public:
  MapObjective(const TaskDataset& data, const GaussianMessage& prior, double rho2)
      : data_(data), prior_(prior), rho2_(rho2) {
    if (prior.flat) throw NumericalError("map_weights requires a proper prior");
    int d = prior.dim();
    VectorXd prior_prec_diag;
    if (prior.is_diag()) {
      if ((prior.var_diag.array() <= 0.0).any())
        throw NumericalError("prior covariance must be invertible");
      prior_prec_diag = prior.var_diag.cwiseInverse();
    } else {
      ldlt_.compute(prior.var_full);
      if (ldlt_.info() != Eigen::Success || (ldlt_.vectorD().array() <= 0.0).any())
        throw NumericalError("prior covariance must be invertible");
      prior_prec_diag = ldlt_.solve(MatrixXd::Identity(d, d)).diagonal();
    }
    if (data.kind == TaskKind::Regression && rho2 <= 0.0)
      throw NumericalError("regression requires rho2 > 0");

    VectorXd hess_diag = prior_prec_diag;
    double a_scale = data.kind == TaskKind::Regression ? 1.0 / rho2 : 0.25;
    for (int n = 0; n < data.rows(); ++n)
      for (SparseMatrix::InnerIterator it(data.x, n); it; ++it)
        hess_diag[it.col()] += a_scale * it.value() * it.value();
    scale_ = hess_diag.cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  }

  VectorXd to_weights(const VectorXd& v) const { return prior_.mean + scale_.cwiseProduct(v); }

  VectorXd prior_prec_apply(const VectorXd& d) const {
    if (prior_.is_diag()) return d.cwiseQuotient(prior_.var_diag);
    return ldlt_.solve(d);
  }

  double value(const VectorXd& v) const {
    VectorXd w = to_weights(v);
    VectorXd d = w - prior_.mean;
    double out = 0.5 * d.dot(prior_prec_apply(d));
    for (int n = 0; n < data_.rows(); ++n) {
      double f = linear_score(data_.x, n, w);
      if (data_.kind == TaskKind::Regression) {
        double r = f - data_.y[n];
        out += 0.5 * r * r / rho2_;
      } else {
        out += log1p_exp(-data_.y[n] * f);
      }
    }
    return out;
  }

  VectorXd gradient_w(const VectorXd& w) const {
    VectorXd g = prior_prec_apply(w - prior_.mean);
    for (int n = 0; n < data_.rows(); ++n) {
      double f = linear_score(data_.x, n, w);
      double coef;
      if (data_.kind == TaskKind::Regression) {
        coef = (f - data_.y[n]) / rho2_;
      } else {
        coef = -data_.y[n] * logistic(-data_.y[n] * f);
      }
      for (SparseMatrix::InnerIterator it(data_.x, n); it; ++it)
        g[it.col()] += coef * it.value();
    }
    return g;
  }

  VectorXd gradient(const VectorXd& v) const {
    return scale_.cwiseProduct(gradient_w(to_weights(v)));
  }

  // Curvature along a preconditioned direction: exact for regression; the
  // local logistic Hessian at w otherwise (Armijo still guards the step).
  double curvature(const VectorXd& dir, const VectorXd& w) const {
    VectorXd wdir = scale_.cwiseProduct(dir);
    double out = wdir.dot(prior_prec_apply(wdir));
    for (int n = 0; n < data_.rows(); ++n) {
      double xd = linear_score(data_.x, n, wdir);
      double a;
      if (data_.kind == TaskKind::Regression) {
        a = 1.0 / rho2_;
      } else {
        double s = logistic(linear_score(data_.x, n, w));
        a = std::max(s * (1.0 - s), 1e-8);
      }
      out += a * xd * xd;
    }
    return out;
  }

  bool converged_w(const VectorXd& v, double tol) const {
    VectorXd w = to_weights(v);
    return gradient_w(w).norm() <= tol * std::max(1.0, w.norm());
  }

 private:
  const TaskDataset& data_;
  const GaussianMessage& prior_;
  double rho2_;
  Eigen::LDLT<MatrixXd> ldlt_;
  VectorXd scale_;
};

}  // namespace

VectorXd map_weights(const TaskDataset& data, const GaussianMessage& prior, double rho2) {
  data.validate();
  if (data.dim() != prior.dim() && data.rows() > 0)
    throw DataError("design matrix dimension does not match prior");
  if (data.rows() == 0) return prior.mean;

  MapObjective obj(data, prior, rho2);
  const int max_iter = 500;
  const double tol = 1e-6;

  VectorXd v = VectorXd::Zero(prior.dim());
  VectorXd g = obj.gradient(v);
  VectorXd dir = -g;
  double fv = obj.value(v);

  const bool quadratic = data.kind == TaskKind::Regression;
  for (int iter = 0; iter < max_iter; ++iter) {
    if (obj.converged_w(v, tol)) return obj.to_weights(v);
    double slope = g.dot(dir);
    if (slope >= 0.0) {  // restart on a non-descent direction
      dir = -g;
      slope = g.dot(dir);
    }
    // Curvature-exact initial step; for the quadratic case it is the line
    // minimizer, otherwise backtrack until Armijo holds.
    double curv = obj.curvature(dir, obj.to_weights(v));
    double alpha = curv > 0.0 ? -slope / curv : 1.0;
    double fnew = 0.0;
    VectorXd vnew;
    bool ok = quadratic;
    if (quadratic) {
      vnew = v + alpha * dir;
      fnew = obj.value(vnew);
    } else {
      // Armijo with an absolute allowance for rounding in the objective;
      // without it the search stalls once true decreases drop below the
      // value's ulp.
      double noise = 1e-12 * (std::abs(fv) + 1.0);
      for (int bt = 0; bt < 60; ++bt) {
        vnew = v + alpha * dir;
        fnew = obj.value(vnew);
        if (fnew <= fv + 1e-4 * alpha * slope + noise) {
          ok = true;
          break;
        }
        alpha *= 0.5;
      }
    }
    if (!ok) {
      if (dir == -g) break;  // not even steepest descent improves: fp floor
      dir = -g;
      continue;
    }
    VectorXd gnew = obj.gradient(vnew);
    double beta = std::max(0.0, gnew.dot(gnew - g) / g.squaredNorm());
    dir = -gnew + beta * dir;
    v = std::move(vnew);
    g = std::move(gnew);
    fv = fnew;
  }
  if (obj.converged_w(v, tol)) return obj.to_weights(v);
  throw ConvergenceError("conjugate gradient did not converge; gradient norm " +
                         fmt_double(obj.gradient_w(obj.to_weights(v)).norm()));
}

namespace {

MatrixXd data_curvature(const TaskDataset& data, const VectorXd& w, double rho2) {
  int d = data.dim();
  MatrixXd h = MatrixXd::Zero(d, d);
  for (int n = 0; n < data.rows(); ++n) {
    double a;
    if (data.kind == TaskKind::Regression) {
      a = 1.0 / rho2;
    } else {
      double s = logistic(linear_score(data.x, n, w));
      a = s * (1.0 - s);
    }
    for (SparseMatrix::InnerIterator i1(data.x, n); i1; ++i1)
      for (SparseMatrix::InnerIterator i2(data.x, n); i2; ++i2)
        h(i1.col(), i2.col()) += a * i1.value() * i2.value();
  }
  return h;
}

VectorXd data_curvature_diag(const TaskDataset& data, const VectorXd& w, double rho2) {
  VectorXd h = VectorXd::Zero(data.dim());
  for (int n = 0; n < data.rows(); ++n) {
    double a;
    if (data.kind == TaskKind::Regression) {
      a = 1.0 / rho2;
    } else {
      double s = logistic(linear_score(data.x, n, w));
      a = s * (1.0 - s);
    }
    for (SparseMatrix::InnerIterator it(data.x, n); it; ++it)
      h[it.col()] += a * it.value() * it.value();
  }
  return h;
}

}  // namespace

MatrixXd laplace_covariance(const TaskDataset& data, const VectorXd& w,
                            const GaussianMessage& prior, double rho2) {
  if (!w.allFinite()) throw NumericalError("laplace_covariance requires finite weights");
  int d = static_cast<int>(w.size());
  MatrixXd h = data_curvature(data, w, rho2);
  if (prior.is_diag()) {
    h += MatrixXd(prior.var_diag.cwiseInverse().asDiagonal());
  } else {
    Eigen::LDLT<MatrixXd> p(prior.var_full);
    h += p.solve(MatrixXd::Identity(d, d));
  }
  h = 0.5 * (h + h.transpose().eval());
  Eigen::LDLT<MatrixXd> ldlt(h);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any()) {
    std::cerr << "warning: singular Laplace Hessian, adding 1e-8 jitter\n";
    ldlt.compute(h + 1e-8 * MatrixXd::Identity(d, d));
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("Laplace Hessian singular even after jitter");
  }
  MatrixXd c = ldlt.solve(MatrixXd::Identity(d, d));
  return 0.5 * (c + c.transpose().eval());
}

VectorXd laplace_covariance_diag(const TaskDataset& data, const VectorXd& w,
                                 const GaussianMessage& prior, double rho2) {
  if (!w.allFinite()) throw NumericalError("laplace_covariance requires finite weights");
  VectorXd h = data_curvature_diag(data, w, rho2);
  if (prior.is_diag())
    h += prior.var_diag.cwiseInverse();
  else
    h += prior.var_full.diagonal().cwiseInverse();
  return h.cwiseInverse();
}

WeightPosterior fit_weight_posterior(const TaskDataset& data, const GaussianMessage& prior,
                                     double rho2, bool diag) {
  WeightPosterior out;
  VectorXd w = map_weights(data, prior, rho2);
  if (diag) {
    out.post = GaussianMessage::diagonal(w, laplace_covariance_diag(data, w, prior, rho2));
    // Diagonalized likelihood site, centered at the MAP.
    VectorXd j = data_curvature_diag(data, w, rho2);
    VectorXd h = j.cwiseProduct(w);
    out.like = InfoMessage::diagonal(std::move(j), std::move(h));
  } else {
    out.post = GaussianMessage::full_cov(w, laplace_covariance(data, w, prior, rho2));
    MatrixXd j = data_curvature(data, w, rho2);
    VectorXd h;
    if (data.kind == TaskKind::Regression) {
      h = VectorXd::Zero(w.size());
      for (int n = 0; n < data.rows(); ++n)
        for (SparseMatrix::InnerIterator it(data.x, n); it; ++it)
          h[it.col()] += it.value() * data.y[n] / rho2;
    } else {
      h = j * w;
    }
    out.like = InfoMessage::full_prec(std::move(j), std::move(h));
  }
  return out;
}

double laplace_log_marginal(const TaskDataset& data, const GaussianMessage& prior, double rho2) {
  VectorXd w = map_weights(data, prior, rho2);
  MatrixXd c = laplace_covariance(data, w, prior, rho2);
  double log_joint = data_log_likelihood(data, w, rho2) + log_density(prior, w);
  Eigen::LDLT<MatrixXd> ldlt(c);
  double logdet = ldlt.vectorD().array().log().sum();
  int d = static_cast<int>(w.size());
  return log_joint + 0.5 * d * std::log(2.0 * M_PI) + 0.5 * logdet;
}

double data_log_likelihood(const TaskDataset& data, const VectorXd& w, double rho2) {
  double out = 0.0;
  for (int n = 0; n < data.rows(); ++n) {
    double f = linear_score(data.x, n, w);
    if (data.kind == TaskKind::Regression) {
      double r = f - data.y[n];
      out += -0.5 * (std::log(2.0 * M_PI * rho2) + r * r / rho2);
    } else {
      out += -log1p_exp(-data.y[n] * f);
    }
  }
  return out;
}

}  // namespace coalmtl
