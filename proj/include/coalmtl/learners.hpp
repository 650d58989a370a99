#ifndef COALMTL_LEARNERS_HPP
#define COALMTL_LEARNERS_HPP

#include "coalmtl/dataset.hpp"
#include "coalmtl/gaussian.hpp"

namespace coalmtl {

// E-step output for one task: Gaussian posterior (MAP mean + Laplace
// covariance) plus the Gaussianized likelihood in information form, which
// stays well defined when X'AX is rank deficient.
struct WeightPosterior {
  GaussianMessage post;
  InfoMessage like;
};

// MAP weights under a Gaussian prior. Gaussian likelihood with variance
// rho2 for regression; logistic for classification. Solved by
// Polak-Ribiere conjugate gradient with backtracking line search; throws
// ConvergenceError (carrying the final gradient norm) after 500 iterations.
VectorXd map_weights(const TaskDataset& data, const GaussianMessage& prior, double rho2);

// Inverse Hessian of the negative log posterior at w:
// C = (X'AX/rho2 + prior_cov^-1)^-1 with A = I for regression and
// A_nn = s_n(1-s_n) for classification. Falls back to a 1e-8 jitter when
// the Hessian is numerically singular.
MatrixXd laplace_covariance(const TaskDataset& data, const VectorXd& w,
                            const GaussianMessage& prior, double rho2);

// Diagonal-only variant: per-coordinate (diag(X'AX)/rho2 + 1/prior_var)^-1.
VectorXd laplace_covariance_diag(const TaskDataset& data, const VectorXd& w,
                                 const GaussianMessage& prior, double rho2);

// MAP + covariance + likelihood message in one call. `diag` selects the
// diagonal covariance variant.
WeightPosterior fit_weight_posterior(const TaskDataset& data, const GaussianMessage& prior,
                                     double rho2, bool diag);

// Laplace approximation of log p(y | X, prior): log joint at the MAP plus
// half the log determinant of the Laplace covariance.
double laplace_log_marginal(const TaskDataset& data, const GaussianMessage& prior, double rho2);

// Log likelihood of a dataset at fixed weights (Gaussian or Bernoulli).
double data_log_likelihood(const TaskDataset& data, const VectorXd& w, double rho2);

// Linear predictor helpers.
double linear_score(const SparseMatrix& x, int row, const VectorXd& w);
double logistic(double score);

}  // namespace coalmtl

#endif
