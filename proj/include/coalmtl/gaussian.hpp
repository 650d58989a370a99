#ifndef COALMTL_GAUSSIAN_HPP
#define COALMTL_GAUSSIAN_HPP

#include <Eigen/Dense>

namespace coalmtl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class CovKind { Diag, Full };

// Brownian diffusion covariance over tree branches; either a positive
// diagonal (stored as a vector) or a full symmetric PSD matrix.
class DiffusionKernel {
 public:
  static DiffusionKernel diagonal(VectorXd rates);
  static DiffusionKernel full(MatrixXd cov);
  static DiffusionKernel isotropic(int dim, double scale, CovKind kind);

  CovKind kind() const { return kind_; }
  int dim() const { return dim_; }
  bool is_diag() const { return kind_ == CovKind::Diag; }
  const VectorXd& diag() const { return diag_; }
  const MatrixXd& matrix() const { return full_; }
  MatrixXd dense() const;

 private:
  CovKind kind_ = CovKind::Diag;
  int dim_ = 0;
  VectorXd diag_;
  MatrixXd full_;
};

// Gaussian in moment form: mean plus diagonal or full covariance. A flat
// message (infinite variance) is the multiplicative identity; zero variance
// is a point mass. Immutable value semantics.
struct GaussianMessage {
  VectorXd mean;
  CovKind kind = CovKind::Diag;
  VectorXd var_diag;
  MatrixXd var_full;
  bool flat = false;

  static GaussianMessage diagonal(VectorXd mean, VectorXd var);
  static GaussianMessage full_cov(VectorXd mean, MatrixXd var);
  static GaussianMessage point(VectorXd mean, CovKind kind);
  static GaussianMessage flat_prior(int dim, CovKind kind);
  static GaussianMessage isotropic(VectorXd mean, double var, CovKind kind);

  int dim() const { return static_cast<int>(mean.size()); }
  bool is_diag() const { return kind == CovKind::Diag; }
  MatrixXd dense_cov() const;
  GaussianMessage to_full() const;

  // Covariance grown by delta * kernel (Brownian drift over a branch).
  GaussianMessage inflated(double delta, const DiffusionKernel& kernel) const;
};

// Product of two Gaussian densities, renormalized. Handles point masses on
// either side; if both inputs are point masses the result collapses to the
// average of the means.
GaussianMessage combine(const GaussianMessage& a, const GaussianMessage& b);

// log N(x; mean, cov) for a message used as a density (must not be flat).
double log_density(const GaussianMessage& m, const VectorXd& x);

// Gaussian in information form (precision J, shift h = J*mu). Supports
// singular J (partially flat directions), which moment form cannot; used
// for likelihood messages where X'AX may be rank deficient.
struct InfoMessage {
  CovKind kind = CovKind::Diag;
  VectorXd prec_diag;
  MatrixXd prec_full;
  VectorXd shift;

  static InfoMessage zero(int dim, CovKind kind);  // flat
  static InfoMessage diagonal(VectorXd prec, VectorXd shift);
  static InfoMessage full_prec(MatrixXd prec, VectorXd shift);
  static InfoMessage from_moment(const GaussianMessage& m);

  int dim() const { return static_cast<int>(shift.size()); }
  bool is_diag() const { return kind == CovKind::Diag; }

  InfoMessage& operator+=(const InfoMessage& other);

  // Brownian inflation in information form: J' = (I + J delta K)^-1 J,
  // h' = (I + J delta K)^-1 h. Well defined for singular J.
  InfoMessage inflated(double delta, const DiffusionKernel& kernel) const;

  // Moment form; requires strictly positive definite precision.
  GaussianMessage to_moment() const;
};

}  // namespace coalmtl

#endif
