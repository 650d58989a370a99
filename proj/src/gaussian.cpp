#include "coalmtl/gaussian.hpp"

#include <cmath>

#include "coalmtl/errors.hpp"

namespace coalmtl {

DiffusionKernel DiffusionKernel::diagonal(VectorXd rates) {
  if ((rates.array() <= 0.0).any())
    throw NumericalError("diagonal diffusion kernel requires strictly positive entries");
  DiffusionKernel k;
  k.kind_ = CovKind::Diag;
  k.dim_ = static_cast<int>(rates.size());
  k.diag_ = std::move(rates);
  return k;
}

DiffusionKernel DiffusionKernel::full(MatrixXd cov) {
  if (cov.rows() != cov.cols()) throw NumericalError("diffusion kernel must be square");
  if (!cov.isApprox(cov.transpose(), 1e-10))
    throw NumericalError("diffusion kernel must be symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  if (eig.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, eig.eigenvalues().maxCoeff()))
    throw NumericalError("diffusion kernel must be PSD");
  DiffusionKernel k;
  k.kind_ = CovKind::Full;
  k.dim_ = static_cast<int>(cov.rows());
  k.full_ = std::move(cov);
  return k;
}

DiffusionKernel DiffusionKernel::isotropic(int dim, double scale, CovKind kind) {
  if (kind == CovKind::Diag) return diagonal(VectorXd::Constant(dim, scale));
  return full(MatrixXd::Identity(dim, dim) * scale);
}

MatrixXd DiffusionKernel::dense() const {
  if (kind_ == CovKind::Diag) return diag_.asDiagonal();
  return full_;
}

GaussianMessage GaussianMessage::diagonal(VectorXd mean, VectorXd var) {
  if (mean.size() != var.size()) throw NumericalError("mean/variance size mismatch");
  if ((var.array() < 0.0).any()) throw NumericalError("negative variance");
  GaussianMessage m;
  m.mean = std::move(mean);
  m.kind = CovKind::Diag;
  m.var_diag = std::move(var);
  return m;
}

GaussianMessage GaussianMessage::full_cov(VectorXd mean, MatrixXd var) {
  if (mean.size() != var.rows() || var.rows() != var.cols())
    throw NumericalError("mean/covariance size mismatch");
  GaussianMessage m;
  m.mean = std::move(mean);
  m.kind = CovKind::Full;
  m.var_full = 0.5 * (var + var.transpose());
  return m;
}

GaussianMessage GaussianMessage::point(VectorXd mean, CovKind kind) {
  int d = static_cast<int>(mean.size());
  if (kind == CovKind::Diag) return diagonal(std::move(mean), VectorXd::Zero(d));
  return full_cov(std::move(mean), MatrixXd::Zero(d, d));
}

GaussianMessage GaussianMessage::flat_prior(int dim, CovKind kind) {
  GaussianMessage m = point(VectorXd::Zero(dim), kind);
  m.flat = true;
  return m;
}

GaussianMessage GaussianMessage::isotropic(VectorXd mean, double var, CovKind kind) {
  int d = static_cast<int>(mean.size());
  if (kind == CovKind::Diag) return diagonal(std::move(mean), VectorXd::Constant(d, var));
  return full_cov(std::move(mean), MatrixXd::Identity(d, d) * var);
}

MatrixXd GaussianMessage::dense_cov() const {
  if (kind == CovKind::Diag) return var_diag.asDiagonal();
  return var_full;
}

GaussianMessage GaussianMessage::to_full() const {
  if (kind == CovKind::Full) return *this;
  GaussianMessage m = full_cov(mean, var_diag.asDiagonal());
  m.flat = flat;
  return m;
}

GaussianMessage GaussianMessage::inflated(double delta, const DiffusionKernel& kernel) const {
  if (delta < 0.0) throw NumericalError("negative branch length in message inflation");
  if (flat) return *this;
  if (kernel.dim() != dim()) throw NumericalError("kernel/message dimension mismatch");
  GaussianMessage out = *this;
  if (kind == CovKind::Diag) {
    if (!kernel.is_diag())
      throw NumericalError("diagonal message requires a diagonal kernel");
    out.var_diag = var_diag + delta * kernel.diag();
  } else {
    out.var_full = var_full + delta * kernel.dense();
  }
  return out;
}

GaussianMessage combine(const GaussianMessage& a, const GaussianMessage& b) {
  if (a.flat) return b;
  if (b.flat) return a;
  if (a.dim() != b.dim()) throw NumericalError("message dimension mismatch in combine");
  if (a.kind != b.kind) return combine(a.to_full(), b.to_full());

  if (a.kind == CovKind::Diag) {
    int d = a.dim();
    VectorXd mean(d), var(d);
    for (int i = 0; i < d; ++i) {
      double s = a.var_diag[i] + b.var_diag[i];
      if (s <= 0.0) {
        // Both point masses; collapse to their midpoint.
        var[i] = 0.0;
        mean[i] = 0.5 * (a.mean[i] + b.mean[i]);
      } else {
        var[i] = a.var_diag[i] * b.var_diag[i] / s;
        mean[i] = a.mean[i] + a.var_diag[i] / s * (b.mean[i] - a.mean[i]);
      }
    }
    return GaussianMessage::diagonal(std::move(mean), std::move(var));
  }

  MatrixXd s = a.var_full + b.var_full;
  Eigen::LDLT<MatrixXd> ldlt(s);
  if (ldlt.info() != Eigen::Success)
    throw NumericalError("singular combined covariance in message product");
  // V = Va - Va S^-1 Va,  mu = mu_a + Va S^-1 (mu_b - mu_a); exact for
  // point masses on either side.
  MatrixXd sinv_va = ldlt.solve(a.var_full);
  MatrixXd var = a.var_full - a.var_full * sinv_va;
  VectorXd mean = a.mean + a.var_full * ldlt.solve(b.mean - a.mean);
  return GaussianMessage::full_cov(std::move(mean), std::move(var));
}

double log_density(const GaussianMessage& m, const VectorXd& x) {
  if (m.flat) throw NumericalError("flat message has no density");
  static const double kLog2Pi = std::log(2.0 * M_PI);
  VectorXd d = x - m.mean;
  if (m.kind == CovKind::Diag) {
    double out = 0.0;
    for (int i = 0; i < m.dim(); ++i) {
      if (m.var_diag[i] <= 0.0) throw NumericalError("degenerate variance in log_density");
      out += -0.5 * (kLog2Pi + std::log(m.var_diag[i]) + d[i] * d[i] / m.var_diag[i]);
    }
    return out;
  }
  Eigen::LDLT<MatrixXd> ldlt(m.var_full);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
    throw NumericalError("degenerate covariance in log_density");
  double logdet = ldlt.vectorD().array().log().sum();
  double quad = d.dot(ldlt.solve(d));
  return -0.5 * (m.dim() * kLog2Pi + logdet + quad);
}

InfoMessage InfoMessage::zero(int dim, CovKind kind) {
  InfoMessage m;
  m.kind = kind;
  m.shift = VectorXd::Zero(dim);
  if (kind == CovKind::Diag)
    m.prec_diag = VectorXd::Zero(dim);
  else
    m.prec_full = MatrixXd::Zero(dim, dim);
  return m;
}

InfoMessage InfoMessage::diagonal(VectorXd prec, VectorXd shift) {
  if (prec.size() != shift.size()) throw NumericalError("precision/shift size mismatch");
  if ((prec.array() < 0.0).any()) throw NumericalError("negative precision");
  InfoMessage m;
  m.kind = CovKind::Diag;
  m.prec_diag = std::move(prec);
  m.shift = std::move(shift);
  return m;
}

InfoMessage InfoMessage::full_prec(MatrixXd prec, VectorXd shift) {
  if (prec.rows() != prec.cols() || prec.rows() != shift.size())
    throw NumericalError("precision/shift size mismatch");
  InfoMessage m;
  m.kind = CovKind::Full;
  m.prec_full = 0.5 * (prec + prec.transpose());
  m.shift = std::move(shift);
  return m;
}

InfoMessage InfoMessage::from_moment(const GaussianMessage& g) {
  if (g.flat) return zero(g.dim(), g.kind);
  if (g.is_diag()) {
    VectorXd prec = g.var_diag.cwiseInverse();
    if (!prec.allFinite()) throw NumericalError("point mass has no information form");
    return diagonal(prec, prec.cwiseProduct(g.mean));
  }
  Eigen::LDLT<MatrixXd> ldlt(g.var_full);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
    throw NumericalError("singular covariance has no information form");
  MatrixXd prec = ldlt.solve(MatrixXd::Identity(g.dim(), g.dim()));
  return full_prec(prec, ldlt.solve(g.mean));
}

InfoMessage& InfoMessage::operator+=(const InfoMessage& other) {
  if (other.dim() != dim()) throw NumericalError("info message dimension mismatch");
  if (other.kind != kind) throw NumericalError("info message kind mismatch");
  if (kind == CovKind::Diag)
    prec_diag += other.prec_diag;
  else
    prec_full += other.prec_full;
  shift += other.shift;
  return *this;
}

InfoMessage InfoMessage::inflated(double delta, const DiffusionKernel& kernel) const {
  if (delta < 0.0) throw NumericalError("negative branch length in message inflation");
  InfoMessage out = *this;
  if (kind == CovKind::Diag) {
    if (!kernel.is_diag()) throw NumericalError("diagonal message requires a diagonal kernel");
    VectorXd denom = (VectorXd::Ones(dim()) + delta * prec_diag.cwiseProduct(kernel.diag()));
    out.prec_diag = prec_diag.cwiseQuotient(denom);
    out.shift = shift.cwiseQuotient(denom);
  } else {
    MatrixXd a = MatrixXd::Identity(dim(), dim()) + delta * prec_full * kernel.dense();
    Eigen::PartialPivLU<MatrixXd> lu(a);
    out.prec_full = lu.solve(prec_full);
    out.prec_full = 0.5 * (out.prec_full + out.prec_full.transpose().eval());
    out.shift = lu.solve(shift);
  }
  return out;
}

GaussianMessage InfoMessage::to_moment() const {
  if (kind == CovKind::Diag) {
    if ((prec_diag.array() <= 0.0).any())
      throw NumericalError("singular precision: moment form undefined");
    VectorXd var = prec_diag.cwiseInverse();
    return GaussianMessage::diagonal(var.cwiseProduct(shift), var);
  }
  Eigen::LDLT<MatrixXd> ldlt(prec_full);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
    throw NumericalError("singular precision: moment form undefined");
  MatrixXd var = ldlt.solve(MatrixXd::Identity(dim(), dim()));
  return GaussianMessage::full_cov(ldlt.solve(shift), var);
}

}  // namespace coalmtl
