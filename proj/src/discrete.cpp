#include "coalmtl/discrete.hpp"

#include <cmath>

#include "coalmtl/errors.hpp"

namespace coalmtl {

void DiscreteKernel::validate() const {
  if (rate.size() != static_cast<Eigen::Index>(equilibrium.size()))
    throw NumericalError("discrete kernel needs one rate per feature");
  if ((rate.array() <= 0.0).any()) throw NumericalError("discrete kernel rates must be positive");
  for (const auto& q : equilibrium) {
    if ((q.array() < 0.0).any() || std::abs(q.sum() - 1.0) > 1e-9)
      throw NumericalError("equilibrium distributions must be simplex vectors");
  }
}

Eigen::MatrixXd discrete_transition_matrix(double delta, int feature,
                                           const DiscreteKernel& kernel) {
  if (delta < 0.0) throw NumericalError("discrete transition requires delta >= 0");
  if (feature < 0 || feature >= kernel.feature_count())
    throw NumericalError("feature index out of range");
  const Eigen::VectorXd& q = kernel.equilibrium[feature];
  int v = static_cast<int>(q.size());
  double decay = std::exp(-delta * kernel.rate[feature]);
  Eigen::MatrixXd out = decay * Eigen::MatrixXd::Identity(v, v);
  out += (1.0 - decay) * Eigen::VectorXd::Ones(v) * q.transpose();
  return out;
}

}  // namespace coalmtl
