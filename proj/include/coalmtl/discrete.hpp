#ifndef COALMTL_DISCRETE_HPP
#define COALMTL_DISCRETE_HPP

#include <vector>

#include <Eigen/Dense>

namespace coalmtl {

// Mutation kernel for discrete features: each feature d has an equilibrium
// distribution q_d and a rate; over a branch of length delta the transition
// matrix is exp(-delta*rate) I + (1 - exp(-delta*rate)) 1 q_d'.
struct DiscreteKernel {
  std::vector<Eigen::VectorXd> equilibrium;  // one simplex vector per feature
  Eigen::VectorXd rate;                      // strictly positive, one per feature

  int feature_count() const { return static_cast<int>(equilibrium.size()); }
  void validate() const;
};

// Row-stochastic transition matrix for feature d over duration delta.
Eigen::MatrixXd discrete_transition_matrix(double delta, int feature,
                                           const DiscreteKernel& kernel);

}  // namespace coalmtl

#endif
