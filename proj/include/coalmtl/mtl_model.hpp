#ifndef COALMTL_MTL_MODEL_HPP
#define COALMTL_MTL_MODEL_HPP

#include <cstdint>
#include <vector>

#include "coalmtl/coalescent.hpp"
#include "coalmtl/dataset.hpp"
#include "coalmtl/learners.hpp"

namespace coalmtl {

// Log density (up to a constant) of a unit-diagonal correlation matrix under
// the prior with uniform pairwise marginals; -inf when R is not PD.
double correlation_log_prior(const MatrixXd& r);

// Throws unless R is symmetric, unit-diagonal, PSD with entries in [-1, 1].
void validate_correlation(const MatrixXd& r);

// Scales a PD matrix to unit diagonal.
MatrixXd normalize_to_correlation(const MatrixXd& m);

// Log posterior of a diagonal log-std matrix S (as a D-vector) given its
// parent value P, prior covariance lambda, correlations R and weights w:
//   -tr S - 1/2 tr[(S-P)' Lambda^-1 (S-P)] - 1/2 tr[W e^-S R^-1 e^-S W].
double s_log_posterior(const VectorXd& s, const VectorXd& p, const MatrixXd& lambda,
                       const MatrixXd& r, const VectorXd& w);

// Gradient of the above with respect to the diagonal entries of S.
VectorXd s_grad(const VectorXd& s, const VectorXd& p, const MatrixXd& lambda,
                const MatrixXd& r, const VectorXd& w);

// Safeguarded gradient ascent with step 0.1/iter; stops when the proposed
// step falls below 1e-6 in the max norm or at 10^4 iterations (with a
// warning). Never returns an iterate worse than s0.
VectorXd optimize_s(const VectorXd& s0, const VectorXd& p, const MatrixXd& lambda,
                    const MatrixXd& r, const VectorXd& w, bool* hit_cap = nullptr);

// Correlation update: inverse-Wishart mode of I plus the scatter of the
// whitened weights e^-S w, normalized to unit diagonal.
MatrixXd r_update(const std::vector<VectorXd>& log_std, const std::vector<VectorXd>& weights);

struct MtlConfig {
  double sigma2 = 1.0;
  double rho2 = 1.0;
  int max_iterations = 20;
  double heldout_fraction = 0.10;
  std::uint64_t seed = 1;
  int threads = 1;
  bool diag_lambda = false;
  void validate() const;
};

struct MtlModelState {
  CoalescentTree tree;
  DiffusionKernel lambda;           // diffusion of S over the tree
  MatrixXd correlation;             // shared R
  std::vector<VectorXd> log_std;    // hard estimates S^(k)
  std::vector<VectorXd> weights;    // hard estimates w^(k)
  TaskKind task_kind = TaskKind::Classification;
  std::vector<double> heldout_trace;
  int selected_iteration = 0;

  int task_count() const { return static_cast<int>(weights.size()); }
  int dim() const { return weights.empty() ? 0 : static_cast<int>(weights[0].size()); }
};

// Hard EM: per-task w then S updates against tree cavities, then tree /
// Lambda / R updates; heldout selection over iterations as in the DA model.
MtlModelState mtl_fit(const std::vector<TaskDataset>& tasks, const MtlConfig& config);

double mtl_score(const MtlModelState& state, int task, const VectorXd& x);
double mtl_predict(const MtlModelState& state, int task, const VectorXd& x);
double mtl_predict_label(const MtlModelState& state, int task, const VectorXd& x);

}  // namespace coalmtl

#endif
