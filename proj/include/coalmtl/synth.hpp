#ifndef COALMTL_SYNTH_HPP
#define COALMTL_SYNTH_HPP

#include <optional>

#include "coalmtl/coalescent.hpp"
#include "coalmtl/dataset.hpp"
#include "coalmtl/gaussian.hpp"
#include "coalmtl/rng.hpp"
#include "coalmtl/tree.hpp"

namespace coalmtl {

// One Brownian step: N(parent, delta * kernel).
VectorXd brownian_transition(const VectorXd& parent, double delta,
                             const DiffusionKernel& kernel, RandomStream& rng);

// Wishart / inverse-Wishart draws (Bartlett construction).
MatrixXd sample_wishart(const MatrixXd& scale, double dof, RandomStream& rng);
MatrixXd sample_inverse_wishart(const MatrixXd& scale, double dof, RandomStream& rng);

// Correlation matrix with uniform pairwise marginals: inverse-Wishart with
// identity scale and D+1 dof, normalized to unit diagonal.
MatrixXd sample_correlation(int dim, RandomStream& rng);

struct DaSynthOptions {
  int tasks = 4;
  int dim = 10;
  int examples_per_task = 100;
  double sigma2 = 1.0;          // root scale
  double rho2 = 1.0;            // regression noise
  TaskKind kind = TaskKind::Classification;
  double input_shift = 0.0;     // per-task mean shift magnitude for D^(k)
  std::optional<CoalescentTree> tree;       // fixed tree instead of a draw
  std::optional<MatrixXd> diffusion;        // fixed Lambda instead of a draw
  double min_duration = 0.0;    // resample the tree until all deltas exceed this
};

struct MtlSynthOptions {
  int tasks = 4;
  int dim = 10;
  int examples_per_task = 100;
  double sigma2 = 1.0;
  double rho2 = 1.0;
  TaskKind kind = TaskKind::Classification;
  std::optional<CoalescentTree> tree;
  std::optional<MatrixXd> diffusion;        // Lambda for the S diffusion
  std::optional<MatrixXd> correlation;      // fixed R instead of a draw
  std::optional<VectorXd> s_root;           // root log-std (default 0)
  double min_duration = 0.0;
};

// Full ground truth of a sampled instance, for recovery tests and sidecars.
struct SynthInstance {
  CoalescentTree tree;
  MatrixXd diffusion;                       // Lambda actually used
  std::vector<VectorXd> weights;            // per-task w
  MultiTaskCorpus corpus;
  // MTL extras (empty for DA):
  MatrixXd correlation;
  std::vector<VectorXd> log_std;            // per-task diagonal S
};

// Weight vectors diffuse down a coalescent tree; inputs come from per-task
// Gaussians with configurable mean shifts.
SynthInstance sample_da_instance(const DaSynthOptions& opt, RandomStream& rng);

// Log standard deviations diffuse down the tree; weights are drawn from
// Nor(0, (exp S) R (exp S)); inputs share one standard Gaussian.
SynthInstance sample_mtl_instance(const MtlSynthOptions& opt, RandomStream& rng);

// Ground-truth sidecar (tree as Newick plus dense parameter rows).
std::string format_truth_sidecar(const SynthInstance& inst);

}  // namespace coalmtl

#endif
