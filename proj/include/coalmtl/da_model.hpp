#ifndef COALMTL_DA_MODEL_HPP
#define COALMTL_DA_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "coalmtl/coalescent.hpp"
#include "coalmtl/dataset.hpp"
#include "coalmtl/learners.hpp"

namespace coalmtl {

enum class DaVariant { Diag, Full, DiagX, FullX, Data };

DaVariant da_variant_from_string(const std::string& name);
std::string to_string(DaVariant v);

struct DaConfig {
  DaVariant variant = DaVariant::Full;
  double sigma2 = 1.0;
  double rho2 = 1.0;
  int max_iterations = 20;
  double heldout_fraction = 0.10;
  std::uint64_t seed = 1;
  int threads = 1;
  // Feature indices (0-based) treated as discrete in the data blocks of the
  // +X and Data variants; everything else is summarized as Gaussian means.
  std::vector<int> discrete_features;

  bool diag() const { return variant == DaVariant::Diag || variant == DaVariant::DiagX; }
  bool model_data() const {
    return variant == DaVariant::DiagX || variant == DaVariant::FullX ||
           variant == DaVariant::Data;
  }
  void validate() const;
};

struct DaModelState {
  CoalescentTree tree;
  DiffusionKernel lambda;
  std::vector<WeightPosterior> posteriors;      // one per task
  std::vector<GaussianMessage> node_marginals;  // weight block, one per tree node
  // Independent-prior posteriors from initialization; the agglomeration
  // messages. Tree-shrunk posteriors share cavity information across
  // leaves, which double-counts evidence in the merge objective, so trees
  // are always rebuilt from these.
  std::vector<GaussianMessage> evidence;
  TaskKind task_kind = TaskKind::Classification;

  // Input-model summaries, present for +X and Data variants only. These are
  // fixed over EM: the data block only informs tree construction.
  std::vector<GaussianMessage> data_messages;
  DiffusionKernel data_kernel;

  std::vector<double> heldout_trace;  // one entry per recorded iteration
  int selected_iteration = 0;

  int task_count() const { return static_cast<int>(posteriors.size()); }
  int dim() const { return posteriors.empty() ? 0 : posteriors[0].post.dim(); }
};

// Independent MAP fits with prior Nor(0, sigma2 I), Lambda = sigma2 I, and
// an initial tree agglomerated from the resulting posteriors.
DaModelState da_init(const std::vector<TaskDataset>& tasks, const DaConfig& config);

// One E-step: each task's prior is the tree cavity at its leaf (downward
// message excluding the task's own likelihood), then MAP + Laplace.
std::vector<WeightPosterior> da_e_step(const DaModelState& state,
                                       const std::vector<TaskDataset>& tasks,
                                       const DaConfig& config);

// One M-step: rebuild the tree from the current leaf posteriors (except the
// Data variant, whose tree is frozen), refresh node marginals, and update
// Lambda as the inverse-Wishart mode of the event scatter.
void da_m_step(DaModelState& state, const DaConfig& config);

// Inverse-Wishart-mode diffusion update shared by the DA and MTL models:
// Sigma = I + sum over events of the whitened mean-difference outer product,
// Lambda = Sigma / (2D + K + 2).
DiffusionKernel update_diffusion(const CoalescentTree& tree,
                                 const std::vector<GaussianMessage>& leaf_stats,
                                 const std::vector<GaussianMessage>& marginals,
                                 const DiffusionKernel& current, bool diag_out);

// Full EM with per-task 10% heldout selection over iterations 0..max.
DaModelState da_fit(const std::vector<TaskDataset>& tasks, const DaConfig& config);

// Raw linear score w_k . x.
double da_score(const DaModelState& state, int task, const VectorXd& x);
// Regression: the score; classification: probability of the +1 label.
double da_predict(const DaModelState& state, int task, const VectorXd& x);
// Classification label at the 0.5 threshold (+1 / -1).
double da_predict_label(const DaModelState& state, int task, const VectorXd& x);

// Heldout log likelihood at the posterior-mean weights, summed over tasks.
double heldout_log_likelihood(const std::vector<VectorXd>& weights,
                              const std::vector<TaskDataset>& heldout, double rho2);

// Split one task into (train, heldout) with a seeded shuffle; tasks with
// fewer than 2 rows keep everything in train and contribute no heldout.
std::pair<TaskDataset, TaskDataset> split_heldout(const TaskDataset& task, double fraction,
                                                  std::uint64_t seed);

// Per-task input summaries for the +X / Data variants: Gaussian blocks over
// feature means (continuous) and value frequencies (discrete), plus the
// matching diagonal drift kernel.
struct DataBlock {
  std::vector<GaussianMessage> messages;  // one per task
  DiffusionKernel kernel;
};
DataBlock build_data_block(const std::vector<TaskDataset>& tasks,
                           const std::vector<int>& discrete_features);

}  // namespace coalmtl

#endif
