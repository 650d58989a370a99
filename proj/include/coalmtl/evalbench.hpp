#ifndef COALMTL_EVALBENCH_HPP
#define COALMTL_EVALBENCH_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "coalmtl/da_model.hpp"
#include "coalmtl/dataset.hpp"
#include "coalmtl/mtl_model.hpp"

namespace coalmtl {

// ---------------------------------------------------------------------------
// Preprocessing

struct PcaProjection {
  VectorXd mean;        // pooled feature means
  MatrixXd components;  // D x d, orthonormal columns, variance-ordered
  VectorXd variances;   // component variances, non-increasing

  int out_dim() const { return static_cast<int>(components.cols()); }
  VectorXd apply(const VectorXd& x) const { return components.transpose() * (x - mean); }
};

// Fits PCA on the pooled corpus and projects every task. Keeps only
// rank-many components (with a warning) when target_dim exceeds the rank.
std::pair<MultiTaskCorpus, PcaProjection> pca_project(const MultiTaskCorpus& corpus,
                                                      int target_dim);

MultiTaskCorpus apply_projection(const MultiTaskCorpus& corpus, const PcaProjection& proj);

// ---------------------------------------------------------------------------
// Fitted predictors behind one interface

struct Predictor {
  // score(task, x): raw margin or regression value.
  std::function<double(int, const VectorXd&)> score;
  std::string method;
  // heldout-likelihood trace over EM iterations (empty for baselines)
  std::vector<double> heldout_trace;
};

struct FitOptions {
  double sigma2 = 1.0;
  double rho2 = 1.0;
  int em_iterations = 20;
  double heldout_fraction = 0.10;
  std::uint64_t seed = 1;
  int threads = 1;
};

// One learner over the concatenation of all tasks; every task predicts with
// the same weights.
Predictor baseline_pool(const MultiTaskCorpus& corpus, const FitOptions& opt);

// Independent per-task learners with prior Nor(0, sigma2 I).
Predictor baseline_indp(const MultiTaskCorpus& corpus, const FitOptions& opt);

// Feature augmentation: shared block plus one block per task, one pooled
// learner in the (K+1) D space.
Predictor baseline_feda(const MultiTaskCorpus& corpus, const FitOptions& opt);

// Coalescent models under a method name: coal-diag, coal-full, coal-diag+x,
// coal-full+x, coal-data, and mtl.
Predictor fit_method(const std::string& method, const MultiTaskCorpus& corpus,
                     const FitOptions& opt);

std::vector<std::string> known_methods();

// ---------------------------------------------------------------------------
// Metrics

double metric_accuracy(const std::vector<double>& labels_pred,
                       const std::vector<double>& labels_true);

// P(score of a positive > score of a negative), ties counted one half.
// Throws DataError when only one class is present.
double metric_auc(const std::vector<double>& scores, const std::vector<double>& labels);

// ---------------------------------------------------------------------------
// Experiment drivers

// Appends a copy of task k with ceil(p * D) feature columns permuted among
// themselves.
MultiTaskCorpus scramble_task(const MultiTaskCorpus& corpus, int task, double fraction,
                              RandomStream& rng);

struct EvalRow {
  std::string method;
  std::string task;  // task name or "macro"
  int size = 0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  // heldout-likelihood traces keyed by "method/size/seed"
  std::map<std::string, std::vector<double>> traces;

  std::string to_csv() const;  // header: method,task,size,seed,metric,value
};

struct ExperimentOptions {
  FitOptions fit;
  std::string metric = "accuracy";  // or "auc"
  double test_fraction = 0.3;       // per-task test split
  int pca_dim = 0;                  // 0 = no projection
};

// Per-task training-size sweep; each (method, size, seed) cell fits on a
// subsample and evaluates on the task's test split.
EvalReport learning_curve(const MultiTaskCorpus& corpus, const std::vector<std::string>& methods,
                          const std::vector<int>& sizes, const std::vector<std::uint64_t>& seeds,
                          const ExperimentOptions& opt);

// Fixed source-task size, sweep over target-task sizes, evaluated on the
// target's test split only.
EvalReport target_transfer(const MultiTaskCorpus& corpus, int target_task, int source_size,
                           const std::vector<int>& target_sizes,
                           const std::vector<std::string>& methods,
                           const std::vector<std::uint64_t>& seeds, const ExperimentOptions& opt);

// Scramble sweep: for each fraction p, append a scrambled copy of `task`
// and measure the original tasks' metrics.
EvalReport scramble_experiment(const MultiTaskCorpus& corpus, int task,
                               const std::vector<double>& fractions,
                               const std::vector<std::string>& methods,
                               const std::vector<std::uint64_t>& seeds,
                               const ExperimentOptions& opt);

// Evaluation of one predictor on explicit test tasks; rows per task plus a
// macro row.
std::vector<EvalRow> evaluate_predictor(const Predictor& pred,
                                        const std::vector<TaskDataset>& test,
                                        const std::string& metric, int size, std::uint64_t seed);

}  // namespace coalmtl

#endif
