#ifndef COALMTL_DATASET_HPP
#define COALMTL_DATASET_HPP

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace coalmtl {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class TaskKind { Regression, Classification };

// Per-task design matrix and labels. Labels are reals for regression and
// strictly +1/-1 for classification.
struct TaskDataset {
  std::string name;
  int index = 0;
  SparseMatrix x;  // N_k x D
  Eigen::VectorXd y;
  TaskKind kind = TaskKind::Classification;

  int rows() const { return static_cast<int>(x.rows()); }
  int dim() const { return static_cast<int>(x.cols()); }
  void validate() const;

  // Subset of rows, in the given order.
  TaskDataset select(const std::vector<int>& row_ids) const;
};

enum class CorpusKind { DA, MTL };

struct MultiTaskCorpus {
  std::vector<TaskDataset> tasks;
  int dim = 0;
  CorpusKind kind = CorpusKind::DA;

  int task_count() const { return static_cast<int>(tasks.size()); }
  std::vector<std::string> task_names() const;
  void validate() const;
};

// Sparse line format: `task_id label idx:val ...` with 1-based feature
// indices; `#` starts a comment line. Labels +1/-1 load as classification,
// anything else as regression.
MultiTaskCorpus load_corpus(const std::string& path);
MultiTaskCorpus parse_corpus(std::istream& in, const std::string& origin);
void save_corpus(const MultiTaskCorpus& corpus, const std::string& path);
std::string format_corpus(const MultiTaskCorpus& corpus);

}  // namespace coalmtl

#endif
