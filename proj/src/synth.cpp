#include "coalmtl/synth.hpp"

#include <cmath>
#include <sstream>

#include "coalmtl/errors.hpp"
#include "coalmtl/learners.hpp"
#include "coalmtl/util.hpp"

namespace coalmtl {

VectorXd brownian_transition(const VectorXd& parent, double delta,
                             const DiffusionKernel& kernel, RandomStream& rng) {
  if (delta <= 0.0) throw NumericalError("brownian_transition requires delta > 0");
  int d = static_cast<int>(parent.size());
  VectorXd z(d);
  for (int i = 0; i < d; ++i) z[i] = rng.normal();
  if (kernel.is_diag())
    return parent + (delta * kernel.diag()).cwiseSqrt().cwiseProduct(z);
  Eigen::LLT<MatrixXd> llt(delta * kernel.dense() +
                           1e-14 * MatrixXd::Identity(d, d));
  if (llt.info() != Eigen::Success)
    throw NumericalError("brownian_transition: kernel not PSD");
  return parent + MatrixXd(llt.matrixL()) * z;
}

MatrixXd sample_wishart(const MatrixXd& scale, double dof, RandomStream& rng) {
  int d = static_cast<int>(scale.rows());
  if (dof < d) throw NumericalError("Wishart dof must be >= dimension");
  Eigen::LLT<MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) throw NumericalError("Wishart scale must be PD");
  MatrixXd a = MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    a(i, i) = std::sqrt(rng.chi_square(dof - i));
    for (int j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  MatrixXd la = MatrixXd(llt.matrixL()) * a;
  return la * la.transpose();
}

MatrixXd sample_inverse_wishart(const MatrixXd& scale, double dof, RandomStream& rng) {
  int d = static_cast<int>(scale.rows());
  Eigen::LDLT<MatrixXd> ldlt(scale);
  MatrixXd w = sample_wishart(ldlt.solve(MatrixXd::Identity(d, d)), dof, rng);
  Eigen::LDLT<MatrixXd> wi(w);
  MatrixXd out = wi.solve(MatrixXd::Identity(d, d));
  return 0.5 * (out + out.transpose());
}

MatrixXd sample_correlation(int dim, RandomStream& rng) {
  MatrixXd m = sample_inverse_wishart(MatrixXd::Identity(dim, dim), dim + 1, rng);
  VectorXd s = m.diagonal().cwiseSqrt().cwiseInverse();
  MatrixXd r = s.asDiagonal() * m * s.asDiagonal();
  r.diagonal().setOnes();
  return 0.5 * (r + r.transpose());
}

namespace {

CoalescentTree draw_tree(int k, double min_duration, RandomStream& rng) {
  for (int attempt = 0; attempt < 100000; ++attempt) {
    CoalescentTree t = sample_coalescent(k, rng);
    if (min_duration <= 0.0) return t;
    auto deltas = t.durations();
    bool ok = true;
    for (double d : deltas)
      if (d < min_duration) ok = false;
    if (ok) return t;
  }
  throw NumericalError("could not draw a tree meeting the duration floor");
}

// Values diffuse from the root value downward; returns one vector per node.
std::vector<VectorXd> diffuse_down(const CoalescentTree& tree, const VectorXd& root_value,
                                   const DiffusionKernel& kernel, RandomStream& rng) {
  std::vector<VectorXd> value(tree.node_count());
  std::vector<int> order = tree.postorder();
  std::reverse(order.begin(), order.end());
  for (int id : order) {
    const TreeNode& nd = tree.node(id);
    if (nd.parent == kNoNode)
      value[id] = root_value;
    else
      value[id] = brownian_transition(value[nd.parent], tree.branch(id), kernel, rng);
  }
  return value;
}

TaskDataset make_task(int index, int n, const VectorXd& w, const VectorXd& input_mean,
                      double rho2, TaskKind kind, RandomStream& rng) {
  int d = static_cast<int>(w.size());
  TaskDataset task;
  task.name = "task" + std::to_string(index);
  task.index = index;
  task.kind = kind;
  task.y.resize(n);
  std::vector<Eigen::Triplet<double>> trips;
  for (int r = 0; r < n; ++r) {
    VectorXd x(d);
    for (int i = 0; i < d; ++i) x[i] = input_mean[i] + rng.normal();
    double f = w.dot(x);
    if (kind == TaskKind::Regression) {
      task.y[r] = f + std::sqrt(rho2) * rng.normal();
    } else {
      task.y[r] = rng.uniform() < logistic(f) ? 1.0 : -1.0;
    }
    for (int i = 0; i < d; ++i) trips.emplace_back(r, i, x[i]);
  }
  task.x.resize(n, d);
  task.x.setFromTriplets(trips.begin(), trips.end());
  return task;
}

}  // namespace

SynthInstance sample_da_instance(const DaSynthOptions& opt, RandomStream& rng) {
  if (opt.tasks < 2) throw ConfigError("sample_da_instance requires K >= 2");
  if (opt.examples_per_task < 1) throw ConfigError("need at least one example per task");
  int d = opt.dim;

  SynthInstance inst;
  // Step 1: global mean and covariance.
  VectorXd root_mean(d);
  for (int i = 0; i < d; ++i) root_mean[i] = std::sqrt(opt.sigma2) * rng.normal();
  inst.diffusion = opt.diffusion
                       ? *opt.diffusion
                       : sample_inverse_wishart(opt.sigma2 * MatrixXd::Identity(d, d), d + 1, rng);
  DiffusionKernel kernel = DiffusionKernel::full(inst.diffusion);

  // Step 2: tree.
  inst.tree = opt.tree ? *opt.tree : draw_tree(opt.tasks, opt.min_duration, rng);
  if (inst.tree.leaf_count() != opt.tasks) throw ConfigError("fixed tree leaf count mismatch");

  // Step 3: weights diffuse down the tree.
  std::vector<VectorXd> values = diffuse_down(inst.tree, root_mean, kernel, rng);
  inst.weights.resize(opt.tasks);
  for (int k = 0; k < opt.tasks; ++k) inst.weights[k] = values[k];

  // Step 4: per-task inputs and labels.
  inst.corpus.dim = d;
  inst.corpus.kind = CorpusKind::DA;
  for (int k = 0; k < opt.tasks; ++k) {
    VectorXd shift = VectorXd::Zero(d);
    if (opt.input_shift != 0.0)
      for (int i = 0; i < d; ++i) shift[i] = opt.input_shift * rng.normal();
    inst.corpus.tasks.push_back(
        make_task(k, opt.examples_per_task, inst.weights[k], shift, opt.rho2, opt.kind, rng));
  }
  inst.corpus.validate();
  return inst;
}

SynthInstance sample_mtl_instance(const MtlSynthOptions& opt, RandomStream& rng) {
  if (opt.tasks < 2) throw ConfigError("sample_mtl_instance requires K >= 2");
  int d = opt.dim;

  SynthInstance inst;
  // Step 1: correlations and deviation covariance.
  inst.correlation = opt.correlation ? *opt.correlation : sample_correlation(d, rng);
  inst.diffusion = opt.diffusion
                       ? *opt.diffusion
                       : sample_inverse_wishart(opt.sigma2 * MatrixXd::Identity(d, d), d + 1, rng);
  DiffusionKernel kernel = DiffusionKernel::full(inst.diffusion);

  // Step 2: tree.
  inst.tree = opt.tree ? *opt.tree : draw_tree(opt.tasks, opt.min_duration, rng);
  if (inst.tree.leaf_count() != opt.tasks) throw ConfigError("fixed tree leaf count mismatch");

  // Step 3: log standard deviations diffuse from the root value (default 0).
  VectorXd root_s = opt.s_root ? *opt.s_root : VectorXd::Zero(d);
  std::vector<VectorXd> s_values = diffuse_down(inst.tree, root_s, kernel, rng);
  inst.log_std.resize(opt.tasks);
  for (int k = 0; k < opt.tasks; ++k) inst.log_std[k] = s_values[k];

  // Step 4: weights from Nor(0, (exp S) R (exp S)); shared standard-normal
  // input distribution.
  Eigen::LLT<MatrixXd> rl(inst.correlation +
                          1e-12 * MatrixXd::Identity(d, d));
  if (rl.info() != Eigen::Success) throw NumericalError("correlation draw not PD");
  inst.corpus.dim = d;
  inst.corpus.kind = CorpusKind::MTL;
  inst.weights.resize(opt.tasks);
  for (int k = 0; k < opt.tasks; ++k) {
    VectorXd z(d);
    for (int i = 0; i < d; ++i) z[i] = rng.normal();
    VectorXd u = MatrixXd(rl.matrixL()) * z;  // ~ Nor(0, R)
    inst.weights[k] = inst.log_std[k].array().exp().matrix().cwiseProduct(u);
    inst.corpus.tasks.push_back(make_task(k, opt.examples_per_task, inst.weights[k],
                                          VectorXd::Zero(d), opt.rho2, opt.kind, rng));
  }
  inst.corpus.validate();
  return inst;
}

std::string format_truth_sidecar(const SynthInstance& inst) {
  std::ostringstream os;
  os << "#tree " << inst.tree.to_newick(inst.corpus.task_names()) << "\n";
  auto write_rows = [&os](const std::string& tag, const std::vector<VectorXd>& rows) {
    for (std::size_t k = 0; k < rows.size(); ++k) {
      os << tag << " " << k;
      for (int i = 0; i < rows[k].size(); ++i) os << " " << fmt_double(rows[k][i]);
      os << "\n";
    }
  };
  write_rows("w", inst.weights);
  if (!inst.log_std.empty()) {
    write_rows("s", inst.log_std);
    os << "R";
    for (int i = 0; i < inst.correlation.rows(); ++i)
      for (int j = 0; j < inst.correlation.cols(); ++j)
        os << " " << fmt_double(inst.correlation(i, j));
    os << "\n";
  }
  os << "#lambda";
  for (int i = 0; i < inst.diffusion.rows(); ++i)
    for (int j = 0; j < inst.diffusion.cols(); ++j) os << " " << fmt_double(inst.diffusion(i, j));
  os << "\n";
  return os.str();
}

}  // namespace coalmtl
