#include "coalmtl/da_model.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

#include "coalmtl/errors.hpp"
#include "coalmtl/util.hpp"

namespace coalmtl {

DaVariant da_variant_from_string(const std::string& name) {
  if (name == "diag") return DaVariant::Diag;
  if (name == "full") return DaVariant::Full;
  if (name == "diag+x") return DaVariant::DiagX;
  if (name == "full+x") return DaVariant::FullX;
  if (name == "data") return DaVariant::Data;
  throw ConfigError("unknown variant '" + name + "' (diag, full, diag+x, full+x, data)");
}

std::string to_string(DaVariant v) {
  switch (v) {
    case DaVariant::Diag: return "diag";
    case DaVariant::Full: return "full";
    case DaVariant::DiagX: return "diag+x";
    case DaVariant::FullX: return "full+x";
    case DaVariant::Data: return "data";
  }
  return "?";
}

void DaConfig::validate() const {
  if (sigma2 <= 0.0 || rho2 <= 0.0) throw ConfigError("sigma2 and rho2 must be positive");
  if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
  if (heldout_fraction <= 0.0 || heldout_fraction >= 1.0)
    throw ConfigError("heldout_fraction must lie in (0, 1)");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

namespace {

CovKind block_kind(const DaConfig& config) {
  return config.diag() ? CovKind::Diag : CovKind::Full;
}

GaussianMessage root_prior(int dim, const DaConfig& config) {
  return GaussianMessage::isotropic(VectorXd::Zero(dim), config.sigma2, block_kind(config));
}

InfoMessage root_prior_info(int dim, const DaConfig& config) {
  return InfoMessage::from_moment(root_prior(dim, config));
}

// Concatenates the weight-block posterior with the data-block summary for
// the +X variants; both blocks share the tree but keep their own drift
// scales, so the kernel is assembled blockwise too.
GaussianMessage concat_messages(const GaussianMessage& a, const GaussianMessage& b) {
  int da = a.dim(), db = b.dim();
  VectorXd mean(da + db);
  mean << a.mean, b.mean;
  if (a.is_diag() && b.is_diag()) {
    VectorXd var(da + db);
    var << a.var_diag, b.var_diag;
    return GaussianMessage::diagonal(std::move(mean), std::move(var));
  }
  MatrixXd var = MatrixXd::Zero(da + db, da + db);
  var.topLeftCorner(da, da) = a.dense_cov();
  var.bottomRightCorner(db, db) = b.dense_cov();
  return GaussianMessage::full_cov(std::move(mean), std::move(var));
}

DiffusionKernel concat_kernels(const DiffusionKernel& a, const DiffusionKernel& b) {
  if (a.is_diag() && b.is_diag()) {
    VectorXd d(a.dim() + b.dim());
    d << a.diag(), b.diag();
    return DiffusionKernel::diagonal(std::move(d));
  }
  MatrixXd m = MatrixXd::Zero(a.dim() + b.dim(), a.dim() + b.dim());
  m.topLeftCorner(a.dim(), a.dim()) = a.dense();
  m.bottomRightCorner(b.dim(), b.dim()) = b.dense();
  return DiffusionKernel::full(std::move(m));
}

// Leaf messages used for tree construction under the configured variant.
std::vector<GaussianMessage> tree_messages(const DaModelState& state, const DaConfig& config,
                                           DiffusionKernel& kernel_out) {
  std::vector<GaussianMessage> msgs;
  int k = state.task_count();
  switch (config.variant) {
    case DaVariant::Diag:
    case DaVariant::Full:
      msgs = state.evidence;
      kernel_out = state.lambda;
      break;
    case DaVariant::DiagX:
    case DaVariant::FullX:
      for (int i = 0; i < k; ++i)
        msgs.push_back(concat_messages(state.evidence[i], state.data_messages[i]));
      kernel_out = concat_kernels(state.lambda, state.data_kernel);
      break;
    case DaVariant::Data:
      msgs = state.data_messages;
      kernel_out = state.data_kernel;
      break;
  }
  return msgs;
}

}  // namespace

DataBlock build_data_block(const std::vector<TaskDataset>& tasks,
                           const std::vector<int>& discrete_features) {
  if (tasks.empty()) throw DataError("no tasks");
  int d = tasks[0].dim();
  std::set<int> discrete(discrete_features.begin(), discrete_features.end());
  for (int f : discrete)
    if (f < 0 || f >= d) throw ConfigError("discrete feature index out of range");

  // Pooled per-feature moments (zeros included).
  long total = 0;
  VectorXd sum = VectorXd::Zero(d), sumsq = VectorXd::Zero(d);
  for (const auto& t : tasks) {
    total += t.rows();
    for (int r = 0; r < t.rows(); ++r)
      for (SparseMatrix::InnerIterator it(t.x, r); it; ++it) {
        sum[it.col()] += it.value();
        sumsq[it.col()] += it.value() * it.value();
      }
  }
  if (total == 0) throw DataError("data block requires at least one example");
  VectorXd pooled_mean = sum / static_cast<double>(total);
  VectorXd pooled_var =
      (sumsq / static_cast<double>(total) - pooled_mean.cwiseProduct(pooled_mean))
          .cwiseMax(1e-8);

  // Discrete features: value inventory and pooled frequencies (q_d).
  std::map<int, std::vector<double>> values;
  std::map<int, VectorXd> pooled_freq;
  for (int f : discrete) {
    std::set<double> vals;
    for (const auto& t : tasks)
      for (int r = 0; r < t.rows(); ++r) vals.insert(t.x.coeff(r, f));
    values[f] = std::vector<double>(vals.begin(), vals.end());
    VectorXd freq = VectorXd::Zero(values[f].size());
    for (const auto& t : tasks)
      for (int r = 0; r < t.rows(); ++r) {
        auto& inv = values[f];
        int idx = static_cast<int>(
            std::lower_bound(inv.begin(), inv.end(), t.x.coeff(r, f)) - inv.begin());
        freq[idx] += 1.0;
      }
    pooled_freq[f] = freq / freq.sum();
  }

  // Block layout: continuous features first (one mean each), then one slot
  // per (discrete feature, value).
  std::vector<int> cont;
  for (int f = 0; f < d; ++f)
    if (!discrete.count(f)) cont.push_back(f);
  int width = static_cast<int>(cont.size());
  for (int f : discrete) width += static_cast<int>(values[f].size());

  VectorXd kernel_diag(width);
  int pos = 0;
  for (int f : cont) kernel_diag[pos++] = pooled_var[f];
  for (int f : discrete) {
    const VectorXd& q = pooled_freq[f];
    for (int v = 0; v < q.size(); ++v)
      kernel_diag[pos++] = std::max(q[v] * (1.0 - q[v]), 1e-8);
  }

  DataBlock out;
  out.kernel = DiffusionKernel::diagonal(kernel_diag);
  for (const auto& t : tasks) {
    double n = std::max(1, t.rows());
    VectorXd mean(width), var(width);
    VectorXd tsum = VectorXd::Zero(d);
    for (int r = 0; r < t.rows(); ++r)
      for (SparseMatrix::InnerIterator it(t.x, r); it; ++it) tsum[it.col()] += it.value();
    pos = 0;
    for (int f : cont) {
      mean[pos] = tsum[f] / n;
      var[pos] = pooled_var[f] / n;
      ++pos;
    }
    for (int f : discrete) {
      const auto& inv = values[f];
      VectorXd freq = VectorXd::Zero(inv.size());
      for (int r = 0; r < t.rows(); ++r) {
        int idx = static_cast<int>(
            std::lower_bound(inv.begin(), inv.end(), t.x.coeff(r, f)) - inv.begin());
        freq[idx] += 1.0;
      }
      freq /= std::max(1.0, freq.sum());
      const VectorXd& q = pooled_freq[f];
      for (int v = 0; v < static_cast<int>(inv.size()); ++v) {
        mean[pos] = freq[v];
        var[pos] = std::max(q[v] * (1.0 - q[v]), 1e-8) / n;
        ++pos;
      }
    }
    out.messages.push_back(GaussianMessage::diagonal(std::move(mean), std::move(var)));
  }
  return out;
}

DaModelState da_init(const std::vector<TaskDataset>& tasks, const DaConfig& config) {
  config.validate();
  int k = static_cast<int>(tasks.size());
  if (k < 2) throw DataError("da_init requires at least 2 tasks");
  int d = tasks[0].dim();
  for (const auto& t : tasks)
    if (t.dim() != d) throw DataError("tasks must share one feature space");

  DaModelState state;
  state.task_kind = tasks[0].kind;
  state.lambda = DiffusionKernel::isotropic(d, config.sigma2, block_kind(config));

  GaussianMessage prior0 =
      GaussianMessage::isotropic(VectorXd::Zero(d), config.sigma2, block_kind(config));
  state.posteriors.resize(k);
  parallel_for(k, config.threads, [&](std::size_t i) {
    state.posteriors[i] = fit_weight_posterior(tasks[i], prior0, config.rho2, config.diag());
  });
  for (const auto& p : state.posteriors) state.evidence.push_back(p.post);

  if (config.model_data()) {
    DataBlock block = build_data_block(tasks, config.discrete_features);
    state.data_messages = std::move(block.messages);
    state.data_kernel = std::move(block.kernel);
    if (!config.diag() && config.variant != DaVariant::Data) {
      // Full +X mixes a full weight block with the diagonal data block.
      for (auto& m : state.data_messages) m = m.to_full();
      state.data_kernel = DiffusionKernel::full(state.data_kernel.dense());
    }
  }

  DiffusionKernel tree_kernel;
  std::vector<GaussianMessage> msgs = tree_messages(state, config, tree_kernel);
  state.tree = greedy_rate1(msgs, tree_kernel, config.threads);

  std::vector<GaussianMessage> posts;
  for (const auto& p : state.posteriors) posts.push_back(p.post);
  state.node_marginals =
      posterior_marginals(state.tree, posts, state.lambda, root_prior(d, config));
  return state;
}

std::vector<WeightPosterior> da_e_step(const DaModelState& state,
                                       const std::vector<TaskDataset>& tasks,
                                       const DaConfig& config) {
  int k = state.task_count();
  if (static_cast<int>(tasks.size()) != k) throw DataError("task count changed between steps");
  int d = state.dim();

  std::vector<InfoMessage> like;
  for (const auto& p : state.posteriors) like.push_back(p.like);
  std::vector<GaussianMessage> priors =
      leaf_cavity_priors(state.tree, like, state.lambda, root_prior_info(d, config));

  std::vector<WeightPosterior> out(k);
  parallel_for(k, config.threads, [&](std::size_t i) {
    out[i] = fit_weight_posterior(tasks[i], priors[i], config.rho2, config.diag());
  });
  return out;
}

DiffusionKernel update_diffusion(const CoalescentTree& tree,
                                 const std::vector<GaussianMessage>& leaf_stats,
                                 const std::vector<GaussianMessage>& marginals,
                                 const DiffusionKernel& current, bool diag_out) {
  int k = tree.leaf_count();
  int d = current.dim();
  auto stat_of = [&](int id) -> const GaussianMessage& {
    const TreeNode& nd = tree.node(id);
    return nd.is_leaf() ? leaf_stats[nd.task] : marginals[id];
  };

  if (diag_out) {
    VectorXd sigma = VectorXd::Ones(d);
    for (int id : tree.internal_ids()) {
      const TreeNode& nd = tree.node(id);
      const GaussianMessage& l = stat_of(nd.left);
      const GaussianMessage& r = stat_of(nd.right);
      double t = tree.branch(nd.left) + tree.branch(nd.right);
      VectorXd vl = l.is_diag() ? l.var_diag : l.var_full.diagonal();
      VectorXd vr = r.is_diag() ? r.var_diag : r.var_full.diagonal();
      VectorXd lam = current.is_diag() ? current.diag() : current.dense().diagonal();
      VectorXd m = vl + vr + t * lam;
      VectorXd diff = l.mean - r.mean;
      sigma += diff.cwiseProduct(diff).cwiseQuotient(m);
    }
    return DiffusionKernel::diagonal(sigma / (2.0 * d + k + 2.0));
  }

  MatrixXd sigma = MatrixXd::Identity(d, d);
  for (int id : tree.internal_ids()) {
    const TreeNode& nd = tree.node(id);
    const GaussianMessage& l = stat_of(nd.left);
    const GaussianMessage& r = stat_of(nd.right);
    double t = tree.branch(nd.left) + tree.branch(nd.right);
    MatrixXd m = l.dense_cov() + r.dense_cov() + t * current.dense();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(m);
    if (eig.eigenvalues().minCoeff() <= 0.0)
      throw NumericalError("degenerate event covariance in diffusion update");
    VectorXd white = eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                     (eig.eigenvectors().transpose() * (l.mean - r.mean));
    VectorXd back = eig.eigenvectors() * white;
    sigma += back * back.transpose();
  }
  sigma /= (2.0 * d + k + 2.0);
  return DiffusionKernel::full(0.5 * (sigma + sigma.transpose()));
}

void da_m_step(DaModelState& state, const DaConfig& config) {
  int d = state.dim();
  if (config.variant != DaVariant::Data) {
    DiffusionKernel tree_kernel;
    std::vector<GaussianMessage> msgs = tree_messages(state, config, tree_kernel);
    state.tree = greedy_rate1(msgs, tree_kernel, config.threads);
  }
  std::vector<GaussianMessage> posts;
  for (const auto& p : state.posteriors) posts.push_back(p.post);
  state.node_marginals =
      posterior_marginals(state.tree, posts, state.lambda, root_prior(d, config));
  // Halved step toward the scatter mode: the raw map is decreasing in
  // Lambda and two-cycles without damping.
  DiffusionKernel target =
      update_diffusion(state.tree, posts, state.node_marginals, state.lambda, config.diag());
  if (config.diag()) {
    state.lambda = DiffusionKernel::diagonal(0.5 * (state.lambda.diag() + target.diag()));
  } else {
    state.lambda = DiffusionKernel::full(0.5 * (state.lambda.dense() + target.dense()));
  }
}

std::pair<TaskDataset, TaskDataset> split_heldout(const TaskDataset& task, double fraction,
                                                  std::uint64_t seed) {
  int n = task.rows();
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  if (n < 2) {
    if (n > 0)
      std::cerr << "warning: task '" << task.name
                << "' too small for a heldout split; no heldout terms\n";
    return {task.select(ids), task.select({})};
  }
  RandomStream rng(seed);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(rng.uniform_index(i + 1));
    std::swap(ids[i], ids[j]);
  }
  int h = std::max(1, static_cast<int>(std::floor(fraction * n)));
  std::vector<int> held(ids.begin(), ids.begin() + h);
  std::vector<int> train(ids.begin() + h, ids.end());
  std::sort(held.begin(), held.end());
  std::sort(train.begin(), train.end());
  return {task.select(train), task.select(held)};
}

double heldout_log_likelihood(const std::vector<VectorXd>& weights,
                              const std::vector<TaskDataset>& heldout, double rho2) {
  double out = 0.0;
  for (std::size_t k = 0; k < heldout.size(); ++k)
    out += data_log_likelihood(heldout[k], weights[k], rho2);
  return out;
}

DaModelState da_fit(const std::vector<TaskDataset>& tasks, const DaConfig& config) {
  config.validate();
  std::vector<TaskDataset> train, held;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    auto [tr, ho] = split_heldout(tasks[k], config.heldout_fraction,
                                  config.seed * 1000003ULL + k);
    train.push_back(std::move(tr));
    held.push_back(std::move(ho));
  }

  DaModelState state = da_init(train, config);
  auto weights_of = [](const DaModelState& s) {
    std::vector<VectorXd> w;
    for (const auto& p : s.posteriors) w.push_back(p.post.mean);
    return w;
  };

  std::vector<double> trace;
  trace.push_back(heldout_log_likelihood(weights_of(state), held, config.rho2));
  DaModelState best = state;
  int best_iter = 0;

  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    state.posteriors = da_e_step(state, train, config);
    trace.push_back(heldout_log_likelihood(weights_of(state), held, config.rho2));
    da_m_step(state, config);
    // Snapshot after the M-step so the stored tree/Lambda reflect this
    // iteration's posteriors; the heldout score depends on the weights only.
    // Ties go to the later (more adapted) iteration.
    if (trace.back() >= trace[best_iter]) {
      best = state;
      best_iter = iter;
    }
  }

  best.heldout_trace = trace;
  best.selected_iteration = best_iter;
  return best;
}

double da_score(const DaModelState& state, int task, const VectorXd& x) {
  if (task < 0 || task >= state.task_count()) throw DataError("task index out of range");
  if (x.size() != state.dim()) throw DataError("input dimension mismatch");
  return state.posteriors[task].post.mean.dot(x);
}

double da_predict(const DaModelState& state, int task, const VectorXd& x) {
  double s = da_score(state, task, x);
  return state.task_kind == TaskKind::Regression ? s : logistic(s);
}

double da_predict_label(const DaModelState& state, int task, const VectorXd& x) {
  return da_predict(state, task, x) >= 0.5 ? 1.0 : -1.0;
}

}  // namespace coalmtl
