#include "coalmtl/coalescent.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "coalmtl/errors.hpp"
#include "coalmtl/util.hpp"

namespace coalmtl {

namespace {

double pair_rate(int n) { return 0.5 * n * (n - 1); }

}  // namespace

double coalescent_log_prior(const CoalescentTree& tree) {
  int k = tree.leaf_count();
  if (k < 2) throw InvalidTreeError("coalescent prior requires at least 2 leaves");
  std::vector<double> deltas = tree.durations();
  double out = 0.0;
  for (int i = 0; i < k - 1; ++i) {
    double rate = pair_rate(k - i);
    out += std::log(rate) - rate * deltas[i];
  }
  return out;
}

CoalescentTree sample_coalescent(int k, RandomStream& rng) {
  if (k < 2) throw ConfigError("sample_coalescent requires K >= 2");
  std::vector<TreeNode> nodes(2 * k - 1);
  std::vector<int> active(k);
  for (int i = 0; i < k; ++i) {
    nodes[i].id = i;
    nodes[i].task = i;
    active[i] = i;
  }
  double t = 0.0;
  for (int e = 0; e < k - 1; ++e) {
    int n = static_cast<int>(active.size());
    t -= rng.exponential(pair_rate(n));
    // Uniform unordered pair.
    int a = static_cast<int>(rng.uniform_index(n));
    int b = static_cast<int>(rng.uniform_index(n - 1));
    if (b >= a) ++b;
    if (a > b) std::swap(a, b);
    int id = k + e;
    nodes[id].id = id;
    nodes[id].time = t;
    nodes[id].left = active[a];
    nodes[id].right = active[b];
    nodes[active[a]].parent = id;
    nodes[active[b]].parent = id;
    active[a] = id;
    active.erase(active.begin() + b);
  }
  return CoalescentTree(std::move(nodes));
}

std::vector<GaussianMessage> bp_upward(const CoalescentTree& tree,
                                       const std::vector<GaussianMessage>& leaf_messages,
                                       const DiffusionKernel& kernel) {
  int k = tree.leaf_count();
  if (static_cast<int>(leaf_messages.size()) != k)
    throw NumericalError("bp_upward needs one message per leaf");
  std::vector<GaussianMessage> up(tree.node_count());
  for (int id : tree.postorder()) {
    const TreeNode& nd = tree.node(id);
    if (nd.is_leaf()) {
      if (leaf_messages[nd.task].dim() != kernel.dim())
        throw NumericalError("leaf message dimension does not match kernel");
      up[id] = leaf_messages[nd.task];
      continue;
    }
    try {
      GaussianMessage l = up[nd.left].inflated(tree.branch(nd.left), kernel);
      GaussianMessage r = up[nd.right].inflated(tree.branch(nd.right), kernel);
      up[id] = combine(l, r);
    } catch (const NumericalError& e) {
      throw NumericalError("bp_upward failed at node " + std::to_string(id) + ": " + e.what());
    }
  }
  return up;
}

BpResult bp_full(const CoalescentTree& tree, const std::vector<GaussianMessage>& leaf_messages,
                 const DiffusionKernel& kernel, const GaussianMessage& root_prior) {
  BpResult res;
  res.up = bp_upward(tree, leaf_messages, kernel);
  res.down.resize(tree.node_count());
  res.marginal.resize(tree.node_count());

  int root = tree.root();
  res.down[root] = root_prior;
  res.marginal[root] = combine(root_prior, res.up[root]);

  // Preorder: parent's downward message is ready before its children's.
  std::vector<int> order = tree.postorder();
  std::reverse(order.begin(), order.end());
  for (int id : order) {
    const TreeNode& nd = tree.node(id);
    if (nd.is_leaf()) continue;
    for (int child : {nd.left, nd.right}) {
      int sib = (child == nd.left) ? nd.right : nd.left;
      GaussianMessage from_sib = res.up[sib].inflated(tree.branch(sib), kernel);
      GaussianMessage at_parent = combine(res.down[id], from_sib);
      res.down[child] = at_parent.inflated(tree.branch(child), kernel);
      res.marginal[child] = combine(res.down[child], res.up[child]);
    }
  }
  return res;
}

std::vector<GaussianMessage> posterior_marginals(const CoalescentTree& tree,
                                                 const std::vector<GaussianMessage>& leaf_messages,
                                                 const DiffusionKernel& kernel,
                                                 const GaussianMessage& root_prior) {
  return bp_full(tree, leaf_messages, kernel, root_prior).marginal;
}

std::vector<GaussianMessage> leaf_cavity_priors(const CoalescentTree& tree,
                                                const std::vector<InfoMessage>& leaf_messages,
                                                const DiffusionKernel& kernel,
                                                const InfoMessage& root_prior) {
  int k = tree.leaf_count();
  if (static_cast<int>(leaf_messages.size()) != k)
    throw NumericalError("one leaf message per task required");
  int n = tree.node_count();

  std::vector<InfoMessage> up(n);
  for (int id : tree.postorder()) {
    const TreeNode& nd = tree.node(id);
    if (nd.is_leaf()) {
      up[id] = leaf_messages[nd.task];
    } else {
      InfoMessage m = up[nd.left].inflated(tree.branch(nd.left), kernel);
      m += up[nd.right].inflated(tree.branch(nd.right), kernel);
      up[id] = m;
    }
  }

  std::vector<InfoMessage> down(n);
  down[tree.root()] = root_prior;
  std::vector<int> order = tree.postorder();
  std::reverse(order.begin(), order.end());
  for (int id : order) {
    const TreeNode& nd = tree.node(id);
    if (nd.is_leaf()) continue;
    for (int child : {nd.left, nd.right}) {
      int sib = (child == nd.left) ? nd.right : nd.left;
      InfoMessage at_parent = up[sib].inflated(tree.branch(sib), kernel);
      at_parent += down[id];
      down[child] = at_parent.inflated(tree.branch(child), kernel);
    }
  }

  std::vector<GaussianMessage> out(k);
  if (k == 1) {
    out[0] = root_prior.to_moment();
    return out;
  }
  for (int id = 0; id < k; ++id) out[tree.node(id).task] = down[id].to_moment();
  return out;
}

namespace {

// Merge objective for one candidate pair as a function of the duration
// delta >= 0 back from the current event front:
//   f(delta) = -delta + log N(ya - yb; 0, Va + Vb + (a0 + 2 delta) K)
// where a0 is the slack between the nodes' own times and the front.
// Reduced to O(D) per evaluation by diagonalizing against the kernel.
class MergeObjective {
 public:
  MergeObjective(const GaussianMessage& a, const GaussianMessage& b, double t_front,
                 double ta, double tb, const DiffusionKernel& kernel) {
    dim_ = a.dim();
    double a0 = (ta - t_front) + (tb - t_front);
    VectorXd d = a.mean - b.mean;
    if (a.is_diag() && kernel.is_diag()) {
      base_ = a.var_diag + b.var_diag + a0 * kernel.diag();
      rate_ = kernel.diag();
      resid_ = d;
      log_norm_ = 0.0;
    } else {
      MatrixXd m = a.dense_cov() + b.dense_cov() + a0 * kernel.dense();
      MatrixXd kd = kernel.dense();
      Eigen::LLT<MatrixXd> llt(kd + 1e-12 * kd.diagonal().mean() * MatrixXd::Identity(dim_, dim_));
      if (llt.info() != Eigen::Success)
        throw NumericalError("greedy_rate1 requires a positive definite kernel");
      MatrixXd l = llt.matrixL();
      MatrixXd white = l.triangularView<Eigen::Lower>().solve(m);
      white = l.triangularView<Eigen::Lower>().solve(MatrixXd(white.transpose()));
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (white + white.transpose()));
      base_ = eig.eigenvalues().cwiseMax(0.0);
      rate_ = VectorXd::Ones(dim_);
      resid_ = eig.eigenvectors().transpose() *
               l.triangularView<Eigen::Lower>().solve(d);
      log_norm_ = 2.0 * l.diagonal().array().log().sum();  // log det K
    }
  }

  double operator()(double delta) const {
    static const double kLog2Pi = std::log(2.0 * M_PI);
    double logdet = log_norm_;
    double quad = 0.0;
    for (int i = 0; i < dim_; ++i) {
      double s = base_[i] + 2.0 * delta * rate_[i];
      if (s <= 0.0) return -std::numeric_limits<double>::infinity();
      logdet += std::log(s);
      quad += resid_[i] * resid_[i] / s;
    }
    return -delta - 0.5 * (dim_ * kLog2Pi + logdet + quad);
  }

 private:
  int dim_;
  VectorXd base_, rate_, resid_;
  double log_norm_;
};

// Golden-section maximization of f over [lo, hi], tolerance 1e-8.
double golden_max(const std::function<double(double)>& f, double lo, double hi) {
  const double inv_phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > 1e-8 * std::max(1.0, std::abs(a))) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

struct Lineage {
  int node = kNoNode;
  double time = 0.0;
  GaussianMessage message;
};

}  // namespace

CoalescentTree greedy_rate1(const std::vector<GaussianMessage>& leaf_messages,
                            const DiffusionKernel& kernel, int threads) {
  int k = static_cast<int>(leaf_messages.size());
  if (k < 2) throw ConfigError("greedy_rate1 requires K >= 2 messages");
  for (const auto& m : leaf_messages) {
    if (m.flat) throw NumericalError("greedy_rate1 cannot agglomerate flat messages");
    if (m.dim() != kernel.dim()) throw NumericalError("message/kernel dimension mismatch");
  }

  std::vector<TreeNode> nodes(2 * k - 1);
  std::vector<Lineage> active(k);
  for (int i = 0; i < k; ++i) {
    nodes[i].id = i;
    nodes[i].task = i;
    active[i] = {i, 0.0, leaf_messages[i]};
  }

  double t_front = 0.0;
  for (int e = 0; e < k - 1; ++e) {
    int n = static_cast<int>(active.size());
    const double delta_floor = std::max(1e-12, std::abs(t_front) * 1e-12);
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);

    std::vector<double> best_delta(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t p) {
      auto [i, j] = pairs[p];
      MergeObjective obj(active[i].message, active[j].message, t_front, active[i].time,
                         active[j].time, kernel);
      // Bracket: expand until the objective has clearly turned over.
      double hi = 1.0;
      double f_lo = obj(delta_floor);
      while (hi < 1e9 && obj(hi) > std::max(f_lo, obj(hi * 0.5)) - 1e-12) hi *= 2.0;
      best_delta[p] = golden_max([&obj](double d) { return obj(d); }, delta_floor, hi);
    });

    // Soonest merge wins: smallest optimal duration, ties to the
    // lexicographically lowest pair (the enumeration order).
    std::size_t best = 0;
    for (std::size_t p = 1; p < pairs.size(); ++p)
      if (best_delta[p] < best_delta[best]) best = p;

    auto [i, j] = pairs[best];
    double t_merge = t_front - std::max(best_delta[best], delta_floor);
    if (t_merge >= t_front) t_merge = std::nextafter(t_front, -1.0 / 0.0);
    int id = k + e;
    nodes[id].id = id;
    nodes[id].time = t_merge;
    nodes[id].left = active[i].node;
    nodes[id].right = active[j].node;
    nodes[active[i].node].parent = id;
    nodes[active[j].node].parent = id;

    GaussianMessage merged =
        combine(active[i].message.inflated(active[i].time - t_merge, kernel),
                active[j].message.inflated(active[j].time - t_merge, kernel));
    active[i] = {id, t_merge, std::move(merged)};
    active.erase(active.begin() + j);
    t_front = t_merge;
  }
  return CoalescentTree(std::move(nodes));
}

}  // namespace coalmtl
