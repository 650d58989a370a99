#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "coalmtl/da_model.hpp"
#include "coalmtl/errors.hpp"
#include "coalmtl/serialize.hpp"
#include "coalmtl/synth.hpp"
#include "test_util.hpp"

using namespace coalmtl;
using namespace coalmtl::testing;

namespace {

TaskDataset dense_task(const std::string& name, int index, const MatrixXd& x, const VectorXd& y,
                       TaskKind kind) {
  TaskDataset t;
  t.name = name;
  t.index = index;
  t.kind = kind;
  t.y = y;
  std::vector<Eigen::Triplet<double>> trips;
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c)
      if (x(r, c) != 0.0) trips.emplace_back(r, c, x(r, c));
  t.x.resize(x.rows(), x.cols());
  t.x.setFromTriplets(trips.begin(), trips.end());
  return t;
}

std::vector<TaskDataset> random_regression_tasks(int k, int n, int d, RandomStream& rng) {
  std::vector<TaskDataset> tasks;
  for (int i = 0; i < k; ++i) {
    MatrixXd x(n, d);
    VectorXd y(n);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < d; ++c) x(r, c) = rng.normal();
      y[r] = rng.normal();
    }
    tasks.push_back(dense_task("task" + std::to_string(i), i, x, y, TaskKind::Regression));
  }
  return tasks;
}

// Marginal likelihood of all task labels under the tree + Lambda (regression
// only): y ~ N(0, X Sigma_leaves X' + rho2 I) with Sigma_leaves from the
// dense node-precision oracle.
double regression_evidence(const CoalescentTree& tree, const MatrixXd& lambda, double sigma2,
                           double rho2, const std::vector<TaskDataset>& tasks) {
  int d = static_cast<int>(lambda.rows());
  int nn = tree.node_count();
  int k = tree.leaf_count();
  MatrixXd joint = MatrixXd::Zero(nn * d, nn * d);
  for (int id = 0; id < nn; ++id) {
    const TreeNode& nd = tree.node(id);
    if (nd.parent == kNoNode) {
      joint.block(id * d, id * d, d, d) += MatrixXd::Identity(d, d) / sigma2;
    } else {
      MatrixXd prec = (tree.branch(id) * lambda).inverse();
      joint.block(id * d, id * d, d, d) += prec;
      joint.block(nd.parent * d, nd.parent * d, d, d) += prec;
      joint.block(id * d, nd.parent * d, d, d) -= prec;
      joint.block(nd.parent * d, id * d, d, d) -= prec;
    }
  }
  MatrixXd cov = joint.inverse();

  long total = 0;
  for (const auto& t : tasks) total += t.rows();
  MatrixXd xfull = MatrixXd::Zero(total, k * d);
  VectorXd y(total);
  long at = 0;
  for (int task = 0; task < k; ++task) {
    const TaskDataset& t = tasks[task];
    for (int r = 0; r < t.rows(); ++r) {
      y[at] = t.y[r];
      for (SparseMatrix::InnerIterator it(t.x, r); it; ++it)
        xfull(at, task * d + it.col()) = it.value();
      ++at;
    }
  }
  MatrixXd leaf_cov(k * d, k * d);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) leaf_cov.block(a * d, b * d, d, d) = cov.block(a * d, b * d, d, d);
  MatrixXd s = xfull * leaf_cov * xfull.transpose() +
               rho2 * MatrixXd::Identity(total, total);
  Eigen::LDLT<MatrixXd> ldlt(s);
  double logdet = ldlt.vectorD().array().log().sum();
  return -0.5 * (total * std::log(2.0 * M_PI) + logdet + y.dot(ldlt.solve(y)));
}

}  // namespace

TEST_CASE("da_init: identical tasks give identical weights; K=2 tree is fixed") {
  RandomStream rng(2);
  MatrixXd x(6, 2);
  VectorXd y(6);
  for (int r = 0; r < 6; ++r) {
    x(r, 0) = rng.normal();
    x(r, 1) = rng.normal();
    y[r] = r % 2 == 0 ? 1.0 : -1.0;
  }
  std::vector<TaskDataset> tasks = {dense_task("a", 0, x, y, TaskKind::Classification),
                                    dense_task("b", 1, x, y, TaskKind::Classification)};
  DaConfig config;
  config.variant = DaVariant::Full;
  DaModelState state = da_init(tasks, config);
  CHECK((state.posteriors[0].post.mean - state.posteriors[1].post.mean).norm() < 1e-9);
  CHECK(state.tree.clades() == std::set<std::set<int>>{{0, 1}});
}

TEST_CASE("da_init: a vanishing prior scale pins the weights at zero") {
  RandomStream rng(3);
  auto tasks = random_regression_tasks(2, 5, 2, rng);
  DaConfig config;
  config.sigma2 = 1e-10;
  DaModelState state = da_init(tasks, config);
  for (const auto& p : state.posteriors) CHECK(p.post.mean.norm() < 1e-6);
}

TEST_CASE("da_e_step: empty task recovers the tree-induced prior at its leaf") {
  RandomStream rng(5);
  auto tasks = random_regression_tasks(3, 8, 2, rng);
  // Third task has no rows.
  tasks[2] = dense_task("task2", 2, MatrixXd::Zero(0, 2), VectorXd::Zero(0),
                        TaskKind::Regression);
  DaConfig config;
  config.variant = DaVariant::Full;
  DaModelState state = da_init(tasks, config);
  auto posts = da_e_step(state, tasks, config);

  std::vector<InfoMessage> like;
  for (const auto& p : state.posteriors) like.push_back(p.like);
  auto cavities = leaf_cavity_priors(
      state.tree, like, state.lambda,
      InfoMessage::from_moment(
          GaussianMessage::isotropic(VectorXd::Zero(2), config.sigma2, CovKind::Full)));
  CHECK((posts[2].post.mean - cavities[2].mean).norm() < 1e-9);
  CHECK((posts[2].post.dense_cov() - cavities[2].dense_cov()).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("da_e_step: regression posteriors equal the dense joint-Gaussian conditional") {
  RandomStream rng(7);
  for (int rep = 0; rep < 4; ++rep) {
    int k = 2 + static_cast<int>(rng.uniform_index(3));  // K in 2..4
    int d = 1 + static_cast<int>(rng.uniform_index(3));  // D in 1..3
    int n = d + 5;
    auto tasks = random_regression_tasks(k, n, d, rng);
    DaConfig config;
    config.variant = DaVariant::Full;
    config.sigma2 = 2.0;
    config.rho2 = 0.5;
    DaModelState state = da_init(tasks, config);
    auto posts = da_e_step(state, tasks, config);

    // Oracle: joint Gaussian over tree nodes with the exact regression
    // likelihood factors at the leaves.
    std::vector<OracleFactor> factors;
    for (int i = 0; i < k; ++i) {
      MatrixXd x = MatrixXd(tasks[i].x);
      MatrixXd prec = x.transpose() * x / config.rho2;
      factors.push_back({prec.inverse() * (x.transpose() * tasks[i].y / config.rho2),
                         prec.inverse()});
    }
    OracleFactor root{VectorXd::Zero(d), config.sigma2 * MatrixXd::Identity(d, d)};
    auto oracle = dense_tree_oracle(state.tree, state.lambda.dense(), factors, root);
    for (int i = 0; i < k; ++i) {
      CHECK((posts[i].post.mean - oracle.mean[i]).lpNorm<Eigen::Infinity>() < 1e-6);
      CHECK((posts[i].post.dense_cov() - oracle.cov[i]).lpNorm<Eigen::Infinity>() < 1e-6);
    }
  }
}

TEST_CASE("da_e_step: symmetric tasks stay symmetric") {
  RandomStream rng(11);
  MatrixXd x(8, 2);
  VectorXd y(8);
  for (int r = 0; r < 8; ++r) {
    x(r, 0) = rng.normal();
    x(r, 1) = rng.normal();
    y[r] = x(r, 0) > 0 ? 1.0 : -1.0;
  }
  std::vector<TaskDataset> tasks = {dense_task("a", 0, x, y, TaskKind::Classification),
                                    dense_task("b", 1, x, y, TaskKind::Classification)};
  DaConfig config;
  DaModelState state = da_init(tasks, config);
  auto posts = da_e_step(state, tasks, config);
  CHECK((posts[0].post.mean - posts[1].post.mean).norm() < 1e-8);
}

TEST_CASE("update_diffusion: zero differences give the identity scatter") {
  // All leaves carry the same point mass; under a flat root prior every
  // node's marginal mean coincides, so every D_i = 0 and Sigma = I.
  RandomStream rng(13);
  CoalescentTree tree = sample_coalescent(3, rng);
  VectorXd m = (VectorXd(2) << 0.7, -0.2).finished();
  std::vector<GaussianMessage> leaves(3, GaussianMessage::point(m, CovKind::Full));
  DiffusionKernel lam = DiffusionKernel::isotropic(2, 1.0, CovKind::Full);
  auto marg = posterior_marginals(tree, leaves, lam, GaussianMessage::flat_prior(2, CovKind::Full));
  DiffusionKernel out = update_diffusion(tree, leaves, marg, lam, false);
  int d = 2, k = 3;
  MatrixXd sigma = out.dense() * (2.0 * d + k + 2.0);
  CHECK((sigma - MatrixXd::Identity(2, 2)).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("update_diffusion: K=2 D=1 hand evaluation") {
  // Sigma = 1 + (w_l - w_r)^2 / (C_l + C_r + (d_l + d_r) lambda).
  std::vector<TreeNode> nodes(3);
  nodes[0] = {0, 2, kNoNode, kNoNode, 0.0, 0};
  nodes[1] = {1, 2, kNoNode, kNoNode, 0.0, 1};
  nodes[2] = {2, kNoNode, 0, 1, -2.0, kNoNode};
  CoalescentTree tree(nodes);
  std::vector<GaussianMessage> leaves = {
      GaussianMessage::diagonal(VectorXd::Constant(1, 1.0), VectorXd::Constant(1, 0.5)),
      GaussianMessage::diagonal(VectorXd::Constant(1, -1.0), VectorXd::Constant(1, 0.25))};
  DiffusionKernel lam = DiffusionKernel::diagonal(VectorXd::Constant(1, 0.5));
  auto marg = posterior_marginals(tree, leaves, lam,
                                  GaussianMessage::flat_prior(1, CovKind::Diag));
  DiffusionKernel out = update_diffusion(tree, leaves, marg, lam, true);
  double sigma_hand = 1.0 + 4.0 / (0.75 + 4.0 * 0.5);
  double expect = sigma_hand / (2.0 * 1 + 2 + 2.0);
  CHECK(out.diag()[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("da_m_step: diag variant emits a diagonal kernel") {
  RandomStream rng(17);
  auto tasks = random_regression_tasks(3, 8, 2, rng);
  DaConfig config;
  config.variant = DaVariant::Diag;
  DaModelState state = da_init(tasks, config);
  da_m_step(state, config);
  CHECK(state.lambda.is_diag());
  CHECK(state.lambda.dim() == 2);
}

TEST_CASE("da_fit: zero iterations returns the initialization") {
  RandomStream rng(19);
  auto tasks = random_regression_tasks(3, 12, 2, rng);
  DaConfig config;
  config.max_iterations = 0;
  config.seed = 5;
  DaModelState fitted = da_fit(tasks, config);
  CHECK(fitted.selected_iteration == 0);
  CHECK(fitted.heldout_trace.size() == 1);

  // Same split + init reproduces the weights.
  std::vector<TaskDataset> train;
  for (std::size_t k = 0; k < tasks.size(); ++k)
    train.push_back(split_heldout(tasks[k], config.heldout_fraction,
                                  config.seed * 1000003ULL + k)
                        .first);
  DaModelState direct = da_init(train, config);
  for (int i = 0; i < 3; ++i)
    CHECK((fitted.posteriors[i].post.mean - direct.posteriors[i].post.mean).norm() < 1e-12);
}

TEST_CASE("da_fit: selected iteration is at least as good as iteration zero") {
  RandomStream rng(23);
  DaSynthOptions opt;
  opt.tasks = 3;
  opt.dim = 3;
  opt.examples_per_task = 40;
  SynthInstance inst = sample_da_instance(opt, rng);
  DaConfig config;
  config.max_iterations = 5;
  DaModelState fitted = da_fit(inst.corpus.tasks, config);
  CHECK(fitted.heldout_trace[fitted.selected_iteration] >= fitted.heldout_trace[0]);
  CHECK(fitted.heldout_trace.size() == 6);
}

TEST_CASE("da_fit is deterministic given the seed") {
  RandomStream rng(29);
  DaSynthOptions opt;
  opt.tasks = 3;
  opt.dim = 2;
  opt.examples_per_task = 25;
  SynthInstance inst = sample_da_instance(opt, rng);
  DaConfig config;
  config.max_iterations = 3;
  config.seed = 11;
  DaModelState a = da_fit(inst.corpus.tasks, config);
  DaModelState b = da_fit(inst.corpus.tasks, config);
  auto names = inst.corpus.task_names();
  CHECK(serialize_da_model(a, config, names) == serialize_da_model(b, config, names));
}

TEST_CASE("da model containers round-trip through serialization") {
  RandomStream rng(59);
  DaSynthOptions opt;
  opt.tasks = 3;
  opt.dim = 3;
  opt.examples_per_task = 30;
  SynthInstance inst = sample_da_instance(opt, rng);
  DaConfig config;
  config.variant = DaVariant::Diag;
  config.max_iterations = 2;
  DaModelState state = da_fit(inst.corpus.tasks, config);
  auto names = inst.corpus.task_names();

  std::string path = "/tmp/coalmtl_roundtrip_da.json";
  write_file(path, serialize_da_model(state, config, names));
  LoadedModel back = load_model(path);
  CHECK(back.kind == "da");
  CHECK(back.task_names == names);
  CHECK(back.da.tree.same_topology(state.tree));
  CHECK(back.da.selected_iteration == state.selected_iteration);
  VectorXd x = (VectorXd(3) << 0.4, -1.0, 2.0).finished();
  for (int k = 0; k < 3; ++k)
    CHECK(da_predict(back.da, k, x) == doctest::Approx(da_predict(state, k, x)).epsilon(1e-12));
}

TEST_CASE("da_fit with threads matches the single-threaded result") {
  RandomStream rng(31);
  DaSynthOptions opt;
  opt.tasks = 4;
  opt.dim = 2;
  opt.examples_per_task = 20;
  SynthInstance inst = sample_da_instance(opt, rng);
  DaConfig config;
  config.max_iterations = 2;
  DaModelState a = da_fit(inst.corpus.tasks, config);
  config.threads = 4;
  DaModelState b = da_fit(inst.corpus.tasks, config);
  auto names = inst.corpus.task_names();
  CHECK(serialize_da_model(a, config, names) == serialize_da_model(b, config, names));
}

// The diffusion update is a damped fixed-point step, not an exact ascent on
// the evidence, so the trace is checked for convergence rather than strict
// monotonicity: it must stabilize quickly and never collapse.
TEST_CASE("regression EM evidence stabilizes with the tree held fixed") {
  RandomStream rng(37);
  DaSynthOptions opt;
  opt.tasks = 3;
  opt.dim = 2;
  opt.examples_per_task = 12;
  opt.kind = TaskKind::Regression;
  SynthInstance inst = sample_da_instance(opt, rng);

  DaConfig config;
  config.variant = DaVariant::Full;
  config.sigma2 = 1.0;
  config.rho2 = 1.0;
  DaModelState state = da_init(inst.corpus.tasks, config);
  CoalescentTree fixed_tree = state.tree;

  double first = regression_evidence(fixed_tree, state.lambda.dense(), config.sigma2, config.rho2,
                                     inst.corpus.tasks);
  std::vector<double> trace = {first};
  for (int iter = 0; iter < 8; ++iter) {
    state.posteriors = da_e_step(state, inst.corpus.tasks, config);
    // M-step with the tree frozen: refresh marginals, update Lambda only.
    std::vector<GaussianMessage> posts;
    for (const auto& p : state.posteriors) posts.push_back(p.post);
    state.node_marginals = posterior_marginals(
        state.tree, posts, state.lambda,
        GaussianMessage::isotropic(VectorXd::Zero(2), config.sigma2, CovKind::Full));
    state.lambda = update_diffusion(state.tree, posts, state.node_marginals, state.lambda, false);
    trace.push_back(regression_evidence(fixed_tree, state.lambda.dense(), config.sigma2,
                                        config.rho2, inst.corpus.tasks));
  }
  // Later steps change the evidence by far less than the first one did.
  double first_step = std::abs(trace[1] - trace[0]);
  double tail_step = std::abs(trace.back() - trace[trace.size() - 2]);
  CHECK(tail_step <= std::max(1e-6, 1e-3 * std::max(first_step, 1.0)));
  for (double v : trace) CHECK(std::isfinite(v));
  // The converged evidence stays in the neighborhood of the initial one.
  CHECK(std::abs(trace.back() - trace[0]) < 0.2 * std::abs(trace[0]));
}

TEST_CASE("da_predict contracts") {
  RandomStream rng(41);
  auto tasks = random_regression_tasks(2, 6, 1, rng);
  DaConfig config;
  DaModelState state = da_init(tasks, config);

  // Regression with hand-set weights.
  state.task_kind = TaskKind::Regression;
  state.posteriors[0].post.mean = VectorXd::Constant(1, 2.0);
  CHECK(da_predict(state, 0, VectorXd::Constant(1, 1.0)) == doctest::Approx(2.0));

  // Classification: w = 0 gives probability one half; complements sum to 1.
  state.task_kind = TaskKind::Classification;
  state.posteriors[0].post.mean = VectorXd::Zero(1);
  CHECK(da_predict(state, 0, VectorXd::Constant(1, 3.0)) == doctest::Approx(0.5));
  state.posteriors[0].post.mean = VectorXd::Constant(1, 0.7);
  for (double x : {-2.0, 0.3, 5.0}) {
    double p = da_predict(state, 0, VectorXd::Constant(1, x));
    double q = da_predict(state, 0, VectorXd::Constant(1, -x));
    CHECK(p + q == doctest::Approx(1.0).epsilon(1e-12));
  }

  CHECK_THROWS_AS(da_predict(state, 0, VectorXd::Zero(3)), DataError);
  CHECK_THROWS_AS(da_predict(state, 9, VectorXd::Zero(1)), DataError);
}

TEST_CASE("+X variants carry data blocks and stay consistent") {
  RandomStream rng(43);
  DaSynthOptions opt;
  opt.tasks = 3;
  opt.dim = 3;
  opt.examples_per_task = 15;
  opt.input_shift = 2.0;
  SynthInstance inst = sample_da_instance(opt, rng);

  for (DaVariant v : {DaVariant::DiagX, DaVariant::FullX, DaVariant::Data}) {
    DaConfig config;
    config.variant = v;
    config.max_iterations = 2;
    DaModelState fitted = da_fit(inst.corpus.tasks, config);
    CHECK(fitted.task_count() == 3);
    CHECK(static_cast<int>(fitted.data_messages.size()) == 3);
    CHECK(std::isfinite(fitted.heldout_trace.back()));
  }
}

TEST_CASE("build_data_block: continuous means and discrete frequencies") {
  // Feature 0 continuous, feature 1 discrete over values {0, 1}.
  MatrixXd x0(4, 2), x1(4, 2);
  x0 << 1.0, 0.0, 3.0, 1.0, 2.0, 1.0, 2.0, 0.0;  // mean 2.0, freq(1) = 0.5
  x1 << 5.0, 1.0, 5.0, 1.0, 7.0, 1.0, 7.0, 0.0;  // mean 6.0, freq(1) = 0.75
  std::vector<TaskDataset> tasks = {
      dense_task("a", 0, x0, VectorXd::Ones(4), TaskKind::Regression),
      dense_task("b", 1, x1, VectorXd::Ones(4), TaskKind::Regression)};
  DataBlock block = build_data_block(tasks, {1});

  // Layout: [continuous mean of feature 0, freq(value 0), freq(value 1)].
  REQUIRE(block.messages.size() == 2);
  CHECK(block.messages[0].dim() == 3);
  CHECK(block.messages[0].mean[0] == doctest::Approx(2.0));
  CHECK(block.messages[1].mean[0] == doctest::Approx(6.0));
  CHECK(block.messages[0].mean[1] == doctest::Approx(0.5));   // value-0 share, task a
  CHECK(block.messages[0].mean[2] == doctest::Approx(0.5));
  CHECK(block.messages[1].mean[1] == doctest::Approx(0.25));  // value-0 share, task b
  CHECK(block.messages[1].mean[2] == doctest::Approx(0.75));
  for (const auto& m : block.messages) {
    CHECK(m.mean.segment(1, 2).sum() == doctest::Approx(1.0));
    CHECK((m.var_diag.array() > 0.0).all());
  }
  CHECK(block.kernel.is_diag());
  CHECK((block.kernel.diag().array() > 0.0).all());
  // Pooled q over the discrete feature is (3/8, 5/8): kernel slot q(1-q).
  CHECK(block.kernel.diag()[1] == doctest::Approx(0.375 * 0.625).epsilon(1e-12));
}

TEST_CASE("Diag and Full variants agree on diagonal designs") {
  // One feature per row makes X'AX diagonal; with a diagonal Lambda the two
  // variants run through numerically identical quantities.
  RandomStream rng(53);
  std::vector<TaskDataset> tasks;
  for (int k = 0; k < 3; ++k) {
    MatrixXd x = MatrixXd::Zero(8, 2);
    VectorXd y(8);
    for (int r = 0; r < 8; ++r) {
      x(r, r % 2) = rng.normal();
      y[r] = rng.normal();
    }
    tasks.push_back(dense_task("t" + std::to_string(k), k, x, y, TaskKind::Regression));
  }
  DaConfig diag_cfg, full_cfg;
  diag_cfg.variant = DaVariant::Diag;
  full_cfg.variant = DaVariant::Full;
  diag_cfg.max_iterations = full_cfg.max_iterations = 3;
  DaModelState a = da_fit(tasks, diag_cfg);
  DaModelState b = da_fit(tasks, full_cfg);
  for (int k = 0; k < 3; ++k) {
    CHECK((a.posteriors[k].post.mean - b.posteriors[k].post.mean).lpNorm<Eigen::Infinity>() <
          1e-8);
    MatrixXd cb = b.posteriors[k].post.dense_cov();
    CHECK((a.posteriors[k].post.dense_cov().diagonal() - cb.diagonal())
              .lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK(std::abs(cb(0, 1)) < 1e-10);
  }
}

TEST_CASE("Data variant keeps its tree over EM") {
  RandomStream rng(47);
  DaSynthOptions opt;
  opt.tasks = 4;
  opt.dim = 3;
  opt.examples_per_task = 20;
  opt.input_shift = 3.0;
  SynthInstance inst = sample_da_instance(opt, rng);
  DaConfig config;
  config.variant = DaVariant::Data;
  DaModelState state = da_init(inst.corpus.tasks, config);
  auto before = state.tree.clades();
  state.posteriors = da_e_step(state, inst.corpus.tasks, config);
  da_m_step(state, config);
  CHECK(state.tree.clades() == before);
}
