#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "coalmtl/coalescent.hpp"
#include "coalmtl/errors.hpp"
#include "test_util.hpp"

using namespace coalmtl;
using namespace coalmtl::testing;

namespace {

// Hand-built two-leaf tree with the root at the given (negative) time.
CoalescentTree two_leaf_tree(double root_time) {
  std::vector<TreeNode> nodes(3);
  nodes[0].id = 0;
  nodes[0].task = 0;
  nodes[0].parent = 2;
  nodes[1].id = 1;
  nodes[1].task = 1;
  nodes[1].parent = 2;
  nodes[2].id = 2;
  nodes[2].time = root_time;
  nodes[2].left = 0;
  nodes[2].right = 1;
  return CoalescentTree(std::move(nodes));
}

// Caterpillar over K leaves with event times t[0] > t[1] > ...
CoalescentTree caterpillar(int k, const std::vector<double>& times) {
  std::vector<TreeNode> nodes(2 * k - 1);
  for (int i = 0; i < k; ++i) {
    nodes[i].id = i;
    nodes[i].task = i;
  }
  int spine = 0;  // node id of the current partial tree
  for (int e = 0; e < k - 1; ++e) {
    int id = k + e;
    nodes[id].id = id;
    nodes[id].time = times[e];
    nodes[id].left = spine;
    nodes[id].right = e + 1;
    nodes[spine].parent = id;
    nodes[e + 1].parent = id;
    spine = id;
  }
  return CoalescentTree(std::move(nodes));
}

}  // namespace

TEST_CASE("coalescent_log_prior matches hand values") {
  // K=2, delta=1: rate C(2,2)=1, log 1 - 1.
  CHECK(coalescent_log_prior(two_leaf_tree(-1.0)) == doctest::Approx(-1.0).epsilon(1e-12));

  // K=3, deltas 0.5 and 2.0: log 3 - 1.5 - 2.0.
  CoalescentTree t3 = caterpillar(3, {-0.5, -2.5});
  CHECK(coalescent_log_prior(t3) == doctest::Approx(std::log(3.0) - 3.5).epsilon(1e-12));
}

TEST_CASE("coalescent_log_prior matches an exponential-density oracle on random trees") {
  RandomStream rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    int k = 4;
    CoalescentTree t = sample_coalescent(k, rng);
    auto deltas = t.durations();
    double expect = 0.0;
    for (int i = 0; i < k - 1; ++i) {
      double n = k - i;
      double rate = n * (n - 1) / 2.0;
      expect += std::log(rate) - rate * deltas[i];  // Exp(rate) log density
    }
    CHECK(coalescent_log_prior(t) == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("coalescent_log_prior decreases in any single duration") {
  CoalescentTree t = caterpillar(4, {-0.4, -1.0, -1.7});
  double base = coalescent_log_prior(t);
  // Stretch each event further into the past (grows one delta, keeps later
  // ones fixed by shifting all deeper events equally).
  for (int e = 0; e < 3; ++e) {
    std::vector<double> times = {-0.4, -1.0, -1.7};
    for (int i = e; i < 3; ++i) times[i] -= 0.3;
    CHECK(coalescent_log_prior(caterpillar(4, times)) < base);
  }
}

TEST_CASE("invalid trees are rejected") {
  // Tied event times give a non-positive duration.
  CHECK_THROWS_AS(caterpillar(3, {-1.0, -1.0}), InvalidTreeError);
  CHECK_THROWS_AS(two_leaf_tree(0.0), InvalidTreeError);
}

TEST_CASE("bp_upward: symmetric point masses average") {
  CoalescentTree t = two_leaf_tree(-1.0);
  DiffusionKernel lam = DiffusionKernel::isotropic(1, 1.0, CovKind::Diag);
  std::vector<GaussianMessage> leaves = {
      GaussianMessage::point(VectorXd::Constant(1, 0.0), CovKind::Diag),
      GaussianMessage::point(VectorXd::Constant(1, 2.0), CovKind::Diag)};
  auto up = bp_upward(t, leaves, lam);
  CHECK(up[2].mean[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(up[2].var_diag[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("bp_upward: hand evaluation with one soft leaf") {
  CoalescentTree t = two_leaf_tree(-1.0);
  DiffusionKernel lam = DiffusionKernel::isotropic(1, 1.0, CovKind::Diag);
  std::vector<GaussianMessage> leaves = {
      GaussianMessage::diagonal(VectorXd::Constant(1, 0.0), VectorXd::Constant(1, 1.0)),
      GaussianMessage::point(VectorXd::Constant(1, 3.0), CovKind::Diag)};
  auto up = bp_upward(t, leaves, lam);
  CHECK(up[2].var_diag[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(up[2].mean[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("bp_upward: D=2 diagonal equals coordinate-wise 1-D algebra") {
  RandomStream rng(11);
  CoalescentTree t = sample_coalescent(3, rng);
  DiffusionKernel lam = DiffusionKernel::diagonal((VectorXd(2) << 0.7, 2.3).finished());
  std::vector<GaussianMessage> leaves;
  for (int k = 0; k < 3; ++k) leaves.push_back(random_message(2, CovKind::Diag, rng));

  auto up = bp_upward(t, leaves, lam);

  for (int coord = 0; coord < 2; ++coord) {
    DiffusionKernel lam1 = DiffusionKernel::diagonal(VectorXd::Constant(1, lam.diag()[coord]));
    std::vector<GaussianMessage> leaves1;
    for (int k = 0; k < 3; ++k)
      leaves1.push_back(GaussianMessage::diagonal(VectorXd::Constant(1, leaves[k].mean[coord]),
                                                  VectorXd::Constant(1, leaves[k].var_diag[coord])));
    auto up1 = bp_upward(t, leaves1, lam1);
    for (int id = 0; id < t.node_count(); ++id) {
      CHECK(up[id].mean[coord] == doctest::Approx(up1[id].mean[0]).epsilon(1e-12));
      CHECK(up[id].var_diag[coord] == doctest::Approx(up1[id].var_diag[0]).epsilon(1e-12));
    }
  }
}

TEST_CASE("bp_upward is invariant to child order") {
  RandomStream rng(13);
  DiffusionKernel lam = DiffusionKernel::full(random_spd(2, rng));
  std::vector<GaussianMessage> leaves;
  for (int k = 0; k < 2; ++k) leaves.push_back(random_message(2, CovKind::Full, rng));

  std::vector<TreeNode> nodes(3);
  nodes[0] = {0, 2, kNoNode, kNoNode, 0.0, 0};
  nodes[1] = {1, 2, kNoNode, kNoNode, 0.0, 1};
  nodes[2] = {2, kNoNode, 0, 1, -0.8, kNoNode};
  CoalescentTree a(nodes);
  nodes[2].left = 1;
  nodes[2].right = 0;
  CoalescentTree b(nodes);

  auto ua = bp_upward(a, leaves, lam);
  auto ub = bp_upward(b, leaves, lam);
  CHECK((ua[2].mean - ub[2].mean).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((ua[2].var_full - ub[2].var_full).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("posterior_marginals: single leaf under a flat prior is unchanged") {
  CoalescentTree t = CoalescentTree::single_leaf();
  DiffusionKernel lam = DiffusionKernel::isotropic(2, 1.0, CovKind::Diag);
  RandomStream rng(3);
  std::vector<GaussianMessage> leaves = {random_message(2, CovKind::Diag, rng)};
  auto marg = posterior_marginals(t, leaves, lam, GaussianMessage::flat_prior(2, CovKind::Diag));
  CHECK((marg[0].mean - leaves[0].mean).norm() < 1e-14);
  CHECK((marg[0].var_diag - leaves[0].var_diag).norm() < 1e-14);
}

TEST_CASE("posterior_marginals: 2-leaf chain matches the dense joint oracle") {
  CoalescentTree t = two_leaf_tree(-0.7);
  RandomStream rng(5);
  DiffusionKernel lam = DiffusionKernel::isotropic(1, 1.3, CovKind::Diag);
  std::vector<GaussianMessage> leaves = {random_message(1, CovKind::Diag, rng),
                                         random_message(1, CovKind::Diag, rng)};
  auto marg = posterior_marginals(t, leaves, lam, GaussianMessage::flat_prior(1, CovKind::Diag));

  std::vector<OracleFactor> factors;
  for (const auto& m : leaves) factors.push_back({m.mean, m.dense_cov()});
  auto oracle = dense_tree_oracle(t, lam.dense(), factors, std::nullopt);
  for (int id = 0; id < 3; ++id) {
    CHECK(marg[id].mean[0] == doctest::Approx(oracle.mean[id][0]).epsilon(1e-10));
    CHECK(marg[id].var_diag[0] == doctest::Approx(oracle.cov[id](0, 0)).epsilon(1e-10));
  }
}

TEST_CASE("posterior_marginals: 4-leaf D=2 full matches the dense joint oracle") {
  RandomStream rng(17);
  CoalescentTree t = sample_coalescent(4, rng);
  DiffusionKernel lam = DiffusionKernel::full(random_spd(2, rng));
  std::vector<GaussianMessage> leaves;
  std::vector<OracleFactor> factors;
  for (int k = 0; k < 4; ++k) {
    leaves.push_back(random_message(2, CovKind::Full, rng));
    factors.push_back({leaves.back().mean, leaves.back().dense_cov()});
  }
  GaussianMessage prior = GaussianMessage::isotropic(VectorXd::Zero(2), 4.0, CovKind::Full);
  auto marg = posterior_marginals(t, leaves, lam, prior);
  auto oracle = dense_tree_oracle(t, lam.dense(), factors,
                                  OracleFactor{prior.mean, prior.dense_cov()});
  for (int id = 0; id < t.node_count(); ++id) {
    CHECK((marg[id].mean - oracle.mean[id]).norm() < 1e-9 * std::max(1.0, oracle.mean[id].norm()));
    CHECK((marg[id].dense_cov() - oracle.cov[id]).norm() < 1e-9);
  }
}

TEST_CASE("leaf cavity priors match the oracle with the leaf's factor removed") {
  RandomStream rng(23);
  for (int k : {2, 3, 5}) {
    CoalescentTree t = sample_coalescent(k, rng);
    DiffusionKernel lam = DiffusionKernel::full(random_spd(2, rng));
    std::vector<InfoMessage> like;
    std::vector<OracleFactor> factors;
    for (int i = 0; i < k; ++i) {
      GaussianMessage m = random_message(2, CovKind::Full, rng);
      like.push_back(InfoMessage::from_moment(m));
      factors.push_back({m.mean, m.dense_cov()});
    }
    GaussianMessage prior = GaussianMessage::isotropic(VectorXd::Zero(2), 3.0, CovKind::Full);
    auto cavities = leaf_cavity_priors(t, like, lam, InfoMessage::from_moment(prior));
    for (int i = 0; i < k; ++i) {
      auto oracle = dense_tree_oracle(t, lam.dense(), factors,
                                      OracleFactor{prior.mean, prior.dense_cov()}, i);
      CHECK((cavities[i].mean - oracle.mean[i]).norm() < 1e-8);
      CHECK((cavities[i].dense_cov() - oracle.cov[i]).norm() < 1e-8);
    }
  }
}

TEST_CASE("greedy_rate1: K=2 gives the unique topology") {
  RandomStream rng(29);
  DiffusionKernel lam = DiffusionKernel::isotropic(1, 1.0, CovKind::Diag);
  std::vector<GaussianMessage> leaves = {random_message(1, CovKind::Diag, rng),
                                         random_message(1, CovKind::Diag, rng)};
  CoalescentTree t = greedy_rate1(leaves, lam);
  CHECK(t.leaf_count() == 2);
  CHECK(t.clades() == std::set<std::set<int>>{{0, 1}});
}

TEST_CASE("greedy_rate1: the near pair merges first") {
  DiffusionKernel lam = DiffusionKernel::isotropic(1, 1.0, CovKind::Diag);
  std::vector<GaussianMessage> leaves = {
      GaussianMessage::point(VectorXd::Constant(1, 0.0), CovKind::Diag),
      GaussianMessage::point(VectorXd::Constant(1, 0.1), CovKind::Diag),
      GaussianMessage::point(VectorXd::Constant(1, 10.0), CovKind::Diag)};
  CoalescentTree t = greedy_rate1(leaves, lam);
  // First event is node 3; its children must be leaves 0 and 1.
  CHECK(t.clades().count({0, 1}) == 1);
  CHECK(std::isfinite(coalescent_log_prior(t)));
}

TEST_CASE("greedy_rate1: well-separated clusters split at the root") {
  RandomStream rng(31);
  DiffusionKernel lam = DiffusionKernel::isotropic(2, 1.0, CovKind::Diag);
  std::vector<GaussianMessage> leaves;
  for (int i = 0; i < 8; ++i) {
    double center = i < 4 ? 0.0 : 50.0;  // separation >> message spread
    VectorXd mean(2);
    mean << center + 0.3 * rng.normal(), center + 0.3 * rng.normal();
    leaves.push_back(GaussianMessage::diagonal(mean, VectorXd::Constant(2, 0.3)));
  }
  CoalescentTree t = greedy_rate1(leaves, lam);
  std::set<int> left_cluster = {0, 1, 2, 3}, right_cluster = {4, 5, 6, 7};
  // No clade mixes the clusters except the root's full set.
  for (const auto& clade : t.clades()) {
    if (clade.size() == 8) continue;
    bool in_left = left_cluster.count(*clade.begin()) == 1;
    for (int leaf : clade) CHECK(left_cluster.count(leaf) == (in_left ? 1u : 0u));
  }
}

TEST_CASE("greedy_rate1 output satisfies all tree invariants") {
  RandomStream rng(37);
  for (int rep = 0; rep < 10; ++rep) {
    int k = 2 + static_cast<int>(rng.uniform_index(6));
    std::vector<GaussianMessage> leaves;
    for (int i = 0; i < k; ++i) leaves.push_back(random_message(2, CovKind::Diag, rng));
    DiffusionKernel lam = DiffusionKernel::isotropic(2, 0.8, CovKind::Diag);
    CoalescentTree t = greedy_rate1(leaves, lam);  // constructor validates
    CHECK(t.leaf_count() == k);
    CHECK(static_cast<int>(t.durations().size()) == k - 1);
  }
}

TEST_CASE("greedy_rate1 rejects fewer than two messages") {
  DiffusionKernel lam = DiffusionKernel::isotropic(1, 1.0, CovKind::Diag);
  std::vector<GaussianMessage> one = {GaussianMessage::point(VectorXd::Zero(1), CovKind::Diag)};
  CHECK_THROWS_AS(greedy_rate1(one, lam), ConfigError);
}

TEST_CASE("sample_coalescent duration moments") {
  RandomStream rng(41);
  const int draws = 100000;

  double sum2 = 0.0;
  for (int i = 0; i < draws; ++i) sum2 += sample_coalescent(2, rng).durations()[0];
  CHECK(sum2 / draws == doctest::Approx(1.0).epsilon(0.02));

  double sum4 = 0.0;
  for (int i = 0; i < draws; ++i) sum4 += sample_coalescent(4, rng).durations()[0];
  CHECK(sum4 / draws == doctest::Approx(1.0 / 6.0).epsilon(0.03));
}

TEST_CASE("sample_coalescent first-merge pairs are uniform for K=3") {
  RandomStream rng(43);
  const int draws = 100000;
  std::map<std::set<int>, int> counts;
  for (int i = 0; i < draws; ++i) {
    CoalescentTree t = sample_coalescent(3, rng);
    const TreeNode& first = t.node(3);
    counts[{t.node(first.left).task, t.node(first.right).task}] += 1;
  }
  CHECK(counts.size() == 3);
  for (const auto& [pair, c] : counts)
    CHECK(static_cast<double>(c) / draws == doctest::Approx(1.0 / 3.0).epsilon(0.03));
}

TEST_CASE("newick round trip preserves topology and times") {
  RandomStream rng(47);
  for (int rep = 0; rep < 20; ++rep) {
    CoalescentTree t = sample_coalescent(2 + static_cast<int>(rng.uniform_index(5)), rng);
    std::string nwk = t.to_newick();
    CoalescentTree back = CoalescentTree::from_newick(nwk);
    CHECK(t.same_topology(back));
    for (int id = 0; id < t.node_count(); ++id) {
      // Event order is shared, so ids line up.
      CHECK(back.node(id).time == doctest::Approx(t.node(id).time).epsilon(1e-9));
    }
    CHECK(back.to_newick() == nwk);
  }
}

TEST_CASE("newick export sanitizes reserved characters in names") {
  CoalescentTree t = caterpillar(2, {-1.0});
  std::vector<std::string> names = {"a:b,c", "(d)e f"};
  std::string nwk = t.to_newick(names);
  CHECK(nwk == "(a_b_c:1,_d_e_f:1);");
  CoalescentTree back = CoalescentTree::from_newick(nwk, names);
  CHECK(back.same_topology(t));
}

TEST_CASE("exports are deterministic and ordered by task index") {
  CoalescentTree t = caterpillar(3, {-0.5, -1.5});
  std::vector<std::string> names = {"alpha", "beta", "gamma"};
  std::string nwk = t.to_newick(names);
  CHECK(nwk == "((alpha:0.5,beta:0.5):1,gamma:1.5);");
  std::string dot = t.to_dot(names);
  CHECK(dot.find("n0 [label=\"alpha\"") != std::string::npos);
  CHECK(dot.find("n4 -> n3") != std::string::npos);
  CHECK(t.to_dot(names) == dot);
}
