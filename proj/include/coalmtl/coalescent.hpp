#ifndef COALMTL_COALESCENT_HPP
#define COALMTL_COALESCENT_HPP

#include <vector>

#include "coalmtl/gaussian.hpp"
#include "coalmtl/rng.hpp"
#include "coalmtl/tree.hpp"

namespace coalmtl {

// Log density of the tree's event durations under the coalescent:
// sum_i [log C(K-i+1,2) - C(K-i+1,2) * delta_i]. The uniform-topology
// constant is omitted (it does not depend on the durations).
double coalescent_log_prior(const CoalescentTree& tree);

// Draws a K-leaf tree: uniformly random pair at each event, duration
// Exp(C(n,2)) with n lineages remaining.
CoalescentTree sample_coalescent(int k, RandomStream& rng);

// Upward Gaussian belief propagation. leaf_messages[k] is the message at
// leaf k; returns one message per node (leaves echo their input).
std::vector<GaussianMessage> bp_upward(const CoalescentTree& tree,
                                       const std::vector<GaussianMessage>& leaf_messages,
                                       const DiffusionKernel& kernel);

// Upward + downward pass results. `down[i]` is the message arriving at node
// i from the rest of the tree (for a leaf this is the cavity prior that
// excludes the leaf's own message); `marginal[i] = down[i] * up[i]`.
struct BpResult {
  std::vector<GaussianMessage> up;
  std::vector<GaussianMessage> down;
  std::vector<GaussianMessage> marginal;
};

BpResult bp_full(const CoalescentTree& tree,
                 const std::vector<GaussianMessage>& leaf_messages,
                 const DiffusionKernel& kernel, const GaussianMessage& root_prior);

// Posterior Gaussian at every node given leaf messages and a root prior.
std::vector<GaussianMessage> posterior_marginals(const CoalescentTree& tree,
                                                 const std::vector<GaussianMessage>& leaf_messages,
                                                 const DiffusionKernel& kernel,
                                                 const GaussianMessage& root_prior);

// Information-form variant used when leaf messages may be partially flat
// (singular precision). Returns the cavity prior at every leaf: the
// downward message excluding the leaf's own likelihood, in moment form
// (always proper when the root prior is proper).
std::vector<GaussianMessage> leaf_cavity_priors(const CoalescentTree& tree,
                                                const std::vector<InfoMessage>& leaf_messages,
                                                const DiffusionKernel& kernel,
                                                const InfoMessage& root_prior);

// Greedy-Rate1 agglomeration: each candidate pair's merge time maximizes
// rate-1 exponential duration times Gaussian message agreement (1-D golden
// section, 1e-8 time tolerance); the pair merging soonest (latest time)
// wins, ties broken by lowest node-id pair.
CoalescentTree greedy_rate1(const std::vector<GaussianMessage>& leaf_messages,
                            const DiffusionKernel& kernel, int threads = 1);

}  // namespace coalmtl

#endif
