#ifndef COALMTL_TREE_HPP
#define COALMTL_TREE_HPP

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace coalmtl {

constexpr int kNoNode = -1;

// One node of a coalescent tree. Leaves sit at time 0 and carry the task
// index they represent; internal nodes are coalescent events at negative
// times.
struct TreeNode {
  int id = kNoNode;
  int parent = kNoNode;
  int left = kNoNode;
  int right = kNoNode;
  double time = 0.0;
  int task = kNoNode;  // leaf label; kNoNode for internal nodes

  bool is_leaf() const { return left == kNoNode && right == kNoNode; }
};

// Strictly binary tree over K leaves with K-1 coalescent events. Node ids
// are fixed: 0..K-1 are leaves in task order, K..2K-2 are internal nodes in
// event order (first merge = K, root = 2K-2). Trees are immutable values
// once built.
class CoalescentTree {
 public:
  CoalescentTree() = default;

  // Builds and validates. Throws InvalidTreeError on any broken invariant.
  explicit CoalescentTree(std::vector<TreeNode> nodes);

  // Single-leaf degenerate tree (the leaf is the root); used only as a BP
  // edge case, never by the coalescent prior.
  static CoalescentTree single_leaf();

  int leaf_count() const { return leaf_count_; }
  int node_count() const { return static_cast<int>(nodes_.size()); }
  int root() const { return root_; }
  const TreeNode& node(int id) const { return nodes_[id]; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }

  // Branch length from a non-root node up to its parent (> 0).
  double branch(int id) const;

  // Internal node ids ordered by event (latest event first, root last).
  std::vector<int> internal_ids() const;

  // Event durations delta_i > 0, ordered backward in time starting from the
  // leaf level at t = 0.
  std::vector<double> durations() const;

  // Post-order traversal (children before parents).
  std::vector<int> postorder() const;

  // Leaf task sets, one per internal node; topology comparison ignores
  // times, so two trees are topology-equal iff their clade sets match.
  std::set<std::set<int>> clades() const;

  bool same_topology(const CoalescentTree& other) const {
    return leaf_count_ == other.leaf_count_ && clades() == other.clades();
  }

  // Newick with branch lengths; leaves named by task (names optional),
  // children ordered by smallest task index underneath.
  std::string to_newick(const std::vector<std::string>& leaf_names = {}) const;

  // GraphViz export with node times as labels.
  std::string to_dot(const std::vector<std::string>& leaf_names = {}) const;

  // Parses a Newick string produced by to_newick (binary, rooted, branch
  // lengths present). Leaf names are matched against `leaf_names` when
  // given, otherwise leaves are numbered by order of appearance.
  static CoalescentTree from_newick(const std::string& text,
                                    const std::vector<std::string>& leaf_names = {});

 private:
  void validate() const;

  std::vector<TreeNode> nodes_;
  int root_ = kNoNode;
  int leaf_count_ = 0;
};

}  // namespace coalmtl

#endif
