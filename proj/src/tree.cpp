#include "coalmtl/tree.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "coalmtl/errors.hpp"
#include "coalmtl/util.hpp"

namespace coalmtl {

CoalescentTree::CoalescentTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {
  leaf_count_ = 0;
  root_ = kNoNode;
  for (const auto& n : nodes_) {
    if (n.is_leaf()) ++leaf_count_;
    if (n.parent == kNoNode) {
      if (root_ != kNoNode) throw InvalidTreeError("tree has more than one root");
      root_ = n.id;
    }
  }
  if (root_ == kNoNode) throw InvalidTreeError("tree has no root");
  validate();
}

CoalescentTree CoalescentTree::single_leaf() {
  CoalescentTree t;
  TreeNode leaf;
  leaf.id = 0;
  leaf.time = 0.0;
  leaf.task = 0;
  t.nodes_ = {leaf};
  t.root_ = 0;
  t.leaf_count_ = 1;
  return t;
}

void CoalescentTree::validate() const {
  const int k = leaf_count_;
  const int n = node_count();
  if (n != 2 * k - 1)
    throw InvalidTreeError("binary tree over " + std::to_string(k) + " leaves must have " +
                           std::to_string(2 * k - 1) + " nodes, got " + std::to_string(n));
  for (int i = 0; i < n; ++i) {
    const TreeNode& nd = nodes_[i];
    if (nd.id != i) throw InvalidTreeError("node ids must be dense and ordered");
    if (nd.is_leaf()) {
      if (i >= k) throw InvalidTreeError("leaves must occupy ids 0..K-1");
      if (nd.time != 0.0) throw InvalidTreeError("leaf time must be 0");
      if (nd.task != i) throw InvalidTreeError("leaf task label must match its id");
    } else {
      if (i < k) throw InvalidTreeError("internal nodes must occupy ids K..2K-2");
      if (nd.left == kNoNode || nd.right == kNoNode)
        throw InvalidTreeError("internal node " + std::to_string(i) + " must have two children");
      if (nd.task != kNoNode) throw InvalidTreeError("internal nodes carry no task label");
      if (!(nd.time < 0.0))
        throw InvalidTreeError("internal node " + std::to_string(i) + " must have negative time");
      for (int c : {nd.left, nd.right}) {
        if (c < 0 || c >= n) throw InvalidTreeError("child id out of range");
        if (nodes_[c].parent != i) throw InvalidTreeError("parent/child links inconsistent");
        if (!(nodes_[c].time > nd.time))
          throw InvalidTreeError("node " + std::to_string(i) +
                                 " must be strictly earlier than its children");
      }
    }
  }
  if (!nodes_[root_].is_leaf() || k == 1) {
    // Event order: ids K..2K-2 must have strictly decreasing times.
    double prev = 0.0;
    for (int i = k; i < n; ++i) {
      if (!(nodes_[i].time < prev))
        throw InvalidTreeError("coalescent events must be strictly ordered in time");
      prev = nodes_[i].time;
    }
    if (k >= 2 && root_ != n - 1) throw InvalidTreeError("root must be the last event");
  }
}

double CoalescentTree::branch(int id) const {
  const TreeNode& nd = nodes_[id];
  if (nd.parent == kNoNode) throw InvalidTreeError("root has no branch");
  return nd.time - nodes_[nd.parent].time;
}

std::vector<int> CoalescentTree::internal_ids() const {
  std::vector<int> out;
  for (int i = leaf_count_; i < node_count(); ++i) out.push_back(i);
  return out;
}

std::vector<double> CoalescentTree::durations() const {
  std::vector<double> out;
  double prev = 0.0;
  for (int i = leaf_count_; i < node_count(); ++i) {
    double delta = prev - nodes_[i].time;
    if (!(delta > 0.0)) throw InvalidTreeError("non-positive coalescent duration");
    out.push_back(delta);
    prev = nodes_[i].time;
  }
  return out;
}

std::vector<int> CoalescentTree::postorder() const {
  std::vector<int> order;
  order.reserve(node_count());
  std::function<void(int)> walk = [&](int id) {
    const TreeNode& nd = nodes_[id];
    if (!nd.is_leaf()) {
      walk(nd.left);
      walk(nd.right);
    }
    order.push_back(id);
  };
  walk(root_);
  return order;
}

std::set<std::set<int>> CoalescentTree::clades() const {
  std::vector<std::set<int>> below(node_count());
  for (int id : postorder()) {
    const TreeNode& nd = nodes_[id];
    if (nd.is_leaf()) {
      below[id] = {nd.task};
    } else {
      below[id] = below[nd.left];
      below[id].insert(below[nd.right].begin(), below[nd.right].end());
    }
  }
  std::set<std::set<int>> out;
  for (int i = leaf_count_; i < node_count(); ++i) out.insert(below[i]);
  return out;
}

namespace {

int min_task_below(const CoalescentTree& t, int id, std::vector<int>& memo) {
  if (memo[id] >= 0) return memo[id];
  const TreeNode& nd = t.node(id);
  int m = nd.is_leaf() ? nd.task
                       : std::min(min_task_below(t, nd.left, memo),
                                  min_task_below(t, nd.right, memo));
  memo[id] = m;
  return m;
}

// Newick-reserved characters in labels would corrupt the export.
std::string sanitize_label(std::string name) {
  for (char& c : name) {
    if (c == '(' || c == ')' || c == ',' || c == ':' || c == ';' || c == '[' || c == ']' ||
        std::isspace(static_cast<unsigned char>(c)))
      c = '_';
  }
  return name;
}

std::string leaf_name(const std::vector<std::string>& names, int task) {
  if (task < static_cast<int>(names.size())) return sanitize_label(names[task]);
  return "t" + std::to_string(task);
}

}  // namespace

std::string CoalescentTree::to_newick(const std::vector<std::string>& names) const {
  std::vector<int> memo(node_count(), -1);
  std::ostringstream os;
  std::function<void(int)> write = [&](int id) {
    const TreeNode& nd = nodes_[id];
    if (nd.is_leaf()) {
      os << leaf_name(names, nd.task);
    } else {
      int a = nd.left, b = nd.right;
      if (min_task_below(*this, b, memo) < min_task_below(*this, a, memo)) std::swap(a, b);
      os << "(";
      write(a);
      os << ",";
      write(b);
      os << ")";
    }
    if (nd.parent != kNoNode) os << ":" << fmt_double(branch(id));
  };
  write(root_);
  os << ";";
  return os.str();
}

std::string CoalescentTree::to_dot(const std::vector<std::string>& names) const {
  std::ostringstream os;
  os << "digraph coalescent {\n";
  for (const auto& nd : nodes_) {
    os << "  n" << nd.id << " [label=\"";
    if (nd.is_leaf())
      os << leaf_name(names, nd.task);
    else
      os << "t=" << fmt_double(nd.time);
    os << "\"";
    if (nd.is_leaf()) os << ", shape=box";
    os << "];\n";
  }
  for (const auto& nd : nodes_) {
    if (nd.is_leaf()) continue;
    std::vector<int> memo(node_count(), -1);
    int a = nd.left, b = nd.right;
    if (min_task_below(*this, b, memo) < min_task_below(*this, a, memo)) std::swap(a, b);
    os << "  n" << nd.id << " -> n" << a << ";\n";
    os << "  n" << nd.id << " -> n" << b << ";\n";
  }
  os << "}\n";
  return os.str();
}

namespace {

struct ParsedNode {
  std::string name;
  double branch = 0.0;
  bool has_branch = false;
  int left = -1, right = -1;
};

struct NewickParser {
  const std::string& s;
  std::size_t pos = 0;
  std::vector<ParsedNode> nodes;

  explicit NewickParser(const std::string& text) : s(text) {}

  void skip_space() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }

  [[noreturn]] void fail(const std::string& why) {
    throw DataError("newick parse error at position " + std::to_string(pos) + ": " + why);
  }

  int parse_clade() {
    skip_space();
    ParsedNode out;
    if (pos < s.size() && s[pos] == '(') {
      ++pos;
      out.left = parse_clade();
      skip_space();
      if (pos >= s.size() || s[pos] != ',') fail("expected ','");
      ++pos;
      out.right = parse_clade();
      skip_space();
      if (pos >= s.size() || s[pos] != ')') fail("expected ')' (trees must be binary)");
      ++pos;
    }
    skip_space();
    while (pos < s.size() && s[pos] != ':' && s[pos] != ',' && s[pos] != ')' && s[pos] != ';' &&
           !std::isspace(static_cast<unsigned char>(s[pos]))) {
      out.name.push_back(s[pos++]);
    }
    skip_space();
    if (pos < s.size() && s[pos] == ':') {
      ++pos;
      std::size_t start = pos;
      while (pos < s.size() && (std::isdigit(static_cast<unsigned char>(s[pos])) ||
                                s[pos] == '.' || s[pos] == '-' || s[pos] == '+' ||
                                s[pos] == 'e' || s[pos] == 'E')) {
        ++pos;
      }
      if (pos == start) fail("expected branch length after ':'");
      out.branch = std::strtod(s.substr(start, pos - start).c_str(), nullptr);
      out.has_branch = true;
    }
    nodes.push_back(out);
    return static_cast<int>(nodes.size()) - 1;
  }
};

}  // namespace

CoalescentTree CoalescentTree::from_newick(const std::string& text,
                                           const std::vector<std::string>& names) {
  NewickParser p(text);
  int top = p.parse_clade();
  p.skip_space();
  if (p.pos >= p.s.size() || p.s[p.pos] != ';') p.fail("expected ';'");

  // Times from the leaf level: leaves at 0, parents below their children.
  int nparsed = static_cast<int>(p.nodes.size());
  std::vector<double> depth(nparsed, 0.0);  // distance from node down to leaf level
  std::function<double(int)> set_depth = [&](int i) -> double {
    const ParsedNode& nd = p.nodes[i];
    if (nd.left < 0) {
      depth[i] = 0.0;
      return 0.0;
    }
    double dl = set_depth(nd.left) + p.nodes[nd.left].branch;
    double dr = set_depth(nd.right) + p.nodes[nd.right].branch;
    if (std::abs(dl - dr) > 1e-6 * std::max(1.0, std::abs(dl)))
      throw DataError("newick tree is not ultrametric (leaves must share time 0)");
    depth[i] = std::max(dl, dr);
    return depth[i];
  };
  set_depth(top);

  int nleaves = 0;
  for (const auto& nd : p.nodes)
    if (nd.left < 0) ++nleaves;
  if (nleaves < 1) throw DataError("newick tree has no leaves");

  // Leaf task assignment: by name table when given; else by the default
  // `t<k>` naming when every leaf carries it; else by order of appearance.
  std::vector<int> task_of(nparsed, kNoNode);
  if (names.empty()) {
    std::set<int> seen;
    bool default_named = true;
    for (int i = 0; i < nparsed && default_named; ++i) {
      if (p.nodes[i].left >= 0) continue;
      const std::string& nm = p.nodes[i].name;
      if (nm.size() < 2 || nm[0] != 't' ||
          nm.find_first_not_of("0123456789", 1) != std::string::npos) {
        default_named = false;
        break;
      }
      int idx = std::atoi(nm.c_str() + 1);
      if (idx < 0 || !seen.insert(idx).second) default_named = false;
      task_of[i] = idx;
    }
    if (default_named && !seen.empty() && *seen.rbegin() == static_cast<int>(seen.size()) - 1) {
      // consistent t0..t{K-1} labels
    } else {
      int next_task = 0;
      for (int i = 0; i < nparsed; ++i)
        if (p.nodes[i].left < 0) task_of[i] = next_task++;
    }
  } else {
    std::vector<std::string> clean;
    for (const auto& n : names) clean.push_back(sanitize_label(n));
    for (int i = 0; i < nparsed; ++i) {
      if (p.nodes[i].left >= 0) continue;
      auto it = std::find(clean.begin(), clean.end(), p.nodes[i].name);
      if (it == clean.end())
        throw DataError("newick leaf '" + p.nodes[i].name + "' is not a known task");
      task_of[i] = static_cast<int>(it - clean.begin());
    }
  }

  // Internal events sorted by time descending (latest merge first) to give
  // them ids K, K+1, ...
  std::vector<int> internals;
  for (int i = 0; i < nparsed; ++i)
    if (p.nodes[i].left >= 0) internals.push_back(i);
  std::stable_sort(internals.begin(), internals.end(),
                   [&](int a, int b) { return depth[a] < depth[b]; });

  std::vector<int> new_id(nparsed, kNoNode);
  for (int i = 0; i < nparsed; ++i)
    if (p.nodes[i].left < 0) new_id[i] = task_of[i];
  for (std::size_t e = 0; e < internals.size(); ++e)
    new_id[internals[e]] = nleaves + static_cast<int>(e);

  std::vector<TreeNode> out(2 * nleaves - 1);
  for (int i = 0; i < nparsed; ++i) {
    TreeNode nd;
    nd.id = new_id[i];
    nd.time = -depth[i];
    if (p.nodes[i].left < 0) {
      nd.task = task_of[i];
    } else {
      nd.left = new_id[p.nodes[i].left];
      nd.right = new_id[p.nodes[i].right];
    }
    out[nd.id] = nd;
  }
  for (auto& nd : out) {
    if (nd.is_leaf()) continue;
    out[nd.left].parent = nd.id;
    out[nd.right].parent = nd.id;
  }
  if (nleaves == 1) return CoalescentTree::single_leaf();
  return CoalescentTree(std::move(out));
}

}  // namespace coalmtl
