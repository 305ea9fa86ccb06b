#include "rbsdelab/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rbsdelab/errors.hpp"

namespace rbsdelab {

namespace {
constexpr double kProbSumTol = 1e-9;
}

FiltrationTree FiltrationTree::from_nodes(double dt, std::span<const NodeSpec> specs) {
  if (!(dt > 0.0)) throw TreeError("time step must be positive");
  if (specs.empty()) throw TreeError("tree has no nodes");
  FiltrationTree tree;
  tree.nodes_.resize(specs.size());
  std::vector<bool> seen(specs.size(), false);
  for (const auto& s : specs) {
    if (s.id >= specs.size()) throw TreeError("node id " + std::to_string(s.id) + " out of range");
    if (seen[s.id]) throw TreeError("duplicate node id " + std::to_string(s.id));
    seen[s.id] = true;
    tree.nodes_[s.id] = Node{s.id, s.layer, s.parent, s.prob, {}};
  }
  for (const auto& n : tree.nodes_) {
    if (n.parent == kNoParent) {
      if (n.id != 0) throw TreeError("the root must have id 0");
      if (n.layer != 0) throw TreeError("the root must sit on layer 0");
      continue;
    }
    if (n.id == 0) throw TreeError("node 0 must be the root");
    if (n.parent >= tree.nodes_.size()) {
      throw TreeError("node " + std::to_string(n.id) + " has unknown parent");
    }
    if (tree.nodes_[n.parent].layer + 1 != n.layer) {
      throw TreeError("node " + std::to_string(n.id) + " is not one layer below its parent");
    }
    if (!(n.prob > 0.0) || n.prob > 1.0 + kProbSumTol) {
      throw TreeError("edge into node " + std::to_string(n.id) + " has probability outside (0,1]");
    }
    tree.nodes_[n.parent].children.push_back(n.id);
  }
  tree.grid_.dt = dt;
  tree.finalize();
  return tree;
}

void FiltrationTree::finalize() {
  int depth = 0;
  for (const auto& n : nodes_) depth = std::max(depth, n.layer);
  grid_.steps = depth;
  layers_.assign(depth + 1, {});
  path_prob_.assign(nodes_.size(), 0.0);

  // Breadth-first from the root; every node must be reached.
  std::vector<NodeId> queue{0};
  path_prob_[0] = 1.0;
  std::size_t reached = 0;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    NodeId id = queue[head];
    ++reached;
    const Node& n = nodes_[id];
    layers_[n.layer].push_back(id);
    if (n.children.empty()) {
      if (n.layer != depth) {
        throw TreeError("leaf " + std::to_string(id) + " is not on the last layer");
      }
      continue;
    }
    double sum = 0.0;
    for (NodeId c : n.children) {
      sum += nodes_[c].prob;
      path_prob_[c] = path_prob_[id] * nodes_[c].prob;
      queue.push_back(c);
    }
    if (std::abs(sum - 1.0) > kProbSumTol) {
      throw TreeError("edge probabilities out of node " + std::to_string(id) + " sum to " +
                      std::to_string(sum));
    }
  }
  if (reached != nodes_.size()) throw TreeError("tree is not connected");
}

FiltrationTree FiltrationTree::uniform(int steps, double dt, std::span<const double> probs) {
  if (steps < 0) throw TreeError("negative step count");
  if (probs.empty()) throw TreeError("no branch probabilities");
  std::vector<NodeSpec> specs{{0, 0, kNoParent, 1.0}};
  std::vector<NodeId> frontier{0};
  for (int k = 1; k <= steps; ++k) {
    std::vector<NodeId> next;
    for (NodeId p : frontier) {
      for (double q : probs) {
        NodeId id = specs.size();
        specs.push_back({id, k, p, q});
        next.push_back(id);
      }
    }
    frontier = std::move(next);
  }
  return from_nodes(dt, specs);
}

FiltrationTree FiltrationTree::binomial(int steps, double dt, double p_up) {
  const double probs[] = {p_up, 1.0 - p_up};
  return uniform(steps, dt, probs);
}

FiltrationTree FiltrationTree::chain(int steps, double dt) {
  const double probs[] = {1.0};
  return uniform(steps, dt, probs);
}

NodeId FiltrationTree::ancestor(NodeId id, int k) const {
  while (nodes_[id].layer > k) id = nodes_[id].parent;
  return id;
}

bool FiltrationTree::is_descendant(NodeId id, NodeId of) const {
  if (nodes_[id].layer < nodes_[of].layer) return false;
  return ancestor(id, nodes_[of].layer) == of;
}

std::vector<NodeId> FiltrationTree::subtree_nodes(NodeId id) const {
  std::vector<NodeId> out{id};
  for (std::size_t head = 0; head < out.size(); ++head) {
    for (NodeId c : nodes_[out[head]].children) out.push_back(c);
  }
  return out;
}

std::vector<NodeId> FiltrationTree::subtree_leaves(NodeId id) const {
  std::vector<NodeId> out;
  for (NodeId n : subtree_nodes(id)) {
    if (is_leaf(n)) out.push_back(n);
  }
  return out;
}

std::vector<NodeId> FiltrationTree::path_to(NodeId leaf) const {
  std::vector<NodeId> path(nodes_[leaf].layer + 1);
  for (NodeId n = leaf;; n = nodes_[n].parent) {
    path[nodes_[n].layer] = n;
    if (nodes_[n].parent == kNoParent) break;
  }
  return path;
}

std::vector<NodeSpec> FiltrationTree::to_specs() const {
  std::vector<NodeSpec> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back({n.id, n.layer, n.parent, n.prob});
  return out;
}

LatticeTree unroll_lattice(int steps, double dt, std::span<const double> probs,
                           std::span<const int> offsets) {
  if (probs.size() != offsets.size()) throw TreeError("lattice probs/offsets size mismatch");
  FiltrationTree tree = FiltrationTree::uniform(steps, dt, probs);
  std::vector<int> position(tree.size(), 0);
  for (int k = 1; k <= steps; ++k) {
    for (NodeId p : tree.layer_nodes(k - 1)) {
      const auto& ch = tree.children(p);
      for (std::size_t j = 0; j < ch.size(); ++j) position[ch[j]] = position[p] + offsets[j];
    }
  }
  return {std::move(tree), std::move(position)};
}

// ---------------------------------------------------------------------------

AdaptedProcess AdaptedProcess::from_function(const FiltrationTree& tree,
                                             const std::function<double(NodeId)>& fn) {
  AdaptedProcess out(tree.size());
  for (NodeId n = 0; n < tree.size(); ++n) out[n] = fn(n);
  return out;
}

AdaptedProcess operator+(AdaptedProcess a, const AdaptedProcess& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

AdaptedProcess operator-(AdaptedProcess a, const AdaptedProcess& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

AdaptedProcess operator*(double s, AdaptedProcess a) {
  for (auto& v : a.values_) v *= s;
  return a;
}

AdaptedProcess AdaptedProcess::abs() const {
  AdaptedProcess out(*this);
  for (auto& v : out.values_) v = std::abs(v);
  return out;
}

double AdaptedProcess::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

// ---------------------------------------------------------------------------

StoppingRule StoppingRule::from_flags(const FiltrationTree& tree,
                                      std::span<const std::uint8_t> flags) {
  if (flags.size() != tree.size()) throw ConfigError("stopping flags do not match tree size");
  std::vector<std::uint8_t> out(tree.size(), 0);
  for (int k = 0; k <= tree.depth(); ++k) {
    for (NodeId n : tree.layer_nodes(k)) {
      NodeId p = tree.parent(n);
      bool inherited = p != kNoParent && out[p];
      out[n] = (inherited || flags[n] || tree.is_leaf(n)) ? 1 : 0;
    }
  }
  return StoppingRule(std::move(out));
}

StoppingRule StoppingRule::from_stop_nodes(const FiltrationTree& tree,
                                           std::span<const NodeId> nodes) {
  std::vector<std::uint8_t> flags(tree.size(), 0);
  for (NodeId n : nodes) flags.at(n) = 1;
  return from_flags(tree, flags);
}

StoppingRule StoppingRule::at_layer(const FiltrationTree& tree, int k) {
  std::vector<std::uint8_t> flags(tree.size(), 0);
  for (NodeId n = 0; n < tree.size(); ++n) flags[n] = tree.layer(n) >= k ? 1 : 0;
  return StoppingRule(std::move(flags));
}

StoppingRule StoppingRule::first_hitting(const FiltrationTree& tree, const StoppingRule& from,
                                         const std::function<bool(NodeId)>& hit) {
  std::vector<std::uint8_t> flags(tree.size(), 0);
  for (NodeId n = 0; n < tree.size(); ++n) flags[n] = (from.stopped_by(n) && hit(n)) ? 1 : 0;
  return from_flags(tree, flags);
}

bool StoppingRule::stops_at(const FiltrationTree& tree, NodeId n) const {
  if (!flags_[n]) return false;
  NodeId p = tree.parent(n);
  return p == kNoParent || !flags_[p];
}

std::vector<NodeId> StoppingRule::stop_nodes(const FiltrationTree& tree) const {
  std::vector<NodeId> out;
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (stops_at(tree, n)) out.push_back(n);
  }
  return out;
}

int StoppingRule::time_on_path(const FiltrationTree& tree, NodeId leaf) const {
  for (NodeId n : tree.path_to(leaf)) {
    if (flags_[n]) return tree.layer(n);
  }
  return tree.depth();
}

StoppingRule min(const StoppingRule& a, const StoppingRule& b) {
  std::vector<std::uint8_t> f(a.flags_.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = a.flags_[i] | b.flags_[i];
  return StoppingRule(std::move(f));
}

StoppingRule max(const StoppingRule& a, const StoppingRule& b) {
  std::vector<std::uint8_t> f(a.flags_.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = a.flags_[i] & b.flags_[i];
  return StoppingRule(std::move(f));
}

bool rule_le(const StoppingRule& a, const StoppingRule& b) {
  // {b <= k} must be contained in {a <= k}.
  for (NodeId n = 0; n < a.size(); ++n) {
    if (b.stopped_by(n) && !a.stopped_by(n)) return false;
  }
  return true;
}

void require_ordered(const StoppingRule& a, const StoppingRule& b, const char* what) {
  if (a.size() != b.size()) throw OrderingViolation(std::string(what) + ": rule size mismatch");
  if (!rule_le(a, b)) throw OrderingViolation(std::string(what) + ": stopping rules out of order");
}

// ---------------------------------------------------------------------------

double expect_children(const FiltrationTree& tree, const AdaptedProcess& x, NodeId n) {
  double s = 0.0;
  for (NodeId c : tree.children(n)) s += tree.node(c).prob * x[c];
  return s;
}

std::vector<double> conditional_expectation(const FiltrationTree& tree, const AdaptedProcess& x,
                                            int k) {
  if (k < 0 || k >= tree.depth()) {
    throw ConfigError("conditional expectation layer " + std::to_string(k) + " out of range");
  }
  std::vector<double> out;
  out.reserve(tree.layer_nodes(k).size());
  for (NodeId n : tree.layer_nodes(k)) out.push_back(expect_children(tree, x, n));
  return out;
}

DoobDecomposition doob_decompose(const FiltrationTree& tree, const AdaptedProcess& x) {
  DoobDecomposition d{AdaptedProcess(tree.size()), AdaptedProcess(tree.size())};
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (tree.is_leaf(n)) continue;
    const double e = expect_children(tree, x, n);
    for (NodeId c : tree.children(n)) {
      d.predictable_increments[c] = e - x[n];
      d.martingale_increments[c] = x[c] - e;
    }
  }
  return d;
}

AdaptedProcess DoobDecomposition::reconstruct(const FiltrationTree& tree, double x0) const {
  AdaptedProcess out(tree.size());
  for (int k = 0; k <= tree.depth(); ++k) {
    for (NodeId n : tree.layer_nodes(k)) {
      NodeId p = tree.parent(n);
      out[n] = p == kNoParent ? x0
                              : out[p] + martingale_increments[n] + predictable_increments[n];
    }
  }
  return out;
}

AdaptedProcess snell_envelope(const FiltrationTree& tree, const AdaptedProcess& x,
                              const StoppingRule& from, const StoppingRule& to) {
  require_ordered(from, to, "snell_envelope");
  AdaptedProcess s(tree.size());
  for (int k = tree.depth(); k >= 0; --k) {
    for (NodeId n : tree.layer_nodes(k)) {
      if (to.stopped_by(n)) {
        s[n] = x[n];
      } else if (from.stopped_by(n)) {
        s[n] = std::max(x[n], expect_children(tree, s, n));
      } else {
        s[n] = expect_children(tree, s, n);
      }
    }
  }
  return s;
}

double class_d_norm(const FiltrationTree& tree, const AdaptedProcess& y, const StoppingRule& alpha,
                    const StoppingRule& beta) {
  return snell_envelope(tree, y.abs(), alpha, beta)[tree.root()];
}

AdaptedProcess predictable_projection(const FiltrationTree& tree, const AdaptedProcess& x) {
  AdaptedProcess out(tree.size());
  out[tree.root()] = x[tree.root()];
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (tree.is_leaf(n)) continue;
    const double e = expect_children(tree, x, n);
    for (NodeId c : tree.children(n)) out[c] = e;
  }
  return out;
}

AdaptedProcess stopped_value(const FiltrationTree& tree, const AdaptedProcess& x,
                             const StoppingRule& tau) {
  AdaptedProcess out(tree.size(), std::numeric_limits<double>::quiet_NaN());
  for (int k = 0; k <= tree.depth(); ++k) {
    for (NodeId n : tree.layer_nodes(k)) {
      if (tau.stops_at(tree, n)) {
        out[n] = x[n];
      } else if (tau.stopped_by(n)) {
        out[n] = out[tree.parent(n)];
      }
    }
  }
  return out;
}

double expected_stopped_value(const FiltrationTree& tree, const AdaptedProcess& x,
                              const StoppingRule& tau) {
  double s = 0.0;
  for (NodeId n : tau.stop_nodes(tree)) s += tree.path_probability(n) * x[n];
  return s;
}

}  // namespace rbsdelab
