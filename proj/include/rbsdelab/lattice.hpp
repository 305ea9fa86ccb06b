#pragma once

// Finite filtered probability spaces: event trees, adapted processes,
// stopping rules and the elementary operators built on them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace rbsdelab {

using NodeId = std::size_t;
inline constexpr NodeId kNoParent = static_cast<NodeId>(-1);

struct TimeGrid {
  int steps = 0;
  double dt = 1.0;

  double t(int k) const { return k * dt; }
  double horizon() const { return steps * dt; }
};

/// One row of the serialized node table: `{id, layer, parent, prob}`.
struct NodeSpec {
  NodeId id = 0;
  int layer = 0;
  NodeId parent = kNoParent;
  double prob = 1.0;  // probability of the edge parent -> id
};

/// Finite event tree. Node ids are 0..N-1; the atoms of F_k are the
/// layer-k nodes and every leaf sits on the last layer.
class FiltrationTree {
 public:
  struct Node {
    NodeId id = 0;
    int layer = 0;
    NodeId parent = kNoParent;
    double prob = 1.0;
    std::vector<NodeId> children;
  };

  /// Validates and builds. Throws TreeError on any structural defect
  /// (non-positive probability, probabilities not summing to one, leaves
  /// off the last layer, disconnected or duplicate ids).
  static FiltrationTree from_nodes(double dt, std::span<const NodeSpec> nodes);

  /// Full tree where every node has `probs.size()` children.
  static FiltrationTree uniform(int steps, double dt, std::span<const double> probs);
  static FiltrationTree binomial(int steps, double dt, double p_up = 0.5);
  /// A single path of `steps + 1` nodes (deterministic filtration).
  static FiltrationTree chain(int steps, double dt);

  std::size_t size() const { return nodes_.size(); }
  int depth() const { return grid_.steps; }
  double dt() const { return grid_.dt; }
  const TimeGrid& grid() const { return grid_; }
  NodeId root() const { return 0; }

  const Node& node(NodeId id) const { return nodes_[id]; }
  int layer(NodeId id) const { return nodes_[id].layer; }
  double time(NodeId id) const { return grid_.t(nodes_[id].layer); }
  NodeId parent(NodeId id) const { return nodes_[id].parent; }
  const std::vector<NodeId>& children(NodeId id) const { return nodes_[id].children; }
  bool is_leaf(NodeId id) const { return nodes_[id].children.empty(); }
  const std::vector<NodeId>& layer_nodes(int k) const { return layers_[k]; }
  std::span<const NodeId> leaves() const { return layers_.back(); }

  /// Probability of reaching `id` from the root.
  double path_probability(NodeId id) const { return path_prob_[id]; }
  /// Ancestor of `id` at layer `k` (k <= layer(id)).
  NodeId ancestor(NodeId id, int k) const;
  bool is_descendant(NodeId id, NodeId of) const;
  /// Leaves of the subtree rooted at `id`, in tree order.
  std::vector<NodeId> subtree_leaves(NodeId id) const;
  std::vector<NodeId> subtree_nodes(NodeId id) const;
  /// Root-to-leaf node sequence ending at `leaf`.
  std::vector<NodeId> path_to(NodeId leaf) const;

  std::vector<NodeSpec> to_specs() const;

 private:
  FiltrationTree() = default;
  void finalize();

  TimeGrid grid_;
  std::vector<Node> nodes_;
  std::vector<std::vector<NodeId>> layers_;
  std::vector<double> path_prob_;
};

/// Recombining lattice unrolled into a tree. `position[n]` is the lattice
/// coordinate (sum of move offsets) of node n.
struct LatticeTree {
  FiltrationTree tree;
  std::vector<int> position;
};

/// Each step moves by `offsets[j]` with probability `probs[j]`.
LatticeTree unroll_lattice(int steps, double dt, std::span<const double> probs,
                           std::span<const int> offsets);

/// One real value per node.
class AdaptedProcess {
 public:
  AdaptedProcess() = default;
  explicit AdaptedProcess(std::size_t n, double value = 0.0) : values_(n, value) {}
  explicit AdaptedProcess(std::vector<double> values) : values_(std::move(values)) {}

  static AdaptedProcess constant(const FiltrationTree& tree, double c) {
    return AdaptedProcess(tree.size(), c);
  }
  static AdaptedProcess from_function(const FiltrationTree& tree,
                                      const std::function<double(NodeId)>& fn);

  double& operator[](NodeId n) { return values_[n]; }
  double operator[](NodeId n) const { return values_[n]; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::vector<double>& raw() { return values_; }

  friend AdaptedProcess operator+(AdaptedProcess a, const AdaptedProcess& b);
  friend AdaptedProcess operator-(AdaptedProcess a, const AdaptedProcess& b);
  friend AdaptedProcess operator*(double s, AdaptedProcess a);
  AdaptedProcess abs() const;
  double max_abs() const;

 private:
  std::vector<double> values_;
};

/// A stopping time tau <= K stored as the indicator of {tau <= layer(n)}.
/// The indicator is monotone along every path and true on all leaves, so
/// tau(path) is the layer of the first flagged node.
class StoppingRule {
 public:
  StoppingRule() = default;

  /// Canonicalizes arbitrary flags: tau = first flagged node on each path,
  /// leaves are always flagged.
  static StoppingRule from_flags(const FiltrationTree& tree, std::span<const std::uint8_t> flags);
  /// Stop exactly at the given antichain of nodes (plus leaves on paths
  /// that avoid it).
  static StoppingRule from_stop_nodes(const FiltrationTree& tree, std::span<const NodeId> nodes);
  static StoppingRule at_layer(const FiltrationTree& tree, int k);
  static StoppingRule terminal(const FiltrationTree& tree) { return at_layer(tree, tree.depth()); }
  /// inf{k >= from : hit(n_k)} ^ K.
  static StoppingRule first_hitting(const FiltrationTree& tree, const StoppingRule& from,
                                    const std::function<bool(NodeId)>& hit);

  /// True iff tau <= layer(n) on the paths through n.
  bool stopped_by(NodeId n) const { return flags_[n] != 0; }
  /// True iff tau == layer(n) on the paths through n.
  bool stops_at(const FiltrationTree& tree, NodeId n) const;
  /// Nodes where the rule fires (an antichain covering every path).
  std::vector<NodeId> stop_nodes(const FiltrationTree& tree) const;
  /// Layer at which the rule fires on the path through `leaf`.
  int time_on_path(const FiltrationTree& tree, NodeId leaf) const;

  std::size_t size() const { return flags_.size(); }

  friend StoppingRule min(const StoppingRule& a, const StoppingRule& b);
  friend StoppingRule max(const StoppingRule& a, const StoppingRule& b);
  friend bool operator==(const StoppingRule&, const StoppingRule&) = default;

 private:
  explicit StoppingRule(std::vector<std::uint8_t> flags) : flags_(std::move(flags)) {}
  std::vector<std::uint8_t> flags_;
};

/// a <= b on every path.
bool rule_le(const StoppingRule& a, const StoppingRule& b);
void require_ordered(const StoppingRule& a, const StoppingRule& b, const char* what);

/// Per-node Doob decomposition increments, stored on the layer-(k+1) node
/// for the step k -> k+1. Root entries are zero.
struct DoobDecomposition {
  AdaptedProcess martingale_increments;
  AdaptedProcess predictable_increments;

  /// X_0 + sum of increments along the path.
  AdaptedProcess reconstruct(const FiltrationTree& tree, double x0) const;
};

/// Sum over children of p(n -> c) X(c).
double expect_children(const FiltrationTree& tree, const AdaptedProcess& x, NodeId n);

/// E[X_{k+1} | F_k] on the layer-k nodes, in `tree.layer_nodes(k)` order.
std::vector<double> conditional_expectation(const FiltrationTree& tree, const AdaptedProcess& x,
                                            int k);

DoobDecomposition doob_decompose(const FiltrationTree& tree, const AdaptedProcess& x);

/// S = max(X, E[S_next]) on [from, to), S = X from `to` onwards and
/// S = E[S_next] before `from`. S at a node is the best expected reward
/// among stopping times in [from, to] given that node.
AdaptedProcess snell_envelope(const FiltrationTree& tree, const AdaptedProcess& x,
                              const StoppingRule& from, const StoppingRule& to);

/// sup over alpha <= tau <= beta of E|Y_tau|.
double class_d_norm(const FiltrationTree& tree, const AdaptedProcess& y, const StoppingRule& alpha,
                    const StoppingRule& beta);

/// Layer k >= 1: E[X_k | F_{k-1}] (shared by siblings); root: X_0.
AdaptedProcess predictable_projection(const FiltrationTree& tree, const AdaptedProcess& x);

/// X_tau propagated to every node at or after tau; NaN before tau.
AdaptedProcess stopped_value(const FiltrationTree& tree, const AdaptedProcess& x,
                             const StoppingRule& tau);

/// E[X_tau] at the root.
double expected_stopped_value(const FiltrationTree& tree, const AdaptedProcess& x,
                              const StoppingRule& tau);

/// Discrete left limit: X_{k-1} at layer k >= 1, X_0 at the root.
inline double left_limit(const FiltrationTree& tree, const AdaptedProcess& x, NodeId n) {
  NodeId p = tree.parent(n);
  return p == kNoParent ? x[n] : x[p];
}

}  // namespace rbsdelab
