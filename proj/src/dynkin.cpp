#include "rbsdelab/dynkin.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rbsdelab/errors.hpp"

namespace rbsdelab {

namespace {

using Flags = std::vector<std::uint8_t>;

// A subtree renumbered 0..m-1 in breadth-first order (parents first).
struct Subtree {
  std::vector<NodeId> global;
  std::vector<std::vector<int>> children;
  std::vector<int> parent;

  Subtree(const FiltrationTree& tree, NodeId anchor) : global(tree.subtree_nodes(anchor)) {
    std::vector<int> local(tree.size(), -1);
    for (std::size_t i = 0; i < global.size(); ++i) local[global[i]] = static_cast<int>(i);
    children.resize(global.size());
    parent.assign(global.size(), -1);
    for (std::size_t i = 0; i < global.size(); ++i) {
      for (NodeId c : tree.children(global[i])) {
        children[i].push_back(local[c]);
        parent[local[c]] = static_cast<int>(i);
      }
    }
  }
  std::size_t size() const { return global.size(); }
};

std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    return std::numeric_limits<std::uint64_t>::max();
  }
  return a * b;
}

std::uint64_t count_below(const FiltrationTree& tree, NodeId v) {
  if (tree.is_leaf(v)) return 1;
  std::uint64_t prod = 1;
  for (NodeId c : tree.children(v)) prod = saturating_mul(prod, count_below(tree, c));
  return prod == std::numeric_limits<std::uint64_t>::max() ? prod : prod + 1;
}

void set_subtree(const Subtree& s, int v, Flags& flags, std::uint8_t value) {
  flags[v] = value;
  for (int c : s.children[v]) set_subtree(s, c, flags, value);
}

// Each frontier node either stops (its whole subtree is flagged) or passes
// the decision on to its children.
void enumerate_frontier(const Subtree& s, std::vector<int>& pending, Flags& flags,
                        const std::function<void(const Flags&)>& visit) {
  if (pending.empty()) {
    visit(flags);
    return;
  }
  const int v = pending.back();
  pending.pop_back();
  set_subtree(s, v, flags, 1);
  enumerate_frontier(s, pending, flags, visit);
  set_subtree(s, v, flags, 0);
  if (!s.children[v].empty()) {
    const auto& ch = s.children[v];
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) pending.push_back(*it);
    enumerate_frontier(s, pending, flags, visit);
    pending.resize(pending.size() - ch.size());
  }
  pending.push_back(v);
}

void enumerate_local(const Subtree& s, const std::function<void(const Flags&)>& visit) {
  Flags flags(s.size(), 0);
  std::vector<int> pending{0};
  enumerate_frontier(s, pending, flags, visit);
}

std::vector<Flags> collect_local(const Subtree& s) {
  std::vector<Flags> out;
  enumerate_local(s, [&](const Flags& f) { out.push_back(f); });
  return out;
}

// Evaluates J at the subtree root for one pair of local rules. With a
// generator the continuation is the implicit f-step instead of the linear
// running sum.
class PayoffEvaluator {
 public:
  PayoffEvaluator(const FiltrationTree& tree, const GamePayoff& payoff, const Generator* f,
                  const RootOptions& root)
      : tree_(tree), payoff_(payoff), f_(f), root_(root) {}

  double operator()(const Subtree& s, const Flags& sigma, const Flags& tau) {
    work_.resize(s.size());
    for (std::size_t i = s.size(); i-- > 0;) {
      const NodeId n = s.global[i];
      if (s.children[i].empty()) {
        work_[i] = payoff_.terminal[n];
      } else if (tau[i]) {
        work_[i] = payoff_.upper[n];
      } else if (sigma[i]) {
        work_[i] = payoff_.lower[n];
      } else {
        work_[i] = continuation(s, i);
      }
    }
    return work_[0];
  }

  /// Value for the minimizer's best reply to a fixed sigma.
  double best_tau(const Subtree& s, const Flags& sigma) {
    work_.resize(s.size());
    for (std::size_t i = s.size(); i-- > 0;) {
      const NodeId n = s.global[i];
      if (s.children[i].empty()) {
        work_[i] = payoff_.terminal[n];
      } else if (sigma[i]) {
        work_[i] = std::min(payoff_.lower[n], payoff_.upper[n]);
      } else {
        work_[i] = std::min(payoff_.upper[n], continuation(s, i));
      }
    }
    return work_[0];
  }

  /// Value for the maximizer's best reply to a fixed tau.
  double best_sigma(const Subtree& s, const Flags& tau) {
    work_.resize(s.size());
    for (std::size_t i = s.size(); i-- > 0;) {
      const NodeId n = s.global[i];
      if (s.children[i].empty()) {
        work_[i] = payoff_.terminal[n];
      } else if (tau[i]) {
        work_[i] = payoff_.upper[n];
      } else {
        work_[i] = std::max(payoff_.lower[n], continuation(s, i));
      }
    }
    return work_[0];
  }

  bool linear() const { return f_ == nullptr; }

 private:
  double continuation(const Subtree& s, std::size_t i) const {
    const NodeId n = s.global[i];
    double e = 0.0;
    for (int c : s.children[i]) e += tree_.node(s.global[c]).prob * work_[c];
    if (!f_) return e + payoff_.running[n] * tree_.dt();
    const int k = tree_.layer(n);
    return implicit_step(e, [&](double y) { return (*f_)(k, n, y); }, tree_.dt(), root_);
  }

  const FiltrationTree& tree_;
  const GamePayoff& payoff_;
  const Generator* f_;
  RootOptions root_;
  std::vector<double> work_;
};

bool improves(double candidate, double best, bool maximize) {
  const double margin = 1e-12 * (1.0 + std::abs(best));
  return maximize ? candidate > best + margin : candidate < best - margin;
}

struct LocalGame {
  double supinf = 0.0;
  double infsup = 0.0;
  Flags sigma;
  Flags tau;
  std::uint64_t rules = 0;
  std::uint64_t evaluations = 0;
  OracleMode mode = OracleMode::pairs;
};

OracleMode choose_mode(std::uint64_t rules, const OracleOptions& opts, bool linear) {
  if (rules > opts.max_rules) {
    std::ostringstream msg;
    msg << "stopping-rule enumeration needs " << rules << " rules, cap is " << opts.max_rules;
    throw OracleTooLarge(msg.str());
  }
  const std::uint64_t pairs = saturating_mul(rules, rules);
  OracleMode mode = opts.mode;
  if (mode == OracleMode::automatic) mode = pairs <= opts.max_pairs ? OracleMode::pairs : OracleMode::one_sided;
  if (!linear) mode = OracleMode::pairs;
  if (mode == OracleMode::pairs && pairs > opts.max_pairs) {
    std::ostringstream msg;
    msg << "pair enumeration needs " << pairs << " evaluations, cap is " << opts.max_pairs;
    throw OracleTooLarge(msg.str());
  }
  return mode;
}

LocalGame solve_local(const Subtree& s, PayoffEvaluator& eval, std::uint64_t rules,
                      const OracleOptions& opts) {
  LocalGame g;
  g.rules = rules;
  g.mode = choose_mode(rules, opts, eval.linear());
  if (g.mode == OracleMode::one_sided) {
    double best = -std::numeric_limits<double>::infinity();
    enumerate_local(s, [&](const Flags& sigma) {
      const double v = eval.best_tau(s, sigma);
      ++g.evaluations;
      if (g.sigma.empty() || improves(v, best, true)) {
        best = v;
        g.sigma = sigma;
      }
    });
    g.supinf = best;
    best = std::numeric_limits<double>::infinity();
    enumerate_local(s, [&](const Flags& tau) {
      const double v = eval.best_sigma(s, tau);
      ++g.evaluations;
      if (g.tau.empty() || improves(v, best, false)) {
        best = v;
        g.tau = tau;
      }
    });
    g.infsup = best;
    return g;
  }

  const std::vector<Flags> all = collect_local(s);
  const std::size_t r = all.size();
  std::vector<double> table(r * r);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) table[i * r + j] = eval(s, all[i], all[j]);
  }
  g.evaluations = r * r;
  std::size_t best_i = 0;
  g.supinf = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < r; ++i) {
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < r; ++j) worst = std::min(worst, table[i * r + j]);
    if (i == 0 || improves(worst, g.supinf, true)) {
      g.supinf = worst;
      best_i = i;
    }
  }
  std::size_t best_j = 0;
  g.infsup = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < r; ++j) {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < r; ++i) worst = std::max(worst, table[i * r + j]);
    if (j == 0 || improves(worst, g.infsup, false)) {
      g.infsup = worst;
      best_j = j;
    }
  }
  g.sigma = all[best_i];
  g.tau = all[best_j];
  return g;
}

Flags restrict_rule(const Subtree& s, const StoppingRule& rule) {
  Flags out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = rule.stopped_by(s.global[i]) ? 1 : 0;
  return out;
}

GameValue run_game(const FiltrationTree& tree, const GamePayoff& payoff, const Generator* f,
                   const StoppingRule& alpha, const OracleOptions& opts) {
  PayoffEvaluator eval(tree, payoff, f, opts.root);
  AdaptedProcess supinf(tree.size());
  AdaptedProcess infsup(tree.size());
  Flags sigma(tree.size(), 0);
  Flags tau(tree.size(), 0);
  GameValue out;
  for (NodeId v : alpha.stop_nodes(tree)) {
    const Subtree s(tree, v);
    const LocalGame g = solve_local(s, eval, count_below(tree, v), opts);
    supinf[v] = g.supinf;
    infsup[v] = g.infsup;
    for (std::size_t i = 0; i < s.size(); ++i) {
      sigma[s.global[i]] = g.sigma[i];
      tau[s.global[i]] = g.tau[i];
    }
    out.rules_per_player = std::max(out.rules_per_player, g.rules);
    out.evaluations += g.evaluations;
    out.mode_used = g.mode;
  }
  out.supinf = stopped_value(tree, supinf, alpha);
  out.infsup = stopped_value(tree, infsup, alpha);
  out.argmax_sigma = StoppingRule::from_flags(tree, sigma);
  out.argmin_tau = StoppingRule::from_flags(tree, tau);
  return out;
}

SaddleReport run_saddle(const FiltrationTree& tree, const GamePayoff& payoff, const Generator* f,
                        const SaddleCandidate& cand, const StoppingRule& alpha,
                        const AdaptedProcess* value, double tol, const OracleOptions& opts) {
  require_ordered(alpha, cand.sigma, "saddle sigma");
  require_ordered(alpha, cand.tau, "saddle tau");
  const bool exact = cand.epsilon == 0.0;
  if (!exact && value == nullptr) {
    throw ConfigError("epsilon-saddle verification needs the game value process");
  }
  PayoffEvaluator eval(tree, payoff, f, opts.root);
  SaddleReport rep;
  AdaptedProcess base_at(tree.size());
  auto record = [&](double violation, NodeId v, const char* side) {
    ++rep.deviations_checked;
    if (violation > rep.worst_violation) {
      rep.worst_violation = violation;
      rep.worst_node = v;
      rep.worst_side = side;
    }
  };
  for (NodeId v : alpha.stop_nodes(tree)) {
    const Subtree s(tree, v);
    const std::uint64_t rules = count_below(tree, v);
    if (rules > opts.max_rules) {
      throw OracleTooLarge("saddle verification needs " + std::to_string(rules) + " rules");
    }
    const Flags sig = restrict_rule(s, cand.sigma);
    const Flags ta = restrict_rule(s, cand.tau);
    const double base = eval(s, sig, ta);
    base_at[v] = base;
    const double eps = cand.epsilon;
    const double anchor = exact ? base : (*value)[v];
    enumerate_local(s, [&](const Flags& other) {
      // Maximizer deviates against the candidate tau.
      record(eval(s, other, ta) - eps - anchor, v, "sigma deviation");
      // Minimizer deviates against the candidate sigma.
      record(anchor - eval(s, sig, other) - eps, v, "tau deviation");
    });
  }
  rep.candidate_value = stopped_value(tree, base_at, alpha);
  rep.pass = rep.worst_violation <= tol;
  return rep;
}

GamePayoff payoff_without_running(const FiltrationTree& tree, const BarrierPair& barriers,
                                  const AdaptedProcess& xi) {
  return GamePayoff{AdaptedProcess(tree.size()), barriers.lower, barriers.upper, xi};
}

}  // namespace

GamePayoff GamePayoff::from_solution(const FiltrationTree& tree, const Generator& f,
                                     const AdaptedProcess& y, const BarrierPair& barriers,
                                     const AdaptedProcess& xi) {
  return GamePayoff{f.freeze(tree, y), barriers.lower, barriers.upper, xi};
}

AdaptedProcess payoff_J(const FiltrationTree& tree, const GamePayoff& payoff,
                        const StoppingRule& sigma, const StoppingRule& tau,
                        const StoppingRule& alpha) {
  require_ordered(alpha, sigma, "payoff_J sigma");
  require_ordered(alpha, tau, "payoff_J tau");
  AdaptedProcess v(tree.size());
  for (int k = tree.depth(); k >= 0; --k) {
    for (NodeId n : tree.layer_nodes(k)) {
      if (tree.is_leaf(n)) {
        v[n] = payoff.terminal[n];
      } else if (tau.stopped_by(n)) {
        v[n] = payoff.upper[n];
      } else if (sigma.stopped_by(n)) {
        v[n] = payoff.lower[n];
      } else {
        v[n] = payoff.running[n] * tree.dt() + expect_children(tree, v, n);
      }
    }
  }
  return stopped_value(tree, v, alpha);
}

std::uint64_t count_stopping_rules(const FiltrationTree& tree, const StoppingRule& alpha) {
  std::uint64_t total = 1;
  for (NodeId v : alpha.stop_nodes(tree)) total = saturating_mul(total, count_below(tree, v));
  return total;
}

void for_each_stopping_rule(const FiltrationTree& tree, const StoppingRule& alpha,
                            const std::function<void(const StoppingRule&)>& visit,
                            std::uint64_t cap) {
  const std::uint64_t count = count_stopping_rules(tree, alpha);
  if (count > cap) {
    throw OracleTooLarge("enumeration needs " + std::to_string(count) + " rules, cap is " +
                         std::to_string(cap));
  }
  // The whole tree as one subtree; the frontier starts at the alpha nodes.
  const Subtree s(tree, tree.root());
  Flags flags(s.size(), 0);
  std::vector<int> pending;
  const auto starts = alpha.stop_nodes(tree);
  for (auto it = starts.rbegin(); it != starts.rend(); ++it) pending.push_back(static_cast<int>(*it));
  Flags global(tree.size());
  enumerate_frontier(s, pending, flags, [&](const Flags& local) {
    for (std::size_t i = 0; i < s.size(); ++i) global[s.global[i]] = local[i];
    visit(StoppingRule::from_flags(tree, global));
  });
}

std::vector<StoppingRule> enumerate_stopping_rules(const FiltrationTree& tree,
                                                   const StoppingRule& alpha, std::uint64_t cap) {
  std::vector<StoppingRule> out;
  for_each_stopping_rule(tree, alpha, [&](const StoppingRule& r) { out.push_back(r); }, cap);
  return out;
}

GameValue game_value_bruteforce(const FiltrationTree& tree, const GamePayoff& payoff,
                                const StoppingRule& alpha, const OracleOptions& opts) {
  return run_game(tree, payoff, nullptr, alpha, opts);
}

AdaptedProcess game_value_process(const FiltrationTree& tree, const GamePayoff& payoff,
                                  const OracleOptions& opts) {
  AdaptedProcess out(tree.size());
  for (int k = 0; k <= tree.depth(); ++k) {
    const GameValue g = game_value_bruteforce(tree, payoff, StoppingRule::at_layer(tree, k), opts);
    for (NodeId n : tree.layer_nodes(k)) out[n] = g.supinf[n];
  }
  return out;
}

GameValue generalized_game_value(const FiltrationTree& tree, const Generator& f,
                                 const BarrierPair& barriers, const AdaptedProcess& xi,
                                 const StoppingRule& alpha, const OracleOptions& opts) {
  if (f.mu() > 0.0) throw ConfigError("generalized game needs a nonincreasing generator (mu <= 0)");
  barriers.validate(tree);
  const GamePayoff payoff = payoff_without_running(tree, barriers, xi);
  return run_game(tree, payoff, &f, alpha, opts);
}

SaddleCandidate saddle_from_solution(const FiltrationTree& tree, const AdaptedProcess& y,
                                     const BarrierPair& barriers, const StoppingRule& alpha,
                                     double epsilon) {
  constexpr double kTouch = 1e-10;
  SaddleCandidate c;
  c.epsilon = epsilon;
  if (epsilon == 0.0) {
    c.sigma = StoppingRule::first_hitting(tree, alpha, [&](NodeId n) {
      return std::abs(y[n] - barriers.lower[n]) <= kTouch;
    });
    c.tau = StoppingRule::first_hitting(tree, alpha, [&](NodeId n) {
      return std::abs(y[n] - barriers.upper[n]) <= kTouch;
    });
  } else {
    c.sigma = StoppingRule::first_hitting(
        tree, alpha, [&](NodeId n) { return y[n] <= barriers.lower[n] + epsilon; });
    c.tau = StoppingRule::first_hitting(
        tree, alpha, [&](NodeId n) { return y[n] >= barriers.upper[n] - epsilon; });
  }
  return c;
}

SaddleReport verify_saddle(const FiltrationTree& tree, const GamePayoff& payoff,
                           const SaddleCandidate& candidate, const StoppingRule& alpha,
                           const AdaptedProcess* value, double tol, const OracleOptions& opts) {
  return run_saddle(tree, payoff, nullptr, candidate, alpha, value, tol, opts);
}

SaddleReport verify_saddle_f(const FiltrationTree& tree, const Generator& f,
                             const BarrierPair& barriers, const AdaptedProcess& xi,
                             const SaddleCandidate& candidate, const StoppingRule& alpha,
                             const AdaptedProcess* value, double tol, const OracleOptions& opts) {
  if (f.mu() > 0.0) throw ConfigError("generalized game needs a nonincreasing generator (mu <= 0)");
  const GamePayoff payoff = payoff_without_running(tree, barriers, xi);
  return run_saddle(tree, payoff, &f, candidate, alpha, value, tol, opts);
}

}  // namespace rbsdelab
