#include "rbsdelab/reflected.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "rbsdelab/errors.hpp"

namespace rbsdelab {

bool is_sentinel(double v) { return std::abs(v) >= 0.1 * kSentinel; }

BarrierPair BarrierPair::two_sided(AdaptedProcess lower, AdaptedProcess upper) {
  return BarrierPair{std::move(lower), std::move(upper)};
}

BarrierPair BarrierPair::lower_only(const FiltrationTree& tree, AdaptedProcess lower, double scale) {
  return BarrierPair{std::move(lower), AdaptedProcess::constant(tree, scale * kSentinel)};
}

BarrierPair BarrierPair::upper_only(const FiltrationTree& tree, AdaptedProcess upper, double scale) {
  return BarrierPair{AdaptedProcess::constant(tree, -scale * kSentinel), std::move(upper)};
}

BarrierPair BarrierPair::unbounded(const FiltrationTree& tree, double scale) {
  return BarrierPair{AdaptedProcess::constant(tree, -scale * kSentinel),
                     AdaptedProcess::constant(tree, scale * kSentinel)};
}

void BarrierPair::validate(const FiltrationTree& tree) const {
  if (lower.size() != tree.size() || upper.size() != tree.size()) {
    throw ConfigError("barrier processes do not match the tree");
  }
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (lower[n] > upper[n]) {
      std::ostringstream msg;
      msg << "lower barrier above upper barrier at node " << n << " (L=" << lower[n]
          << ", U=" << upper[n] << ")";
      throw BarrierCrossing(msg.str());
    }
  }
}

void BarrierPair::validate_terminal(const FiltrationTree& tree, const AdaptedProcess& xi) const {
  for (NodeId leaf : tree.leaves()) {
    if (xi[leaf] < lower[leaf] || xi[leaf] > upper[leaf]) {
      std::ostringstream msg;
      msg << "terminal value " << xi[leaf] << " outside [" << lower[leaf] << ", " << upper[leaf]
          << "] at leaf " << leaf;
      throw TerminalViolation(msg.str());
    }
  }
}

ReflectedSolution solve_reflected(const FiltrationTree& tree, const AdaptedProcess& xi,
                                  const Generator& f, const BarrierPair& barriers,
                                  const ReflectedOptions& opts) {
  barriers.validate(tree);
  barriers.validate_terminal(tree, xi);
  if (f.mu() * tree.dt() >= 1.0) {
    throw StepTooLarge("mu*dt >= 1: implicit step not uniquely solvable");
  }
  const double dt = tree.dt();
  ReflectedSolution sol{AdaptedProcess(tree.size()), AdaptedProcess(tree.size()),
                        AdaptedProcess(tree.size()), AdaptedProcess(tree.size()), {}};
  auto& diag = sol.diagnostics;
  for (NodeId leaf : tree.leaves()) sol.y[leaf] = xi[leaf];

  for (int k = tree.depth() - 1; k >= 0; --k) {
    for (NodeId n : tree.layer_nodes(k)) {
      const double lo = barriers.lower[n];
      const double hi = barriers.upper[n];
      const double e = expect_children(tree, sol.y, n);
      auto fy = [&](double y) { return f(k, n, y); };
      double y = 0.0;
      if (opts.method == ReflectionMethod::clamp) {
        if (opts.root.check_monotone) {
          const double half = std::abs(f(k, n, e)) * dt + 1.0;
          f.check_monotone(k, n, e - half, e + half);
        }
        double res = 0.0;
        const double unreflected = implicit_step(e, fy, dt, opts.root, &res);
        diag.max_residual = std::max(diag.max_residual, res);
        y = std::clamp(unreflected, lo, hi);
      } else {
        y = std::clamp(e, lo, hi);
        int it = 0;
        for (; it < opts.max_fixed_point_iterations; ++it) {
          const double next = std::clamp(e + fy(y) * dt, lo, hi);
          const double change = std::abs(next - y);
          y = next;
          if (change <= opts.root.tol) break;
        }
        if (it == opts.max_fixed_point_iterations) {
          throw SolverError("projected fixed-point iteration did not converge at node " +
                            std::to_string(n));
        }
        // Remaining fixed-point defect on the unclamped branch.
        if (y > lo && y < hi) {
          diag.max_residual = std::max(diag.max_residual, std::abs(e + fy(y) * dt - y));
        }
      }
      if ((y == lo || y == hi) && is_sentinel(y)) diag.sentinel_touched = true;
      sol.y[n] = y;

      const double push = y - e - fy(y) * dt;
      const double up = std::max(push, 0.0);
      const double down = std::max(-push, 0.0);
      diag.max_minimality_slack = std::max(
          {diag.max_minimality_slack, std::min(up, y - lo), std::min(down, hi - y)});
      for (NodeId c : tree.children(n)) {
        sol.rplus[c] = up;
        sol.rminus[c] = down;
        sol.martingale_increments[c] = sol.y[c] - e;
      }
    }
  }
  return sol;
}

AdaptedProcess default_eta(const FiltrationTree& tree) {
  return AdaptedProcess::from_function(tree, [&](NodeId n) {
    const double t = tree.time(n);
    return (2.0 / std::numbers::pi) / (1.0 + t * t);
  });
}

PenalizedSolution solve_penalized(const FiltrationTree& tree, const AdaptedProcess& xi,
                                  const Generator& f, const BarrierPair& barriers, double n,
                                  const AdaptedProcess& eta, PenaltyMode mode,
                                  const RootOptions& opts) {
  barriers.validate(tree);
  for (NodeId i = 0; i < tree.size(); ++i) {
    if (!(eta[i] > 0.0)) throw ConfigError("penalty weight eta must be strictly positive");
  }
  const bool use_lower = mode != PenaltyMode::upper;
  const bool use_upper = mode != PenaltyMode::lower;
  const AdaptedProcess& lo = barriers.lower;
  const AdaptedProcess& hi = barriers.upper;
  Generator fn = f.plus(
      [&, n, use_lower, use_upper](int, NodeId node, double y) {
        double v = 0.0;
        if (use_lower) v += n * eta[node] * std::max(lo[node] - y, 0.0);
        if (use_upper) v -= n * eta[node] * std::max(y - hi[node], 0.0);
        return v;
      },
      0.0, "penalty");
  PenalizedSolution out{solve_bsde(tree, xi, fn, opts), AdaptedProcess(tree.size()),
                        AdaptedProcess(tree.size())};
  const double dt = tree.dt();
  for (NodeId i = 0; i < tree.size(); ++i) {
    if (tree.is_leaf(i)) continue;
    const double y = out.bsde.y[i];
    const double up = use_lower ? n * eta[i] * std::max(lo[i] - y, 0.0) * dt : 0.0;
    const double down = use_upper ? n * eta[i] * std::max(y - hi[i], 0.0) * dt : 0.0;
    for (NodeId c : tree.children(i)) {
      out.push_up[c] = up;
      out.push_down[c] = down;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

LSystem build_l_system(const FiltrationTree& tree, const BarrierPair& barriers, double eq_tol) {
  const int depth = tree.depth();
  auto pinched = [&](NodeId n) { return std::abs(barriers.lower[n] - barriers.upper[n]) <= eq_tol; };
  LSystem sys;
  sys.entries.resize(tree.size());
  for (NodeId anchor = 0; anchor < tree.size(); ++anchor) {
    LSystemEntry& entry = sys.entries[anchor];
    entry.anchor = anchor;
    const int j = tree.layer(anchor);
    auto leaves = tree.subtree_leaves(anchor);
    std::sort(leaves.begin(), leaves.end());
    entry.paths.reserve(leaves.size());
    for (NodeId leaf : leaves) {
      const auto path = tree.path_to(leaf);
      // inf{j < k <= K : L_{k-1} = U_{k-1}}
      int left_hit = depth + 1;
      for (int k = j + 1; k <= depth; ++k) {
        if (pinched(path[k - 1])) {
          left_hit = k;
          break;
        }
      }
      // inf{j <= k <= K : L_k = U_k}
      int hit = depth + 1;
      for (int k = j; k <= depth; ++k) {
        if (pinched(path[k])) {
          hit = k;
          break;
        }
      }
      LSystemPath p;
      p.leaf = leaf;
      p.gamma = std::min({left_hit, hit, depth});
      p.lambda = p.gamma > j && pinched(path[p.gamma - 1]);
      entry.paths.push_back(p);
    }
  }
  return sys;
}

namespace {

const LSystemPath& path_for_leaf(const LSystemEntry& entry, NodeId leaf) {
  auto it = std::lower_bound(entry.paths.begin(), entry.paths.end(), leaf,
                             [](const LSystemPath& p, NodeId l) { return p.leaf < l; });
  return *it;
}

NodeId first_leaf_below(const FiltrationTree& tree, NodeId n) {
  while (!tree.is_leaf(n)) n = tree.children(n).front();
  return n;
}

}  // namespace

VerdictReport verify_solution(const FiltrationTree& tree, const AdaptedProcess& y,
                              const Generator& f, const AdaptedProcess& xi,
                              const BarrierPair& barriers, double tol) {
  VerdictReport rep;
  rep.class_d = {"a", true, std::nullopt, std::nullopt, 0.0,
                 "class (D) holds for every process on a finite tree"};
  rep.dynamics = {"b", true, std::nullopt, std::nullopt, 0.0, ""};
  rep.barriers = {"c", true, std::nullopt, std::nullopt, 0.0, ""};
  rep.minimality = {"d", true, std::nullopt, std::nullopt, 0.0, ""};
  const double dt = tree.dt();

  // (b): finite data, integrable generator, terminal condition.
  for (NodeId n = 0; n < tree.size(); ++n) {
    const double fv = f(tree.layer(n), n, y[n]);
    if (!std::isfinite(y[n]) || !std::isfinite(fv)) {
      rep.dynamics.pass = false;
      rep.dynamics.node = n;
      rep.dynamics.time = tree.time(n);
      rep.dynamics.slack = std::numeric_limits<double>::infinity();
      rep.dynamics.detail = "non-finite value or generator";
      break;
    }
  }
  if (rep.dynamics.pass) {
    for (NodeId leaf : tree.leaves()) {
      const double gap = std::abs(y[leaf] - xi[leaf]);
      if (gap > rep.dynamics.slack) rep.dynamics.slack = gap;
      if (gap > tol && rep.dynamics.pass) {
        rep.dynamics.pass = false;
        rep.dynamics.node = leaf;
        rep.dynamics.time = tree.time(leaf);
        rep.dynamics.detail = "terminal value differs from xi";
      }
    }
    if (rep.dynamics.pass) rep.dynamics.slack = 0.0;
  }

  // (c): L <= Y <= U, first violation in layer order.
  for (int k = 0; k <= tree.depth() && rep.barriers.pass; ++k) {
    for (NodeId n : tree.layer_nodes(k)) {
      const double v = std::max(barriers.lower[n] - y[n], y[n] - barriers.upper[n]);
      if (v > tol) {
        rep.barriers.pass = false;
        rep.barriers.node = n;
        rep.barriers.time = tree.time(n);
        rep.barriers.slack = v;
        rep.barriers.detail = v == barriers.lower[n] - y[n] ? "below lower barrier"
                                                            : "above upper barrier";
        break;
      }
    }
  }

  // (d): Gamma increments dG_{k+1} = Y_k - Y_{k+1} - f(t_k, Y_k) dt; on each
  // anchor interval the predictable part of the step out of node n is
  // sum_c p_c dG_c over the children still inside the interval.
  AdaptedProcess dgamma(tree.size());
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (tree.is_leaf(n)) continue;
    const double drift = f(tree.layer(n), n, y[n]) * dt;
    for (NodeId c : tree.children(n)) dgamma[c] = y[n] - y[c] - drift;
  }
  const LSystem sys = build_l_system(tree, barriers);
  int best_layer = tree.depth() + 1;
  for (NodeId anchor = 0; anchor < tree.size(); ++anchor) {
    const LSystemEntry& entry = sys.at(anchor);
    const int j = tree.layer(anchor);
    auto inside = [&](NodeId node) {
      const LSystemPath& p = path_for_leaf(entry, first_leaf_below(tree, node));
      return tree.layer(node) <= p.last_layer(j);
    };
    for (NodeId n : tree.subtree_nodes(anchor)) {
      if (tree.is_leaf(n) || !inside(n)) continue;
      double pv = 0.0;
      NodeId closing = kNoParent;
      for (NodeId c : tree.children(n)) {
        if (!inside(c)) continue;
        pv += tree.node(c).prob * dgamma[c];
        if (closing == kNoParent) closing = c;
      }
      if (closing == kNoParent) continue;
      const double up = std::max(pv, 0.0);
      const double down = std::max(-pv, 0.0);
      const double gap_lo = y[n] - barriers.lower[n];
      const double gap_hi = barriers.upper[n] - y[n];
      const bool bad_up = std::min(up, gap_lo) > tol;
      const bool bad_down = std::min(down, gap_hi) > tol;
      if (!(bad_up || bad_down)) continue;
      const int step_layer = tree.layer(closing);
      if (step_layer < best_layer) {
        best_layer = step_layer;
        rep.minimality.pass = false;
        rep.minimality.node = closing;
        rep.minimality.time = tree.time(closing);
        rep.minimality.slack = bad_up ? up * gap_lo : down * gap_hi;
        std::ostringstream d;
        d << (bad_up ? "upward push " : "downward push ") << (bad_up ? up : down)
          << " while Y is " << (bad_up ? gap_lo : gap_hi) << " away from the "
          << (bad_up ? "lower" : "upper") << " barrier (anchor node " << anchor << ")";
        rep.minimality.detail = d.str();
      }
    }
  }
  return rep;
}

ProjectionCheck check_projection_condition(const FiltrationTree& tree, const BarrierPair& barriers,
                                           double tol) {
  ProjectionCheck out;
  for (int k = 0; k < tree.depth(); ++k) {
    for (NodeId n : tree.layer_nodes(k)) {
      const NodeId first = tree.children(n).front();
      if (out.lower_ok && expect_children(tree, barriers.lower, n) < barriers.lower[n] - tol) {
        out.lower_ok = false;
        out.lower_node = first;
      }
      if (out.upper_ok && expect_children(tree, barriers.upper, n) > barriers.upper[n] + tol) {
        out.upper_ok = false;
        out.upper_node = first;
      }
    }
  }
  return out;
}

StabilityGap stability_gap(const FiltrationTree& tree, const ReflectedProblem& first,
                           const ReflectedProblem& second, double epsilon,
                           const ReflectedOptions& opts) {
  const auto s1 = solve_reflected(tree, first.xi, first.f, first.barriers, opts);
  const auto s2 = solve_reflected(tree, second.xi, second.f, second.barriers, opts);
  const double dt = tree.dt();
  const double mu_plus = std::max(first.f.mu(), 0.0);
  const double growth = 1.0 / (1.0 - mu_plus * dt);
  auto factor = [&](int k) { return std::pow(growth, k); };
  auto pos = [](double v) { return std::max(v, 0.0); };
  auto barrier_diff = [](double a, double b) {
    return (is_sentinel(a) && is_sentinel(b) && a == b) ? 0.0 : a - b;
  };

  const StoppingRule zero = StoppingRule::at_layer(tree, 0);
  const auto beta1 = StoppingRule::first_hitting(tree, zero, [&](NodeId n) {
    return s1.y[n] <= first.barriers.lower[n] + epsilon;
  });
  const auto beta2 = StoppingRule::first_hitting(tree, zero, [&](NodeId n) {
    return s2.y[n] >= second.barriers.upper[n] - epsilon;
  });
  const StoppingRule hat = min(beta1, beta2);
  const int depth = tree.depth();

  StabilityGap gap;
  gap.lhs = pos(s1.y[tree.root()] - s2.y[tree.root()]);

  double rhs = 0.0;
  for (NodeId leaf : tree.leaves()) {
    rhs += tree.path_probability(leaf) * factor(depth) * pos(first.xi[leaf] - second.xi[leaf]);
  }
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (tree.is_leaf(n) || hat.stopped_by(n)) continue;
    const int k = tree.layer(n);
    const double df = first.f(k, n, s2.y[n]) - second.f(k, n, s2.y[n]);
    rhs += tree.path_probability(n) * factor(k + 1) * pos(df) * dt;
  }
  for (NodeId n : hat.stop_nodes(tree)) {
    const int k = tree.layer(n);
    double term = epsilon;
    if (k < depth) {
      term += pos(barrier_diff(first.barriers.lower[n], second.barriers.lower[n])) +
              pos(barrier_diff(first.barriers.upper[n], second.barriers.upper[n]));
    }
    rhs += tree.path_probability(n) * factor(k) * term;
  }
  gap.rhs = rhs;

  const StoppingRule terminal = StoppingRule::terminal(tree);
  gap.norm_lhs = class_d_norm(tree, s1.y - s2.y, zero, terminal);
  double norm_rhs = 0.0;
  for (NodeId leaf : tree.leaves()) {
    norm_rhs += tree.path_probability(leaf) * std::abs(first.xi[leaf] - second.xi[leaf]);
  }
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (tree.is_leaf(n)) continue;
    const int k = tree.layer(n);
    norm_rhs += tree.path_probability(n) *
                std::abs(first.f(k, n, s2.y[n]) - second.f(k, n, s2.y[n])) * dt;
  }
  AdaptedProcess dl(tree.size());
  AdaptedProcess du(tree.size());
  for (NodeId n = 0; n < tree.size(); ++n) {
    dl[n] = barrier_diff(first.barriers.lower[n], second.barriers.lower[n]);
    du[n] = barrier_diff(first.barriers.upper[n], second.barriers.upper[n]);
  }
  norm_rhs += class_d_norm(tree, dl, zero, terminal) + class_d_norm(tree, du, zero, terminal);
  gap.norm_rhs = factor(depth) * norm_rhs;
  return gap;
}

}  // namespace rbsdelab
