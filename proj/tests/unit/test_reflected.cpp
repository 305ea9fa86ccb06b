#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "rbsdelab/demos.hpp"
#include "rbsdelab/dynkin.hpp"
#include "rbsdelab/errors.hpp"
#include "rbsdelab/reflected.hpp"

using namespace rbsdelab;
using testutil::proc;

namespace {

bool pinched(const BarrierPair& b, NodeId n) { return std::abs(b.lower[n] - b.upper[n]) <= 1e-12; }

// gamma and Lambda for a stopping time that fires at layer `tau` on `path`.
std::pair<int, bool> gamma_on_path(const FiltrationTree& t, const BarrierPair& b,
                                   const std::vector<NodeId>& path, int tau) {
  const int depth = t.depth();
  int gamma = depth;
  for (int k = tau; k <= depth; ++k) {
    if ((k > tau && pinched(b, path[k - 1])) || pinched(b, path[k])) {
      gamma = k;
      break;
    }
  }
  const bool lambda = gamma > tau && pinched(b, path[gamma - 1]);
  return {gamma, lambda};
}

}  // namespace

TEST_SUITE("reflected") {

TEST_CASE("deterministic chain with an active upper barrier") {
  const auto t = FiltrationTree::chain(2, 1.0);
  const auto b = BarrierPair::two_sided(proc({-2, -1, 0}), proc({2, 0.5, 0}));
  const auto s = solve_reflected(t, proc({0, 0, 0}), Generator::constant(1.0), b);
  CHECK(s.y[0] == doctest::Approx(1.5));
  CHECK(s.y[1] == doctest::Approx(0.5));
  CHECK(s.y[2] == 0.0);
  CHECK(s.rminus[2] == doctest::Approx(0.5));
  CHECK(s.rminus[1] == doctest::Approx(0.0));
  CHECK(s.rplus.max_abs() == 0.0);

  const auto payoff = GamePayoff::from_solution(t, Generator::constant(1.0), s.y, b, proc({0, 0, 0}));
  const auto g = game_value_bruteforce(t, payoff, StoppingRule::at_layer(t, 0));
  CHECK(g.supinf[0] == doctest::Approx(1.5));
  CHECK(g.infsup[0] == doctest::Approx(1.5));
}

TEST_CASE("depth-2 binary example") {
  const testutil::SmallGame g;
  const auto s = solve_reflected(g.tree, g.xi, Generator::zero(), g.barriers);
  CHECK(s.y[0] == doctest::Approx(0.0));
  CHECK(s.y[1] == doctest::Approx(0.5));
  CHECK(s.y[2] == doctest::Approx(-0.5));
  CHECK(verify_solution(g.tree, s.y, Generator::zero(), g.xi, g.barriers).pass());
  const auto payoff = GamePayoff::from_solution(g.tree, Generator::zero(), s.y, g.barriers, g.xi);
  const auto v = game_value_process(g.tree, payoff);
  for (NodeId n = 0; n < g.tree.size(); ++n) CHECK(v[n] == doctest::Approx(s.y[n]).epsilon(1e-12));
}

TEST_CASE("pinched barriers force Y = L") {
  const auto t = FiltrationTree::binomial(3, 0.25);
  const AdaptedProcess w(node_positions(t));
  const auto b = BarrierPair::two_sided(w, w);
  const auto f = Generator::linear(-0.5, 0.3);
  const auto s = solve_reflected(t, w, f, b);
  CHECK(testutil::max_diff(s.y, w) == 0.0);
  CHECK(verify_solution(t, s.y, f, w, b).pass());
  // Reflection absorbs the drift: dR = Y_k - E[Y_{k+1}] - f(Y_k) dt, split by sign.
  for (NodeId n = 0; n < t.size(); ++n) {
    if (t.is_leaf(n)) continue;
    const double need = w[n] - expect_children(t, w, n) - f(t.layer(n), n, w[n]) * t.dt();
    for (NodeId c : t.children(n)) CHECK(s.rplus[c] - s.rminus[c] == doctest::Approx(need).epsilon(1e-12));
  }
  const auto l = build_l_system(t, b);
  for (NodeId n = 0; n < t.size(); ++n)
    for (const auto& path : l.at(n).paths) CHECK(path.last_layer(t.layer(n)) == t.layer(n));
}

TEST_CASE("solver output verifies, satisfies complementarity, and matches the fixed-point mode") {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 100; ++rep) {
    const auto t = random_tree(rng, {4, 1, 3, 0.25});
    const auto p = random_problem(rng, t);
    const auto s = solve_reflected(t, p.xi, p.f, p.barriers);
    CHECK(verify_solution(t, s.y, p.f, p.xi, p.barriers).pass());
    CHECK(s.diagnostics.max_minimality_slack <= 1e-12);
    CHECK_FALSE(s.diagnostics.sentinel_touched);
    for (NodeId n = 1; n < t.size(); ++n) {
      const NodeId q = t.parent(n);
      CHECK(std::min(s.rplus[n], s.y[q] - p.barriers.lower[q]) <= 1e-12);
      CHECK(std::min(s.rminus[n], p.barriers.upper[q] - s.y[q]) <= 1e-12);
      CHECK(s.rplus[n] >= 0.0);
      CHECK(s.rminus[n] >= 0.0);
    }
    ReflectedOptions fp;
    fp.method = ReflectionMethod::projected_fixed_point;
    CHECK(testutil::max_diff(solve_reflected(t, p.xi, p.f, p.barriers, fp).y, s.y) <= 1e-9);
  }
}

TEST_CASE("perturbed solutions fail verification") {
  std::mt19937_64 rng(32);
  int checked = 0;
  for (int rep = 0; rep < 60; ++rep) {
    const auto t = random_tree(rng, {3, 2, 3, 0.25});
    RandomProblemOptions o;
    o.pinch_probability = 0.0;
    const auto p = random_problem(rng, t, o);
    const auto s = solve_reflected(t, p.xi, p.f, p.barriers);
    // Move the root value inside the barriers when there is room.
    auto y = s.y;
    const double room = std::min(p.barriers.upper[0] - y[0], y[0] - p.barriers.lower[0]);
    if (room < 1e-3) continue;
    y[0] += 0.5 * room;
    CHECK_FALSE(verify_solution(t, y, p.f, p.xi, p.barriers).pass());
    ++checked;
  }
  CHECK(checked > 10);
}

TEST_CASE("pinched cone") {
  const auto d = pinched_cone_demo();
  const auto zero = AdaptedProcess(d.tree.size(), 0.0);
  CHECK(verify_solution(d.tree, zero, Generator::zero(), d.xi, d.barriers, 1e-12).pass());
  CHECK(testutil::max_diff(solve_reflected(d.tree, d.xi, Generator::zero(), d.barriers).y, zero) == 0.0);

  const auto l = build_l_system(d.tree, d.barriers);
  const auto& entry = l.at(1);
  REQUIRE(entry.paths.size() == 1);
  CHECK(entry.paths[0].gamma == 10);
  CHECK_FALSE(entry.paths[0].lambda);

  for (double r : {0.2, 0.5, 0.8}) {
    const auto rep = verify_solution(d.tree, d.plateau_candidate(r), Generator::zero(), d.xi, d.barriers, 1e-12);
    CHECK(rep.class_d.pass);
    CHECK(rep.barriers.pass);
    CHECK_FALSE(rep.minimality.pass);
    REQUIRE(rep.minimality.time.has_value());
    CHECK(*rep.minimality.time == doctest::Approx(1.0));
    // Reported slack is dGamma * (Y_prev - L_prev) with L_prev = -0.9.
    CHECK(rep.minimality.slack == doctest::Approx(r * (r + 0.9)).epsilon(1e-12));
  }
}

TEST_CASE("interval system") {
  const auto t = FiltrationTree::binomial(3, 0.25);
  const auto strict = BarrierPair::two_sided(AdaptedProcess::constant(t, -1.0), AdaptedProcess::constant(t, 1.0));
  const auto l = build_l_system(t, strict);
  for (NodeId n = 0; n < t.size(); ++n) {
    for (const auto& p : l.at(n).paths) {
      CHECK(p.gamma == t.depth());
      CHECK_FALSE(p.lambda);
    }
  }
}

TEST_CASE("node-anchored intervals match every stopping rule") {
  std::mt19937_64 rng(33);
  for (int rep = 0; rep < 25; ++rep) {
    const auto t = random_tree(rng, {3, 1, 3, 0.25});
    RandomProblemOptions o;
    o.pinch_probability = 0.35;
    const auto p = random_problem(rng, t, o);
    const auto l = build_l_system(t, p.barriers);
    for (const auto& tau : enumerate_stopping_rules(t, StoppingRule::at_layer(t, 0), 100'000)) {
      for (NodeId leaf : t.leaves()) {
        const auto path = t.path_to(leaf);
        const int k = tau.time_on_path(t, leaf);
        const auto [gamma, lambda] = gamma_on_path(t, p.barriers, path, k);
        bool found = false;
        for (const auto& lp : l.at(path[k]).paths) {
          if (lp.leaf != leaf) continue;
          found = true;
          CHECK(lp.gamma == gamma);
          CHECK(lp.lambda == lambda);
        }
        CHECK(found);
      }
    }
  }
}

TEST_CASE("projection condition") {
  const auto t = FiltrationTree::binomial(3, 0.25);
  const auto flat = BarrierPair::two_sided(AdaptedProcess::constant(t, -1.0), AdaptedProcess::constant(t, 1.0));
  const auto c = check_projection_condition(t, flat);
  CHECK(c.lower_ok);
  CHECK(c.upper_ok);

  // Submartingale lower (|walk| - 2), supermartingale upper (2 - |walk|).
  const auto pos = node_positions(t);
  AdaptedProcess lo(t.size()), hi(t.size());
  for (NodeId n = 0; n < t.size(); ++n) {
    lo[n] = std::abs(pos[n]) - 2.0;
    hi[n] = 2.0 - std::abs(pos[n]);
  }
  const auto ok = check_projection_condition(t, BarrierPair::two_sided(lo, hi));
  CHECK(ok.lower_ok);
  CHECK(ok.upper_ok);

  const auto chain = FiltrationTree::chain(2, 1.0);
  const auto drop = check_projection_condition(chain, BarrierPair::two_sided(proc({0, -1, -1}), proc({1, 1, 1})));
  CHECK_FALSE(drop.lower_ok);
  CHECK(drop.upper_ok);
  REQUIRE(drop.lower_node.has_value());
  CHECK(*drop.lower_node == 1);

  std::mt19937_64 rng(34);
  for (int rep = 0; rep < 20; ++rep) {
    const auto rt = random_tree(rng, {4, 1, 3, 0.25});
    const auto b = random_projection_barriers(rng, rt);
    const auto r = check_projection_condition(rt, b);
    CHECK(r.lower_ok);
    CHECK(r.upper_ok);
  }
}

TEST_CASE("penalization") {
  std::mt19937_64 rng(35);
  for (int rep = 0; rep < 30; ++rep) {
    const auto t = random_tree(rng, {3, 1, 3, 0.25});
    RandomProblemOptions o;
    o.one_sided_probability = 0.0;
    const auto p = random_problem(rng, t, o);
    const auto eta = default_eta(t);
    RootOptions root;
    root.tol = 1e-14;
    AdaptedProcess prev_lower, prev_upper;
    for (double n : {1.0, 10.0, 100.0, 1000.0}) {
      const auto lower = solve_penalized(t, p.xi, p.f, p.barriers, n, eta, PenaltyMode::lower, root).bsde.y;
      const auto upper = solve_penalized(t, p.xi, p.f, p.barriers, n, eta, PenaltyMode::upper, root).bsde.y;
      const auto both = solve_penalized(t, p.xi, p.f, p.barriers, n, eta, PenaltyMode::both, root).bsde.y;
      for (NodeId v = 0; v < t.size(); ++v) {
        CHECK(upper[v] <= both[v] + 1e-12);
        CHECK(both[v] <= lower[v] + 1e-12);
        if (prev_lower.size()) {
          CHECK(lower[v] >= prev_lower[v] - 1e-12);
          CHECK(upper[v] <= prev_upper[v] + 1e-12);
        }
      }
      prev_lower = lower;
      prev_upper = upper;
    }
  }

  const auto t = FiltrationTree::binomial(3, 0.25);
  const auto xi = AdaptedProcess(node_positions(t));
  const auto f = Generator::linear(-0.2, 0.1);
  const auto plain = solve_bsde(t, xi, f).y;
  const auto wide = BarrierPair::unbounded(t);
  for (double n : {1.0, 100.0, 10000.0}) {
    const auto y = solve_penalized(t, xi, f, wide, n, default_eta(t), PenaltyMode::both).bsde.y;
    CHECK(testutil::max_diff(y, plain) <= 1e-12);
  }
  const auto eta = default_eta(t);
  CHECK(eta[0] == doctest::Approx(2.0 / 3.141592653589793));
}

TEST_CASE("stability estimate") {
  std::mt19937_64 rng(36);
  for (int rep = 0; rep < 30; ++rep) {
    const auto t = random_tree(rng, {3, 1, 3, 0.25});
    RandomProblemOptions o;
    o.pinch_probability = 0.0;
    o.one_sided_probability = 0.0;
    const auto p = random_problem(rng, t, o);
    const auto same = stability_gap(t, p, p, 1e-3);
    CHECK(same.lhs == 0.0);
    CHECK(same.lhs <= same.rhs);

    auto shifted = p;
    for (NodeId n : t.leaves()) shifted.xi[n] = std::min(p.xi[n] + 0.05, p.barriers.upper[n]);
    const auto a = stability_gap(t, shifted, p, 1e-3);
    CHECK(a.lhs <= a.rhs + 1e-12);
    CHECK(a.rhs >= 0.0);
    CHECK(a.norm_lhs <= a.norm_rhs + 1e-12);

    // Raise L by a fraction of the gap (terminal included, then clip xi).
    auto raised = p;
    for (NodeId n = 0; n < t.size(); ++n) {
      raised.barriers.lower[n] += 0.25 * (p.barriers.upper[n] - p.barriers.lower[n]);
    }
    for (NodeId n : t.leaves()) raised.xi[n] = std::max(raised.xi[n], raised.barriers.lower[n]);
    const auto b = stability_gap(t, raised, p, 1e-3);
    CHECK(b.lhs <= b.rhs + 1e-12);
    CHECK(b.norm_lhs <= b.norm_rhs + 1e-12);
  }
}

TEST_CASE("input errors") {
  const auto t = FiltrationTree::chain(2, 1.0);
  const auto crossed = BarrierPair::two_sided(proc({0, 1, 0}), proc({1, 0, 1}));
  CHECK_THROWS_AS(crossed.validate(t), BarrierCrossing);
  CHECK_THROWS_AS(solve_reflected(t, proc({0, 0, 0}), Generator::zero(), crossed), BarrierCrossing);
  const auto b = BarrierPair::two_sided(proc({0, 0, 0}), proc({1, 1, 1}));
  CHECK_THROWS_AS(solve_reflected(t, proc({0, 0, 2}), Generator::zero(), b), TerminalViolation);
  CHECK_THROWS_AS(solve_reflected(t, proc({0, 0, 0.5}), Generator::linear(2.0, 0.0), b), StepTooLarge);
  CHECK(is_sentinel(kSentinel));
  CHECK_FALSE(is_sentinel(10.0));
}

}  // TEST_SUITE
