#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "rbsdelab/dynkin.hpp"
#include "rbsdelab/errors.hpp"

using namespace rbsdelab;
using testutil::proc;

TEST_SUITE("dynkin") {

TEST_CASE("payoff conventions on a one-step chain") {
  const auto t = FiltrationTree::chain(1, 1.0);
  GamePayoff g{proc({0.5, 0}), proc({-1, -2}), proc({3, 4}), proc({0, 7})};
  const auto now = StoppingRule::at_layer(t, 0);
  const auto end = StoppingRule::terminal(t);
  CHECK(payoff_J(t, g, now, now, now)[0] == 3.0);          // simultaneous stop pays the upper value
  CHECK(payoff_J(t, g, now, end, now)[0] == -1.0);         // maximizer stops first
  CHECK(payoff_J(t, g, end, now, now)[0] == 3.0);          // minimizer stops first
  CHECK(payoff_J(t, g, end, end, now)[0] == doctest::Approx(0.5 + 7.0));
}

TEST_CASE("rule counts") {
  for (auto [steps, expected] : {std::pair{0, 1ull}, {1, 2ull}, {2, 5ull}, {3, 26ull}, {4, 677ull}}) {
    const auto t = FiltrationTree::binomial(steps, 1.0);
    CHECK(count_stopping_rules(t, StoppingRule::at_layer(t, 0)) == expected);
  }
  const auto big = FiltrationTree::binomial(9, 1.0);
  CHECK(count_stopping_rules(big, StoppingRule::at_layer(big, 0)) == UINT64_MAX);
}

TEST_CASE("depth-2 game") {
  const testutil::SmallGame g;
  const auto s = solve_reflected(g.tree, g.xi, Generator::zero(), g.barriers);
  const auto payoff = GamePayoff::from_solution(g.tree, Generator::zero(), s.y, g.barriers, g.xi);
  const auto alpha = StoppingRule::at_layer(g.tree, 0);

  OracleOptions pairs;
  pairs.mode = OracleMode::pairs;
  const auto v = game_value_bruteforce(g.tree, payoff, alpha, pairs);
  CHECK(v.supinf[0] == doctest::Approx(0.0));
  CHECK(v.infsup[0] == doctest::Approx(0.0));
  CHECK(v.rules_per_player == 5);
  CHECK(v.evaluations == 25);

  const auto c = saddle_from_solution(g.tree, s.y, g.barriers, alpha, 0.0);
  CHECK(c.sigma.stop_nodes(g.tree) == std::vector<NodeId>{2, 3, 4});
  CHECK(c.tau.stop_nodes(g.tree) == std::vector<NodeId>{1, 5, 6});
  CHECK(payoff_J(g.tree, payoff, c.sigma, c.tau, alpha)[0] == doctest::Approx(0.0));
  const auto rep = verify_saddle(g.tree, payoff, c, alpha);
  CHECK(rep.pass);
  CHECK(rep.deviations_checked > 0);

  // With f = -y the solution stays the same pathwise and the game under
  // the nonlinear expectation still returns Y_0.
  const auto f = Generator::linear(-1.0, 0.0);
  const auto sf = solve_reflected(g.tree, g.xi, f, g.barriers);
  const auto gf = generalized_game_value(g.tree, f, g.barriers, g.xi, alpha);
  CHECK(gf.supinf[0] == doctest::Approx(sf.y[0]).epsilon(1e-8));
  CHECK(gf.infsup[0] == doctest::Approx(sf.y[0]).epsilon(1e-8));
}

TEST_CASE("oracle modes agree") {
  std::mt19937_64 rng(41);
  for (int rep = 0; rep < 20; ++rep) {
    const auto t = random_tree(rng, {3, 1, 3, 0.25});
    const auto p = random_problem(rng, t);
    const auto s = solve_reflected(t, p.xi, p.f, p.barriers);
    const auto payoff = GamePayoff::from_solution(t, p.f, s.y, p.barriers, p.xi);
    const auto alpha = StoppingRule::at_layer(t, 0);
    OracleOptions a, b;
    a.mode = OracleMode::pairs;
    a.max_pairs = UINT64_MAX;
    b.mode = OracleMode::one_sided;
    const auto va = game_value_bruteforce(t, payoff, alpha, a);
    const auto vb = game_value_bruteforce(t, payoff, alpha, b);
    CHECK(va.supinf[0] == doctest::Approx(vb.supinf[0]).epsilon(1e-12));
    CHECK(va.infsup[0] == doctest::Approx(vb.infsup[0]).epsilon(1e-12));
    CHECK(va.supinf[0] == doctest::Approx(s.y[0]).epsilon(1e-9));
  }
}

TEST_CASE("oracle cap") {
  const auto t = FiltrationTree::binomial(4, 0.25);
  OracleOptions tiny;
  tiny.max_rules = 100;
  const auto payoff = GamePayoff::from_solution(t, Generator::zero(), AdaptedProcess(t.size(), 0.0),
                                                BarrierPair::unbounded(t), AdaptedProcess(t.size(), 0.0));
  CHECK_THROWS_AS(game_value_bruteforce(t, payoff, StoppingRule::at_layer(t, 0), tiny), OracleTooLarge);
}

TEST_CASE("saddle candidates") {
  const auto t = FiltrationTree::binomial(3, 0.25);
  const auto alpha = StoppingRule::at_layer(t, 0);
  const AdaptedProcess pos(node_positions(t));

  SUBCASE("Y on the lower barrier stops the maximizer at once") {
    auto hi = pos;
    for (NodeId n = 0; n < t.size(); ++n) hi[n] += 1.0;
    const auto b = BarrierPair::two_sided(pos, hi);
    const auto c = saddle_from_solution(t, pos, b, alpha, 0.0);
    CHECK(c.sigma == alpha);
  }
  SUBCASE("large epsilon stops both players at once") {
    const auto b = BarrierPair::two_sided(AdaptedProcess::constant(t, -1.0), AdaptedProcess::constant(t, 1.0));
    const auto c = saddle_from_solution(t, AdaptedProcess::constant(t, 0.0), b, alpha, 5.0);
    CHECK(c.sigma == alpha);
    CHECK(c.tau == alpha);
  }
  SUBCASE("pinched game: any pair is a saddle") {
    const auto b = BarrierPair::two_sided(pos, pos);
    const auto payoff = GamePayoff::from_solution(t, Generator::zero(), pos, b, pos);
    const std::vector<NodeId> s_nodes = {1};
    const std::vector<NodeId> t_nodes = {2, 3};
    SaddleCandidate c{StoppingRule::from_stop_nodes(t, s_nodes), StoppingRule::from_stop_nodes(t, t_nodes), 0.0};
    CHECK(verify_saddle(t, payoff, c, alpha).pass);
  }
}

TEST_CASE("saddles under the projection condition and the martingale property before them") {
  std::mt19937_64 rng(42);
  for (int rep = 0; rep < 20; ++rep) {
    const auto t = random_tree(rng, {3, 1, 3, 0.25});
    const auto b = random_projection_barriers(rng, t);
    const auto xi = random_terminal(rng, t, b);
    const auto f = Generator::monotone_poly(-0.3, 0.1, {0.2});
    const auto s = solve_reflected(t, xi, f, b);
    const auto alpha = StoppingRule::at_layer(t, 0);
    const auto c = saddle_from_solution(t, s.y, b, alpha, 0.0);
    const auto payoff = GamePayoff::from_solution(t, f, s.y, b, xi);
    CHECK(verify_saddle(t, payoff, c, alpha).pass);

    const auto first = min(c.sigma, c.tau);
    for (NodeId n = 0; n < t.size(); ++n) {
      if (t.is_leaf(n) || first.stopped_by(n)) continue;
      const double drift = s.y[n] - expect_children(t, s.y, n) - f(t.layer(n), n, s.y[n]) * t.dt();
      CHECK(std::abs(drift) <= 1e-10);
    }
  }
}

TEST_CASE("epsilon saddles") {
  std::mt19937_64 rng(43);
  for (int rep = 0; rep < 10; ++rep) {
    const auto t = random_tree(rng, {3, 1, 2, 0.25});
    const auto p = random_problem(rng, t);
    const auto s = solve_reflected(t, p.xi, p.f, p.barriers);
    const auto payoff = GamePayoff::from_solution(t, p.f, s.y, p.barriers, p.xi);
    const auto alpha = StoppingRule::at_layer(t, 0);
    for (double eps : {0.5, 0.1, 0.01}) {
      const auto c = saddle_from_solution(t, s.y, p.barriers, alpha, eps);
      CHECK(verify_saddle(t, payoff, c, alpha, &s.y).pass);
    }
  }
}

TEST_CASE("generalized game equals Y0 for nonincreasing generators") {
  std::mt19937_64 rng(44);
  for (int rep = 0; rep < 10; ++rep) {
    const auto t = random_tree(rng, {2, 1, 3, 0.25});
    const auto p = random_problem(rng, t);
    const auto s = solve_reflected(t, p.xi, p.f, p.barriers);
    const auto g = generalized_game_value(t, p.f, p.barriers, p.xi, StoppingRule::at_layer(t, 0));
    CHECK(g.supinf[0] == doctest::Approx(s.y[0]).epsilon(1e-8));
    CHECK(g.infsup[0] == doctest::Approx(s.y[0]).epsilon(1e-8));
  }
}

}  // TEST_SUITE
