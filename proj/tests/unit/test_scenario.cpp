#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "rbsdelab/errors.hpp"
#include "rbsdelab/scenario.hpp"

using namespace rbsdelab;

TEST_SUITE("scenario") {

TEST_CASE("function specs") {
  auto eval = [](const char* text, double v) { return parse_function(Json::parse(text), "f", "x").fn(v); };
  CHECK(eval("2.5", 7.0) == 2.5);
  CHECK(eval(R"({"function":"poly","coeffs":[1,2,3]})", 2.0) == 17.0);
  CHECK(eval(R"({"function":"tent","center":0,"width":2,"height":4})", 1.0) == doctest::Approx(2.0));
  CHECK(eval(R"({"function":"tent","center":0,"width":2,"height":4})", 3.0) == 0.0);
  CHECK(eval(R"({"function":"sin","amplitude":2,"frequency":0.5})", 1.0) == doctest::Approx(2.0));
  CHECK(eval(R"({"function":"tanh","amplitude":3,"rate":2})", 0.5) == doctest::Approx(3.0 * std::tanh(1.0)));
  CHECK(eval(R"({"function":"sum","terms":[1,{"function":"poly","coeffs":[0,1]}]})", 4.0) == 5.0);
  CHECK(eval(R"({"function":"piecewise","breaks":[0],"pieces":[-1,{"function":"poly","coeffs":[0,2]}]})", -3.0) == -1.0);
  CHECK(eval(R"({"function":"piecewise","breaks":[0],"pieces":[-1,{"function":"poly","coeffs":[0,2]}]})", 3.0) == 6.0);
  CHECK(eval(R"({"function":"poly","coeffs":[0,1],"positive_part":true,"scale":2,"offset":1})", -3.0) == 1.0);
  CHECK(parse_function(Json::parse(R"({"function":"poly","coeffs":[0,1],"var":"t"})"), "f", "x").var == "t");
  CHECK_THROWS_AS(parse_function(Json::parse(R"({"function":"wavelet"})"), "f", "x"), ConfigError);
  CHECK_THROWS_AS(parse_function(Json::parse(R"("text")"), "f", "x"), ConfigError);
}

TEST_CASE("processes") {
  const auto t = FiltrationTree::binomial(2, 0.5);
  CHECK(parse_process(Json::parse("1.5"), t, "p")[6] == 1.5);
  CHECK(parse_process(Json::parse(R"({"const":-2})"), t, "p")[3] == -2.0);
  const auto list = parse_process(Json::parse("[0,1,2,3,4,5,6]"), t, "p");
  CHECK(list[4] == 4.0);
  CHECK_THROWS_AS(parse_process(Json::parse("[0,1]"), t, "p"), ConfigError);
  const auto sparse = parse_process(Json::parse(R"({"nodes":{"3":9},"default":1})"), t, "p");
  CHECK(sparse[3] == 9.0);
  CHECK(sparse[4] == 1.0);
  const auto of_t = parse_process(Json::parse(R"({"function":"poly","coeffs":[0,1]})"), t, "p");
  CHECK(of_t[5] == doctest::Approx(1.0));
  const auto of_x = parse_process(Json::parse(R"({"function":"poly","coeffs":[0,1],"var":"x"})"), t, "p");
  CHECK(of_x[1] == doctest::Approx(std::sqrt(0.5)));
  CHECK(of_x[2] == doctest::Approx(-std::sqrt(0.5)));
}

TEST_CASE("trees") {
  CHECK(parse_tree(Json::parse(R"({"type":"binomial","steps":3,"dt":0.1})"), 0).size() == 15);
  CHECK(parse_tree(Json::parse(R"({"type":"uniform","steps":2,"probs":[0.2,0.8]})"), 0).size() == 7);
  CHECK(parse_tree(Json::parse(R"({"type":"chain","steps":4})"), 0).size() == 5);
  const auto nodes = parse_tree(
      Json::parse(R"({"type":"nodes","nodes":[{"id":0,"layer":0},{"id":1,"layer":1,"parent":0,"prob":0.3},
                      {"id":2,"layer":1,"parent":0,"prob":0.7}]})"),
      0);
  CHECK(nodes.node(2).prob == doctest::Approx(0.7));
  CHECK_THROWS_AS(parse_tree(Json::parse(R"({"type":"nodes","nodes":[{"id":0,"layer":0},
                      {"id":1,"layer":1,"parent":0,"prob":0.3}]})"), 0), TreeError);
  CHECK_THROWS_AS(parse_tree(Json::parse(R"({"type":"forest"})"), 0), ConfigError);

  const auto r1 = parse_tree(Json::parse(R"({"type":"random","depth":3})"), 7);
  const auto r2 = parse_tree(Json::parse(R"({"type":"random","depth":3})"), 7);
  REQUIRE(r1.size() == r2.size());
  for (NodeId n = 0; n < r1.size(); ++n) CHECK(r1.node(n).prob == r2.node(n).prob);
}

TEST_CASE("generators") {
  const auto t = FiltrationTree::binomial(1, 1.0);
  CHECK(parse_generator(Json(nullptr), t)(0, 0, 3.0) == 0.0);
  CHECK(parse_generator(Json::parse(R"({"type":"const","c":2})"), t)(0, 0, 3.0) == 2.0);
  const auto lin = parse_generator(Json::parse(R"({"type":"linear","a":-1,"b":0.5})"), t);
  CHECK(lin(0, 0, 2.0) == doctest::Approx(-1.5));
  CHECK(lin.mu() == -1.0);
  const auto aff = parse_generator(Json::parse(R"({"type":"affine","a":0,"b":[1,2,3]})"), t);
  CHECK(aff(1, 2, 0.0) == 3.0);
  const auto poly = parse_generator(Json::parse(R"({"type":"monotone_poly","a":0,"b":1,"odd_coeffs":[1]})"), t);
  CHECK(poly(0, 0, 2.0) == doctest::Approx(1.0 - 2.0));
  const auto tab = parse_generator(Json::parse(R"({"type":"tabulated","y_grid":[0,1],"rows":[[0,-1],[0,-2],[0,-3]]})"), t);
  CHECK(tab(1, 2, 0.5) == doctest::Approx(-1.5));
  CHECK_THROWS_AS(parse_generator(Json::parse(R"({"type":"tabulated","y_grid":[0,1],"rows":[[0,-1]]})"), t), ConfigError);
  CHECK_THROWS_AS(parse_generator(Json::parse(R"({"type":"quartic"})"), t), ConfigError);
}

TEST_CASE("tree scenarios") {
  const auto s = parse_tree_scenario(Json::parse(R"({
    "tree": {"type":"binomial","steps":2,"dt":0.5},
    "generator": {"type":"const","c":0.1},
    "terminal": 0.2, "lower": -1, "upper": {"const": 1}, "tol": 1e-10})"), 0);
  CHECK(s.tree.size() == 7);
  CHECK(s.xi[5] == 0.2);
  CHECK(s.tol == 1e-10);
  CHECK(s.eta[0] == doctest::Approx(2.0 / std::numbers::pi));

  const auto open = parse_tree_scenario(Json::parse(R"({"tree":{"type":"chain","steps":1},"terminal":5,"upper":null})"), 0);
  CHECK(is_sentinel(open.barriers.upper[0]));
  CHECK(is_sentinel(open.barriers.lower[1]));

  CHECK_THROWS_AS(parse_tree_scenario(Json::parse(R"({"tree":{"type":"chain","steps":1},"terminal":5,"upper":1})"), 0),
                  TerminalViolation);
  CHECK_THROWS_AS(parse_tree_scenario(Json::parse(R"({"tree":{"type":"chain","steps":1},"terminal":0.5,"lower":1,"upper":0})"), 0),
                  BarrierCrossing);
  CHECK_THROWS_AS(parse_tree_scenario(Json::parse("[1,2]"), 0), ConfigError);

  const auto a = parse_tree_scenario(Json::parse(R"({"random_problem":{"depth":3,"seed":5}})"), 0);
  const auto b = parse_tree_scenario(Json::parse(R"({"random_problem":{"depth":3,"seed":5}})"), 99);
  REQUIRE(a.tree.size() == b.tree.size());
  CHECK(testutil::max_diff(a.xi, b.xi) == 0.0);
  CHECK(testutil::max_diff(a.barriers.lower, b.barriers.lower) == 0.0);
}

TEST_CASE("json files") {
  CHECK_THROWS_AS(load_json_file("/nonexistent/scenario.json"), ConfigError);
  const std::string path = "rbsdelab_unit_malformed.json";
  {
    std::ofstream out(path);
    out << "{\n  \"tree\": {\n    \"type\": \"chain\",,\n  }\n}\n";
  }
  try {
    load_json_file(path);
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("obstacle problems from JSON") {
  const auto p = parse_obstacle_problem(Json::parse(R"({"k":3,"g":1,"h1":{"function":"tent","center":0.5,"width":0.25,"height":0.2}})"));
  CHECK(p.size() == 7);
  CHECK(p.h() == doctest::Approx(0.125));
  CHECK(p.h1[3] == doctest::Approx(0.2));
  CHECK(is_sentinel(p.h2[0]));
  const auto chain = obstacle_chain(p);
  CHECK(chain.size() == 9);
  CHECK(chain.dt == doctest::Approx(p.h() * p.h()));
  CHECK(chain.g[4] == doctest::Approx(1.0));

  const auto q = parse_parabolic_problem(Json::parse(R"({"interior":15,"lo":-1,"hi":1,"horizon":0.5,"steps":10,
      "theta":1,"terminal":0,"h1":-1,"h2":{"function":"poly","coeffs":[1,0.5],"var":"t"}})"));
  CHECK(q.steps == 10);
  CHECK(q.theta == 1.0);
  CHECK(q.upper(0.4, 0.0) == doctest::Approx(1.2));
}

TEST_CASE("random generators respect their contracts") {
  std::mt19937_64 rng(61);
  for (int rep = 0; rep < 50; ++rep) {
    const auto t = random_tree(rng, {4, 1, 3, 0.25});
    CHECK(t.depth() == 4);
    for (NodeId n = 0; n < t.size(); ++n) {
      if (t.is_leaf(n)) continue;
      CHECK(t.children(n).size() >= 1);
      CHECK(t.children(n).size() <= 3);
    }
    const auto p = random_problem(rng, t);
    CHECK(p.f.mu() <= 0.0);
    p.barriers.validate(t);
    p.barriers.validate_terminal(t, p.xi);

    const auto [a, b] = random_ordered_pair(rng, t);
    for (NodeId n = 0; n < t.size(); ++n) {
      CHECK(a.barriers.lower[n] <= b.barriers.lower[n]);
      CHECK(a.barriers.upper[n] <= b.barriers.upper[n]);
      for (double y : {-2.0, 0.0, 2.0}) CHECK(a.f(t.layer(n), n, y) <= b.f(t.layer(n), n, y));
    }
    for (NodeId n : t.leaves()) CHECK(a.xi[n] <= b.xi[n]);
  }
}

}  // TEST_SUITE
