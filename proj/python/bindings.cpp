#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rbsdelab/bsde.hpp"
#include "rbsdelab/demos.hpp"
#include "rbsdelab/dynkin.hpp"
#include "rbsdelab/errors.hpp"
#include "rbsdelab/markov_vi.hpp"
#include "rbsdelab/reflected.hpp"
#include "rbsdelab/scenario.hpp"

namespace py = pybind11;
using namespace rbsdelab;

namespace {

using Values = std::vector<double>;

AdaptedProcess process(const FiltrationTree& tree, const Values& v, const char* what) {
  if (v.size() != tree.size()) {
    throw ConfigError(std::string(what) + ": expected " + std::to_string(tree.size()) + " values");
  }
  return AdaptedProcess(v);
}

Values values(const AdaptedProcess& p) { return {p.values().begin(), p.values().end()}; }

py::dict verdict(const ConditionVerdict& v) {
  py::dict d;
  d["pass"] = v.pass;
  d["slack"] = v.slack;
  d["detail"] = v.detail;
  d["node"] = v.node ? py::cast(*v.node) : py::none();
  d["time"] = v.time ? py::cast(*v.time) : py::none();
  return d;
}

PenaltyMode penalty_mode(const std::string& s) {
  if (s == "lower") return PenaltyMode::lower;
  if (s == "upper") return PenaltyMode::upper;
  if (s == "both") return PenaltyMode::both;
  throw ConfigError("unknown penalty mode '" + s + "'");
}

py::dict vi_dict(const VISolution& s) {
  py::dict d;
  d["u"] = s.u;
  d["iterations"] = s.iterations;
  d["residual"] = s.residual;
  d["contact"] = s.contact;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Reflected BSDEs, Dynkin games and obstacle problems on finite trees";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);

  py::class_<FiltrationTree>(m, "FiltrationTree")
      .def_static("binomial", &FiltrationTree::binomial, py::arg("steps"), py::arg("dt"),
                  py::arg("p_up") = 0.5)
      .def_static("uniform",
                  [](int steps, double dt, const Values& probs) {
                    return FiltrationTree::uniform(steps, dt, probs);
                  })
      .def_static("chain", &FiltrationTree::chain)
      .def_property_readonly("size", &FiltrationTree::size)
      .def_property_readonly("depth", &FiltrationTree::depth)
      .def_property_readonly("dt", &FiltrationTree::dt)
      .def("layer", &FiltrationTree::layer)
      .def("time", &FiltrationTree::time)
      .def("parent", [](const FiltrationTree& t, NodeId n) -> py::object {
        return n == t.root() ? py::none() : py::cast(t.parent(n));
      })
      .def("children", &FiltrationTree::children)
      .def("layer_nodes", &FiltrationTree::layer_nodes)
      .def("leaves", [](const FiltrationTree& t) {
        return std::vector<NodeId>(t.leaves().begin(), t.leaves().end());
      })
      .def("positions", &node_positions);

  py::class_<Generator>(m, "Generator")
      .def_static("zero", &Generator::zero)
      .def_static("constant", &Generator::constant)
      .def_static("linear", &Generator::linear, py::arg("a"), py::arg("b"))
      .def_static("affine", [](double a, const Values& b) { return Generator::affine(a, AdaptedProcess(b)); })
      .def_static("monotone_poly", &Generator::monotone_poly, py::arg("a"), py::arg("b"),
                  py::arg("odd_coeffs"))
      .def_property_readonly("mu", &Generator::mu)
      .def_property_readonly("description", &Generator::description)
      .def("__call__", [](const Generator& f, int layer, NodeId node, double y) { return f(layer, node, y); });

  py::class_<BarrierPair>(m, "BarrierPair")
      .def_property_readonly("lower", [](const BarrierPair& b) { return values(b.lower); })
      .def_property_readonly("upper", [](const BarrierPair& b) { return values(b.upper); });

  m.def(
      "barriers",
      [](const FiltrationTree& tree, std::optional<Values> lower, std::optional<Values> upper) {
        AdaptedProcess lo = lower ? process(tree, *lower, "lower") : AdaptedProcess(tree.size(), -kSentinel);
        AdaptedProcess hi = upper ? process(tree, *upper, "upper") : AdaptedProcess(tree.size(), kSentinel);
        BarrierPair b = BarrierPair::two_sided(std::move(lo), std::move(hi));
        b.validate(tree);
        return b;
      },
      py::arg("tree"), py::arg("lower") = py::none(), py::arg("upper") = py::none(),
      "Barrier pair; a missing side becomes a sentinel.");

  m.def(
      "solve_reflected",
      [](const FiltrationTree& tree, const Values& xi, const Generator& f, const BarrierPair& b) {
        const auto s = solve_reflected(tree, process(tree, xi, "xi"), f, b);
        py::dict d;
        d["y"] = values(s.y);
        d["rplus"] = values(s.rplus);
        d["rminus"] = values(s.rminus);
        d["martingale_increments"] = values(s.martingale_increments);
        d["max_residual"] = s.diagnostics.max_residual;
        return d;
      },
      py::arg("tree"), py::arg("xi"), py::arg("f"), py::arg("barriers"));

  m.def(
      "verify_solution",
      [](const FiltrationTree& tree, const Values& y, const Generator& f, const Values& xi,
         const BarrierPair& b, double tol) {
        const auto r = verify_solution(tree, process(tree, y, "y"), f, process(tree, xi, "xi"), b, tol);
        py::dict d;
        d["pass"] = r.pass();
        d["a"] = verdict(r.class_d);
        d["b"] = verdict(r.dynamics);
        d["c"] = verdict(r.barriers);
        d["d"] = verdict(r.minimality);
        return d;
      },
      py::arg("tree"), py::arg("y"), py::arg("f"), py::arg("xi"), py::arg("barriers"),
      py::arg("tol") = 1e-9);

  m.def(
      "solve_penalized",
      [](const FiltrationTree& tree, const Values& xi, const Generator& f, const BarrierPair& b, double n,
         const std::string& mode) {
        const auto s = solve_penalized(tree, process(tree, xi, "xi"), f, b, n, default_eta(tree),
                                       penalty_mode(mode));
        return values(s.bsde.y);
      },
      py::arg("tree"), py::arg("xi"), py::arg("f"), py::arg("barriers"), py::arg("n"),
      py::arg("mode") = "both");

  m.def(
      "f_expectation",
      [](const FiltrationTree& tree, const Generator& f, const Values& xi, int alpha_layer, int beta_layer) {
        if (beta_layer < 0) beta_layer = tree.depth();
        const auto v = f_expectation(tree, f, StoppingRule::at_layer(tree, alpha_layer),
                                     StoppingRule::at_layer(tree, beta_layer), process(tree, xi, "xi"));
        return values(v);
      },
      py::arg("tree"), py::arg("f"), py::arg("xi"), py::arg("alpha_layer") = 0, py::arg("beta_layer") = -1);

  m.def(
      "game_value",
      [](const FiltrationTree& tree, const Generator& f, const Values& y, const BarrierPair& b,
         const Values& xi, std::uint64_t max_rules) {
        const auto payoff = GamePayoff::from_solution(tree, f, process(tree, y, "y"), b, process(tree, xi, "xi"));
        OracleOptions oo;
        oo.max_rules = max_rules;
        const auto g = game_value_bruteforce(tree, payoff, StoppingRule::at_layer(tree, 0), oo);
        py::dict d;
        d["supinf"] = g.supinf[0];
        d["infsup"] = g.infsup[0];
        d["rules_per_player"] = g.rules_per_player;
        return d;
      },
      py::arg("tree"), py::arg("f"), py::arg("y"), py::arg("barriers"), py::arg("xi"),
      py::arg("max_rules") = 1'000'000, "Brute-force game value at the root with the running cost frozen at y.");

  m.def(
      "generalized_game_value",
      [](const FiltrationTree& tree, const Generator& f, const BarrierPair& b, const Values& xi) {
        const auto g = generalized_game_value(tree, f, b, process(tree, xi, "xi"), StoppingRule::at_layer(tree, 0));
        return py::make_tuple(g.supinf[0], g.infsup[0]);
      },
      py::arg("tree"), py::arg("f"), py::arg("barriers"), py::arg("xi"));

  m.def("count_stopping_rules", [](const FiltrationTree& tree) {
    return count_stopping_rules(tree, StoppingRule::at_layer(tree, 0));
  });

  py::class_<TreeScenario>(m, "TreeScenario")
      .def_readonly("tree", &TreeScenario::tree)
      .def_readonly("f", &TreeScenario::f)
      .def_readonly("barriers", &TreeScenario::barriers)
      .def_property_readonly("xi", [](const TreeScenario& s) { return values(s.xi); })
      .def_readonly("tol", &TreeScenario::tol);

  m.def(
      "load_scenario",
      [](const std::string& text, std::uint64_t seed) {
        Json j;
        try {
          j = Json::parse(text);
        } catch (const Json::parse_error& e) {
          throw ConfigError(e.what());
        }
        return parse_tree_scenario(j, seed);
      },
      py::arg("json_text"), py::arg("seed") = 0);

  py::class_<ObstacleProblem>(m, "ObstacleProblem")
      .def_property_readonly("size", &ObstacleProblem::size)
      .def_property_readonly("x", [](const ObstacleProblem& p) {
        Values x(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) x[i] = p.x(i);
        return x;
      })
      .def_readonly("h1", &ObstacleProblem::h1)
      .def_readonly("h2", &ObstacleProblem::h2);

  m.def("obstacle_problem", [](const std::string& text) {
    Json j;
    try {
      j = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ConfigError(e.what());
    }
    return parse_obstacle_problem(j);
  });
  m.def(
      "solve_vi_psor",
      [](const ObstacleProblem& p, double omega, double tol) { return vi_dict(solve_vi_psor(p, omega, tol)); },
      py::arg("problem"), py::arg("omega") = 0.0, py::arg("tol") = 1e-10);
  m.def(
      "solve_vi_penalized",
      [](const ObstacleProblem& p, double n, double tol) { return vi_dict(solve_vi_penalized(p, n, tol)); },
      py::arg("problem"), py::arg("n"), py::arg("tol") = 1e-10);
  m.def("complementarity_residual", &complementarity_residual);
  m.def(
      "chain_value",
      [](const ObstacleProblem& p) {
        const auto v = value_function(obstacle_chain(p));
        return Values(v.u.begin() + 1, v.u.end() - 1);
      },
      "Stationary value of the matching killed walk on the interior points.");

  m.def("oscillating_barrier_demo", [](int n) {
    const auto d = oscillating_barrier_demo(n);
    py::dict out;
    out["y"] = values(d.y);
    out["lower"] = values(d.barriers.lower);
    out["upper"] = values(d.barriers.upper);
    out["total_variation"] = d.total_variation;
    return out;
  });
}
