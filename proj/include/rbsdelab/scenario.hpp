#pragma once

// Scenario files (JSON) and seeded random scenario generation.

#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "json.hpp"
#include "rbsdelab/bsde.hpp"
#include "rbsdelab/lattice.hpp"
#include "rbsdelab/markov_vi.hpp"
#include "rbsdelab/reflected.hpp"

namespace rbsdelab {

using Json = nlohmann::json;

/// Reads and parses a JSON file. Parse errors become ConfigError with the
/// line and column.
Json load_json_file(const std::string& path);

/// Spatial coordinate of every node: the root sits at 0 and the j-th of b
/// children moves by ((b-1) - 2j)/(b-1) * sqrt(dt).
std::vector<double> node_positions(const FiltrationTree& tree);

/// A function of one variable. Accepted forms:
///   number                                      constant
///   {"function":"poly","coeffs":[c0,c1,..]}     polynomial
///   {"function":"tent","center":c,"width":w,"height":h}
///   {"function":"sin","amplitude":a,"frequency":k}     a*sin(k*pi*v)
///   {"function":"tanh","amplitude":a,"rate":k}         a*tanh(k*v)
///   {"function":"sum","terms":[spec,..]}
///   {"function":"piecewise","breaks":[b1,..],"pieces":[spec,..]}
/// Optional keys on objects: "positive_part", "scale", "offset", "var"
/// ("t" or "x", default "x" for interval data and "t" on trees).
struct FunctionSpec {
  std::function<double(double)> fn;
  std::string var;
};
FunctionSpec parse_function(const Json& j, const std::string& field, const std::string& default_var);

/// A process on the tree: a number, {"const": c}, a list with one value per
/// node, {"nodes": {"id": value, ...}, "default": d}, or a function spec of
/// t or x.
AdaptedProcess parse_process(const Json& j, const FiltrationTree& tree, const std::string& field);

FiltrationTree parse_tree(const Json& j, std::uint64_t seed);

/// {"type": "const"|"linear"|"affine"|"monotone_poly"|"tabulated", ...}.
Generator parse_generator(const Json& j, const FiltrationTree& tree);

struct TreeScenario {
  FiltrationTree tree;
  Generator f;
  AdaptedProcess xi;
  BarrierPair barriers;
  AdaptedProcess eta;
  double tol = 1e-9;
  Json raw;
};

/// Keys: "tree", "generator", "terminal", "lower", "upper" (null or absent
/// means no barrier), "eta", "tol". Random trees use `seed`. Alternatively
/// "random_problem": {depth, min_branching, max_branching, dt,
/// pinch_probability, one_sided_probability, allow_nonlinear, max_mu, seed}
/// draws the whole problem.
TreeScenario parse_tree_scenario(const Json& j, std::uint64_t seed);

/// Keys: "interior" or "k" (2^k + 1 points with the ends), "lo", "hi",
/// "g", "h1", "h2", "left", "right"; functions of x.
ObstacleProblem parse_obstacle_problem(const Json& j);

/// The matching killed walk (dt = h^2): g = load(., 0), fhat slope = load
/// slope, obstacles copied, psi = Dirichlet values. Needs an affine load.
MarkovScenario obstacle_chain(const ObstacleProblem& p);

/// Extra keys for the evolution problem: "horizon", "steps", "theta",
/// "terminal"; obstacles and running cost may depend on t ("var": "t").
ParabolicObstacleProblem parse_parabolic_problem(const Json& j);

// ---------------------------------------------------------------------------
// Random scenarios

struct RandomTreeOptions {
  int depth = 3;
  int min_branching = 1;
  int max_branching = 3;
  double dt = 0.25;
};

FiltrationTree random_tree(std::mt19937_64& rng, const RandomTreeOptions& opts);

struct RandomProblemOptions {
  /// Probability that a node has L = U.
  double pinch_probability = 0.1;
  /// Probability that a barrier is replaced by a sentinel.
  double one_sided_probability = 0.1;
  bool allow_nonlinear = true;
  /// Largest generator slope mu allowed (values > 0 exercise normalization).
  double max_mu = 0.0;
  double scale = 1.0;
};

ReflectedProblem random_problem(std::mt19937_64& rng, const FiltrationTree& tree,
                                const RandomProblemOptions& opts = {});

/// Two problems with xi1 <= xi2, f1 <= f2, L1 <= L2, U1 <= U2.
std::pair<ReflectedProblem, ReflectedProblem> random_ordered_pair(std::mt19937_64& rng,
                                                                  const FiltrationTree& tree,
                                                                  const RandomProblemOptions& opts = {});

/// Random L <= U with E[L_k|F_{k-1}] >= L_{k-1} and E[U_k|F_{k-1}] <= U_{k-1}.
BarrierPair random_projection_barriers(std::mt19937_64& rng, const FiltrationTree& tree,
                                       double scale = 1.0);

/// Terminal value drawn uniformly between the terminal barriers.
AdaptedProcess random_terminal(std::mt19937_64& rng, const FiltrationTree& tree,
                               const BarrierPair& barriers);

}  // namespace rbsdelab
