#pragma once

// Dynkin stopping games on event trees: the payoff functional, exhaustive
// stopping-rule enumeration, brute-force game values, saddle points and the
// game played under a nonlinear f-expectation.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rbsdelab/bsde.hpp"
#include "rbsdelab/lattice.hpp"
#include "rbsdelab/reflected.hpp"

namespace rbsdelab {

/// The maximizer stops with sigma and collects `lower`; the minimizer stops
/// with tau and pays `upper`. Simultaneous stops before the horizon pay
/// `upper`; both running to the horizon pays `terminal`.
struct GamePayoff {
  AdaptedProcess running;
  AdaptedProcess lower;
  AdaptedProcess upper;
  AdaptedProcess terminal;

  /// Payoff with the running integrand frozen at f(., y).
  static GamePayoff from_solution(const FiltrationTree& tree, const Generator& f,
                                  const AdaptedProcess& y, const BarrierPair& barriers,
                                  const AdaptedProcess& xi);
};

/// J at alpha: E[ sum_{alpha <= k < sigma^tau} running_k dt + L_sigma 1{sigma<tau}
/// + U_tau 1{tau<=sigma<K} + xi 1{sigma=tau=K} | F_alpha ]. Values on the
/// alpha nodes, propagated forward, NaN before alpha.
AdaptedProcess payoff_J(const FiltrationTree& tree, const GamePayoff& payoff,
                        const StoppingRule& sigma, const StoppingRule& tau,
                        const StoppingRule& alpha);

/// Number of stopping rules >= alpha: product over the alpha nodes of
/// N(v), with N(leaf) = 1 and N(v) = 1 + prod N(children). Saturates at
/// UINT64_MAX.
std::uint64_t count_stopping_rules(const FiltrationTree& tree, const StoppingRule& alpha);

/// Every stopping rule >= alpha, each exactly once. Rules that stop
/// earlier at a node are produced first. Throws OracleTooLarge when the
/// count exceeds `cap`.
void for_each_stopping_rule(const FiltrationTree& tree, const StoppingRule& alpha,
                            const std::function<void(const StoppingRule&)>& visit,
                            std::uint64_t cap = 1'000'000);
std::vector<StoppingRule> enumerate_stopping_rules(const FiltrationTree& tree,
                                                   const StoppingRule& alpha,
                                                   std::uint64_t cap = 1'000'000);

enum class OracleMode {
  /// Pairs when rules^2 <= max_pairs, else one-sided.
  automatic,
  /// Every (sigma, tau) pair.
  pairs,
  /// Enumerate one player; the other player's best reply is an optimal
  /// stopping problem solved exactly by backward induction.
  one_sided,
};

struct OracleOptions {
  std::uint64_t max_rules = 1'000'000;
  std::uint64_t max_pairs = 1'000'000;
  OracleMode mode = OracleMode::automatic;
  RootOptions root;
};

struct GameValue {
  /// sup_sigma inf_tau and inf_tau sup_sigma on the alpha nodes (propagated
  /// forward, NaN before alpha).
  AdaptedProcess supinf;
  AdaptedProcess infsup;
  /// Earliest maximizing sigma and earliest minimizing tau.
  StoppingRule argmax_sigma;
  StoppingRule argmin_tau;
  std::uint64_t rules_per_player = 0;
  std::uint64_t evaluations = 0;
  OracleMode mode_used = OracleMode::pairs;
};

GameValue game_value_bruteforce(const FiltrationTree& tree, const GamePayoff& payoff,
                                const StoppingRule& alpha, const OracleOptions& opts = {});

/// Brute-force value of the game started at every node.
AdaptedProcess game_value_process(const FiltrationTree& tree, const GamePayoff& payoff,
                                  const OracleOptions& opts = {});

/// J^f: the payoff at sigma^tau pulled back to alpha with the f-expectation.
/// Requires mu <= 0; always enumerates pairs.
GameValue generalized_game_value(const FiltrationTree& tree, const Generator& f,
                                 const BarrierPair& barriers, const AdaptedProcess& xi,
                                 const StoppingRule& alpha, const OracleOptions& opts = {});

struct SaddleCandidate {
  StoppingRule sigma;
  StoppingRule tau;
  double epsilon = 0.0;
};

/// epsilon = 0: sigma* = first Y = L, tau* = first Y = U (tolerance 1e-10).
/// epsilon > 0: sigma_eps = first Y <= L + eps, tau_eps = first Y >= U - eps.
/// All rules start at alpha and are capped at K.
SaddleCandidate saddle_from_solution(const FiltrationTree& tree, const AdaptedProcess& y,
                                     const BarrierPair& barriers, const StoppingRule& alpha,
                                     double epsilon);

struct SaddleReport {
  bool pass = true;
  /// J(sigma, tau) of the candidate on the alpha nodes.
  AdaptedProcess candidate_value;
  /// Largest violation over all deviations and alpha nodes (<= 0 when the
  /// inequalities hold with room to spare).
  double worst_violation = -std::numeric_limits<double>::infinity();
  std::optional<NodeId> worst_node;
  std::string worst_side;
  std::uint64_t deviations_checked = 0;
};

/// Exact mode (epsilon = 0): J(s, tau*) <= J(sigma*, tau*) <= J(sigma*, t)
/// for every s, t >= alpha. Epsilon mode: J(s, tau_eps) - eps <= Y_alpha <=
/// J(sigma_eps, t) + eps, with Y_alpha taken from `value`.
SaddleReport verify_saddle(const FiltrationTree& tree, const GamePayoff& payoff,
                           const SaddleCandidate& candidate, const StoppingRule& alpha,
                           const AdaptedProcess* value = nullptr, double tol = 1e-9,
                           const OracleOptions& opts = {});

/// Same inequalities with J replaced by J^f.
SaddleReport verify_saddle_f(const FiltrationTree& tree, const Generator& f,
                             const BarrierPair& barriers, const AdaptedProcess& xi,
                             const SaddleCandidate& candidate, const StoppingRule& alpha,
                             const AdaptedProcess* value = nullptr, double tol = 1e-9,
                             const OracleOptions& opts = {});

}  // namespace rbsdelab
