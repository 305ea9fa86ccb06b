#pragma once

// Markov-chain scenarios on a 1-D grid, their value functions, and the
// stationary and evolutionary obstacle problems (variational inequalities)
// on an interval.

#include <cstddef>
#include <functional>
#include <vector>

#include "rbsdelab/bsde.hpp"
#include "rbsdelab/lattice.hpp"
#include "rbsdelab/reflected.hpp"

namespace rbsdelab {

/// fhat(state, y), nonincreasing in y up to `mu`. Affine nonlinearities
/// carry their slope so solvers can take the closed-form root.
struct StateNonlinearity {
  std::function<double(std::size_t state, double y)> fn;
  double mu = 0.0;
  bool affine = false;
  double slope = 0.0;

  static StateNonlinearity zero();
  /// b(state) + slope*y.
  static StateNonlinearity affine_in_y(std::vector<double> intercept, double slope);
  static StateNonlinearity general(std::function<double(std::size_t, double)> fn, double mu);

  double operator()(std::size_t i, double y) const { return fn(i, y); }
};

struct Transition {
  std::size_t to = 0;
  double prob = 0.0;
};

/// States x_0..x_{m-1}; absorbing states carry the boundary datum psi.
struct MarkovScenario {
  std::vector<double> x;
  std::vector<std::vector<Transition>> transitions;
  std::vector<bool> absorbing;
  double dt = 1.0;
  std::vector<double> g;
  std::vector<double> h1;
  std::vector<double> h2;
  std::vector<double> psi;
  StateNonlinearity fhat = StateNonlinearity::zero();
  /// Value at the horizon for finite-horizon problems (non-absorbing states).
  std::vector<double> terminal;

  std::size_t size() const { return x.size(); }

  /// Walk on `interior` equally spaced points of (lo, hi) with absorbing
  /// endpoints, moving +-h with probability laziness/2 each and
  /// dt = laziness*h^2, so that P = I - dt*A with A = tridiag(-1,2,-1)/(2h^2).
  /// Data default to g = 0, psi = 0, sentinel obstacles.
  static MarkovScenario killed_walk(int interior, double lo = 0.0, double hi = 1.0,
                                    double laziness = 1.0);
  /// +-h symmetric walk on x0 + j*h, |j| <= half_width, step dt; the two
  /// outermost states are absorbing.
  static MarkovScenario lattice_walk(int half_width, double x0, double h, double dt);

  /// Fills g, h1, h2, psi and terminal from functions of x.
  void set_data(const std::function<double(double)>& g_fn, const std::function<double(double)>& h1_fn,
                const std::function<double(double)>& h2_fn,
                const std::function<double(double)>& psi_fn,
                const std::function<double(double)>& terminal_fn);

  /// Throws ConfigError on rows that do not sum to one, absorbing states
  /// that move, or h1 > h2 / terminal outside [h1, h2].
  void validate() const;
};

struct MarkovValue {
  std::vector<double> u;
  int sweeps = 0;
  double last_change = 0.0;
};

struct ChainSolveOptions {
  double tol = 1e-12;
  int max_sweeps = 2'000'000;
  /// Over-relaxation of the Gauss-Seidel update (1 = plain).
  double omega = 1.0;
  RootOptions root;
};

/// Stationary value: u = clamp(P u + (g + fhat(u)) dt, h1, h2) off the
/// absorbing states, u = psi on them, by projected Gauss-Seidel. Throws
/// NonTransient when the sweep cap is reached.
MarkovValue value_function(const MarkovScenario& s, const ChainSolveOptions& opts = {});

/// Finite horizon K: u[k][state] by backward induction from the terminal
/// data; absorbing states hold psi.
std::vector<std::vector<double>> value_function_horizon(const MarkovScenario& s, int steps,
                                                        const RootOptions& root = {});

/// Stationary penalized value with generator
/// g + fhat + n*eta*(y - h1)^- (lower), - n*eta*(y - h2)^+ (upper), or both.
MarkovValue markov_penalized(const MarkovScenario& s, double n, const std::vector<double>& eta,
                             PenaltyMode mode, const ChainSolveOptions& opts = {});

/// Chain histories of length `steps` from `start` as a tree, with the
/// reflected-problem data: L = U = psi once absorbed, L = h1(X), U = h2(X)
/// otherwise, xi = terminal(X_K) (psi if absorbed), f = g + fhat.
struct UnrolledChain {
  FiltrationTree tree;
  std::vector<std::size_t> state;
  BarrierPair barriers;
  AdaptedProcess xi;
  Generator f;
};

UnrolledChain unroll_chain(const MarkovScenario& s, int steps, std::size_t start,
                           std::size_t max_nodes = 2'000'000);

/// u(X) on the unrolled tree split into its predictable (A) and martingale
/// (M) parts; Gamma increments rebuilt as -(dA + dM) - f(u(X)) dt and the
/// candidate checked with verify_solution (terminal u(X_K)).
struct FukushimaResult {
  UnrolledChain chain;
  AdaptedProcess u_of_x;
  DoobDecomposition parts;
  AdaptedProcess gamma_increments;
  VerdictReport report;
};

FukushimaResult fukushima_bookkeeping(const MarkovScenario& s, const std::vector<double>& u,
                                      int steps, std::size_t start, double tol = 1e-9);

// ---------------------------------------------------------------------------
// Obstacle problems on an interval

/// Find h1 <= u <= h2 with (A u - load(u) - b)_i >= 0 where u_i = h1_i,
/// <= 0 where u_i = h2_i and = 0 in between. A is tridiagonal; b carries the
/// Dirichlet boundary values.
struct ObstacleProblem {
  double x_lo = 0.0;
  double x_hi = 1.0;
  /// sub[i] couples i to i-1 and super[i] couples i to i+1; sub[0] and
  /// super.back() are the couplings to the Dirichlet values.
  std::vector<double> sub;
  std::vector<double> diag;
  std::vector<double> super;
  std::vector<double> boundary_load;
  StateNonlinearity load = StateNonlinearity::zero();
  std::vector<double> h1;
  std::vector<double> h2;
  /// Dirichlet values at x_lo and x_hi (already folded into boundary_load).
  double left = 0.0;
  double right = 0.0;

  std::size_t size() const { return diag.size(); }
  double h() const { return (x_hi - x_lo) / static_cast<double>(size() + 1); }
  double x(std::size_t i) const { return x_lo + h() * static_cast<double>(i + 1); }

  /// A = tridiag(-1, 2, -1)/(2h^2) on `interior` points of (x_lo, x_hi),
  /// the stiffness of (1/2) int u'v' with lumped mass; Dirichlet values
  /// `left`, `right`. Obstacles default to sentinels.
  static ObstacleProblem half_laplacian(int interior, double x_lo = 0.0, double x_hi = 1.0,
                                        double left = 0.0, double right = 0.0);

  void validate() const;
};

struct VISolution {
  std::vector<double> u;
  int iterations = 0;
  double residual = 0.0;
  /// -1 on the lower contact set, +1 on the upper, 0 elsewhere.
  std::vector<int> contact;
};

/// Largest violation of the complementarity conditions.
double complementarity_residual(const ObstacleProblem& p, const std::vector<double>& u);

/// h * sum u_i (A u)_i.
double energy(const ObstacleProblem& p, const std::vector<double>& u);

std::vector<double> tridiagonal_solve(const std::vector<double>& sub, const std::vector<double>& diag,
                                      const std::vector<double>& super, std::vector<double> rhs);

/// Projected SOR. omega <= 0 picks 2/(1 + sin(pi h)). Nonlinear loads are
/// lagged in an outer loop; throws Divergence if the outer residual grows
/// for 10 consecutive sweeps or the sweep cap is hit.
VISolution solve_vi_psor(const ObstacleProblem& p, double omega = 0.0, double tol = 1e-10,
                         int max_sweeps = 1'000'000);

/// Semismooth Newton on A u = load(u) + b + n(u - h1)^- - n(u - h2)^+.
/// Throws NewtonStagnation when the residual stops decreasing above its
/// roundoff floor.
VISolution solve_vi_penalized(const ObstacleProblem& p, double n, double tol = 1e-10,
                              int max_iterations = 200);

struct ParabolicObstacleProblem {
  /// Spatial operator, grid and Dirichlet coupling. boundary_load is
  /// recomputed per time from `boundary`; load and obstacles here are unused.
  ObstacleProblem space;
  double horizon = 1.0;
  int steps = 100;
  double theta = 0.5;
  std::function<double(double t, double x)> running = [](double, double) { return 0.0; };
  std::function<double(double t, double x)> lower;
  std::function<double(double t, double x)> upper;
  std::function<double(double x)> terminal;
  /// Dirichlet data at x_lo and x_hi.
  std::function<double(double t, double x)> boundary = [](double, double) { return 0.0; };
  /// A(t) = scale(t) * A; must stay within fixed positive bounds.
  std::function<double(double t)> form_scale = [](double) { return 1.0; };
};

struct ParabolicSolution {
  std::vector<double> t;
  std::vector<double> x;
  /// u[k][i] at (t_k, x_i), interior points only.
  std::vector<std::vector<double>> u;
  /// Steps redone with theta = 1 after a sign-alternating time increment.
  int fallback_steps = 0;

  /// Linear interpolation in x at time index k.
  double value_at(int k, double x) const;
};

ParabolicSolution solve_parabolic_vi(const ParabolicObstacleProblem& p, double tol = 1e-10);

}  // namespace rbsdelab
