#pragma once

// Implicit backward solver for non-reflected equations on an event tree,
// the nonlinear f-expectation, and the exponential change of variables.

#include <functional>
#include <string>
#include <vector>

#include "rbsdelab/lattice.hpp"

namespace rbsdelab {

/// f(t_k, node, y) together with a monotonicity constant mu such that
/// y -> f(t_k, node, y) - mu*y is nonincreasing.
class Generator {
 public:
  using Fn = std::function<double(int layer, NodeId node, double y)>;

  Generator(Fn fn, double mu, std::string description)
      : fn_(std::move(fn)), mu_(mu), description_(std::move(description)) {}

  static Generator zero() { return constant(0.0); }
  static Generator constant(double c);
  /// a*y + b; mu = a.
  static Generator linear(double a, double b);
  /// a*y + b(node); mu = a.
  static Generator affine(double a, AdaptedProcess b);
  /// b + a*y - sum_j c_j y^(2j+1) with every c_j >= 0; mu = a.
  static Generator monotone_poly(double a, double b, std::vector<double> odd_coeffs);
  /// Piecewise linear in y on `y_grid` per node (linear extrapolation past
  /// the ends); mu is the steepest segment slope.
  static Generator tabulated(std::vector<double> y_grid, std::vector<std::vector<double>> per_node);
  /// f(t, node, y) = running(node); mu = 0.
  static Generator frozen(AdaptedProcess running);

  double operator()(int layer, NodeId node, double y) const { return fn_(layer, node, y); }
  double mu() const { return mu_; }
  const std::string& description() const { return description_; }

  /// running(n) = f(t_n, n, y(n)).
  AdaptedProcess freeze(const FiltrationTree& tree, const AdaptedProcess& y) const;

  /// f + extra, with monotonicity constant mu + extra_mu.
  Generator plus(Fn extra, double extra_mu, const std::string& what) const;

  /// Samples 21 points on [lo, hi]; throws NonMonotoneGenerator if
  /// f - mu*y increases anywhere on the sample.
  void check_monotone(int layer, NodeId node, double lo, double hi) const;

 private:
  Fn fn_;
  double mu_;
  std::string description_;
};

struct RootOptions {
  double tol = 1e-12;
  int max_expansions = 60;
  int max_bisections = 200;
  bool check_monotone = true;
};

/// Root of y = expectation + f(y)*dt by bracketing then bisection.
/// The bracket starts at expectation -/+ (|f(expectation)|*dt + 1).
double implicit_step(double expectation, const std::function<double(double)>& f, double dt,
                     const RootOptions& opts, double* residual = nullptr);

struct BsdeSolution {
  AdaptedProcess y;
  /// Martingale increments on the layer-(k+1) nodes.
  AdaptedProcess martingale_increments;
  double max_residual = 0.0;
};

/// Y = xi from beta onwards; before beta each node solves
/// y = E[Y_next] + f(t_k, node, y)*dt. alpha only restricts what callers read.
BsdeSolution solve_bsde(const FiltrationTree& tree, const AdaptedProcess& xi, const Generator& f,
                        const StoppingRule& alpha, const StoppingRule& beta,
                        const RootOptions& opts = {});

/// Terminal-horizon convenience overload (alpha = 0, beta = K).
BsdeSolution solve_bsde(const FiltrationTree& tree, const AdaptedProcess& xi, const Generator& f,
                        const RootOptions& opts = {});

/// E^f_{alpha,beta}(xi) as the stopped value Y_alpha (NaN before alpha).
/// Requires mu <= 0.
AdaptedProcess f_expectation(const FiltrationTree& tree, const Generator& f,
                             const StoppingRule& alpha, const StoppingRule& beta,
                             const AdaptedProcess& xi, const RootOptions& opts = {});

enum class NormalizationKind {
  /// weights (1 + a*dt)^k; exact for the implicit scheme.
  discrete_exact,
  /// weights exp(a*t); the continuous-time transform, exact only as dt -> 0.
  continuous,
};

/// Problem data after Y -> w_k * Y with w_k = weight at layer k.
struct NormalizedProblem {
  Generator f;
  AdaptedProcess xi;
  AdaptedProcess lower;
  AdaptedProcess upper;
  std::vector<double> layer_weight;

  /// Y_k = Y^a_k / w_k.
  AdaptedProcess map_back(const FiltrationTree& tree, const AdaptedProcess& transformed) const;
};

/// Rescales (xi, f, L, U) by the shift `a`. With the continuous kind,
/// f^a(t,y) = e^{at} f(t, e^{-at} y) - a*y; the discrete kind uses the
/// grid-exact weights. Choosing a = mu/(1 - mu*dt) (discrete) or a = mu
/// (continuous) leaves a nonincreasing generator.
NormalizedProblem normalize_generator(const FiltrationTree& tree, const Generator& f, double shift,
                                      const AdaptedProcess& xi, const AdaptedProcess& lower,
                                      const AdaptedProcess& upper,
                                      NormalizationKind kind = NormalizationKind::discrete_exact);

}  // namespace rbsdelab
