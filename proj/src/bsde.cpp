#include "rbsdelab/bsde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "rbsdelab/errors.hpp"

namespace rbsdelab {

Generator Generator::constant(double c) {
  std::ostringstream d;
  d << "const " << c;
  return Generator([c](int, NodeId, double) { return c; }, 0.0, d.str());
}

Generator Generator::linear(double a, double b) {
  std::ostringstream d;
  d << "linear " << a << "*y + " << b;
  return Generator([a, b](int, NodeId, double y) { return a * y + b; }, a, d.str());
}

Generator Generator::affine(double a, AdaptedProcess b) {
  std::ostringstream d;
  d << "affine " << a << "*y + b(node)";
  auto shared = std::make_shared<const AdaptedProcess>(std::move(b));
  return Generator([a, shared](int, NodeId n, double y) { return a * y + (*shared)[n]; }, a,
                   d.str());
}

Generator Generator::monotone_poly(double a, double b, std::vector<double> odd_coeffs) {
  for (double c : odd_coeffs) {
    if (c < 0.0) throw NonMonotoneGenerator("monotone_poly needs nonnegative odd coefficients");
  }
  std::ostringstream d;
  d << "monotone_poly a=" << a << " b=" << b << " terms=" << odd_coeffs.size();
  return Generator(
      [a, b, c = std::move(odd_coeffs)](int, NodeId, double y) {
        double v = b + a * y;
        double p = y;
        for (double cj : c) {
          v -= cj * p;
          p *= y * y;
        }
        return v;
      },
      a, d.str());
}

Generator Generator::tabulated(std::vector<double> y_grid,
                               std::vector<std::vector<double>> per_node) {
  if (y_grid.size() < 2) throw ConfigError("tabulated generator needs at least two y values");
  for (std::size_t i = 1; i < y_grid.size(); ++i) {
    if (!(y_grid[i] > y_grid[i - 1])) throw ConfigError("tabulated y grid must increase");
  }
  double mu = -std::numeric_limits<double>::infinity();
  for (const auto& row : per_node) {
    if (row.size() != y_grid.size()) throw ConfigError("tabulated row has wrong length");
    for (std::size_t i = 1; i < row.size(); ++i) {
      mu = std::max(mu, (row[i] - row[i - 1]) / (y_grid[i] - y_grid[i - 1]));
    }
  }
  if (per_node.empty()) mu = 0.0;
  auto grid = std::make_shared<const std::vector<double>>(std::move(y_grid));
  auto table = std::make_shared<const std::vector<std::vector<double>>>(std::move(per_node));
  return Generator(
      [grid, table](int, NodeId n, double y) {
        const auto& g = *grid;
        const auto& row = table->at(n);
        std::size_t i = std::upper_bound(g.begin(), g.end(), y) - g.begin();
        i = std::clamp<std::size_t>(i, 1, g.size() - 1);
        const double w = (y - g[i - 1]) / (g[i] - g[i - 1]);
        return row[i - 1] + w * (row[i] - row[i - 1]);
      },
      mu, "tabulated");
}

Generator Generator::frozen(AdaptedProcess running) {
  auto shared = std::make_shared<const AdaptedProcess>(std::move(running));
  return Generator([shared](int, NodeId n, double) { return (*shared)[n]; }, 0.0, "frozen");
}

AdaptedProcess Generator::freeze(const FiltrationTree& tree, const AdaptedProcess& y) const {
  AdaptedProcess out(tree.size());
  for (NodeId n = 0; n < tree.size(); ++n) out[n] = fn_(tree.layer(n), n, y[n]);
  return out;
}

Generator Generator::plus(Fn extra, double extra_mu, const std::string& what) const {
  Fn base = fn_;
  return Generator(
      [base, extra = std::move(extra)](int k, NodeId n, double y) {
        return base(k, n, y) + extra(k, n, y);
      },
      mu_ + extra_mu, description_ + " + " + what);
}

void Generator::check_monotone(int layer, NodeId node, double lo, double hi) const {
  constexpr int kSamples = 21;
  double prev = 0.0;
  for (int i = 0; i < kSamples; ++i) {
    const double y = lo + (hi - lo) * i / (kSamples - 1);
    const double v = fn_(layer, node, y) - mu_ * y;
    if (i > 0 && v > prev + 1e-9 * (1.0 + std::abs(prev))) {
      std::ostringstream msg;
      msg << "generator '" << description_ << "' violates monotonicity with mu=" << mu_
          << " at layer " << layer << ", node " << node << ", y=" << y;
      throw NonMonotoneGenerator(msg.str());
    }
    prev = v;
  }
}

// ---------------------------------------------------------------------------

double implicit_step(double expectation, const std::function<double(double)>& f, double dt,
                     const RootOptions& opts, double* residual) {
  // g is strictly decreasing when the generator is monotone with mu*dt < 1.
  auto g = [&](double y) { return expectation + f(y) * dt - y; };
  const double half = std::abs(f(expectation)) * dt + 1.0;
  double lo = expectation - half;
  double hi = expectation + half;
  double glo = g(lo);
  double ghi = g(hi);
  int expansions = 0;
  while (!(glo >= 0.0 && ghi <= 0.0)) {
    if (glo < ghi) {
      std::ostringstream msg;
      msg << "implicit step is not decreasing on [" << lo << ", " << hi << "]";
      throw NonMonotoneGenerator(msg.str());
    }
    if (++expansions > opts.max_expansions) {
      std::ostringstream msg;
      msg << "root not bracketed after " << opts.max_expansions << " expansions around "
          << expectation;
      throw RootNotBracketed(msg.str());
    }
    const double width = hi - lo;
    if (glo < 0.0) {
      lo -= width;
      glo = g(lo);
    }
    if (ghi > 0.0) {
      hi += width;
      ghi = g(hi);
    }
  }
  double mid = 0.5 * (lo + hi);
  double gmid = g(mid);
  for (int it = 0; it < opts.max_bisections && std::abs(gmid) > opts.tol; ++it) {
    if (gmid > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    const double next = 0.5 * (lo + hi);
    if (next == lo || next == hi) break;  // interval exhausted at machine precision
    mid = next;
    gmid = g(mid);
  }
  if (residual) *residual = std::abs(gmid);
  return mid;
}

namespace {

void require_step(const Generator& f, double dt) {
  if (f.mu() * dt >= 1.0) {
    std::ostringstream msg;
    msg << "mu*dt = " << f.mu() * dt << " >= 1: implicit step not uniquely solvable";
    throw StepTooLarge(msg.str());
  }
}

}  // namespace

BsdeSolution solve_bsde(const FiltrationTree& tree, const AdaptedProcess& xi, const Generator& f,
                        const StoppingRule& alpha, const StoppingRule& beta,
                        const RootOptions& opts) {
  require_ordered(alpha, beta, "solve_bsde");
  require_step(f, tree.dt());
  BsdeSolution sol{AdaptedProcess(tree.size()), AdaptedProcess(tree.size()), 0.0};
  const AdaptedProcess terminal = stopped_value(tree, xi, beta);
  const double dt = tree.dt();
  for (int k = tree.depth(); k >= 0; --k) {
    for (NodeId n : tree.layer_nodes(k)) {
      if (beta.stopped_by(n)) {
        sol.y[n] = terminal[n];
        continue;
      }
      const double e = expect_children(tree, sol.y, n);
      auto fy = [&](double y) { return f(k, n, y); };
      if (opts.check_monotone) {
        const double half = std::abs(f(k, n, e)) * dt + 1.0;
        f.check_monotone(k, n, e - half, e + half);
      }
      double res = 0.0;
      sol.y[n] = implicit_step(e, fy, dt, opts, &res);
      sol.max_residual = std::max(sol.max_residual, res);
    }
  }
  sol.martingale_increments = doob_decompose(tree, sol.y).martingale_increments;
  return sol;
}

BsdeSolution solve_bsde(const FiltrationTree& tree, const AdaptedProcess& xi, const Generator& f,
                        const RootOptions& opts) {
  return solve_bsde(tree, xi, f, StoppingRule::at_layer(tree, 0), StoppingRule::terminal(tree),
                    opts);
}

AdaptedProcess f_expectation(const FiltrationTree& tree, const Generator& f,
                             const StoppingRule& alpha, const StoppingRule& beta,
                             const AdaptedProcess& xi, const RootOptions& opts) {
  if (f.mu() > 0.0) {
    throw ConfigError("f-expectation requires a nonincreasing generator (mu <= 0)");
  }
  return stopped_value(tree, solve_bsde(tree, xi, f, alpha, beta, opts).y, alpha);
}

// ---------------------------------------------------------------------------

AdaptedProcess NormalizedProblem::map_back(const FiltrationTree& tree,
                                           const AdaptedProcess& transformed) const {
  AdaptedProcess out(tree.size());
  for (NodeId n = 0; n < tree.size(); ++n) out[n] = transformed[n] / layer_weight[tree.layer(n)];
  return out;
}

NormalizedProblem normalize_generator(const FiltrationTree& tree, const Generator& f, double shift,
                                      const AdaptedProcess& xi, const AdaptedProcess& lower,
                                      const AdaptedProcess& upper, NormalizationKind kind) {
  const double dt = tree.dt();
  const int depth = tree.depth();
  // One extra weight: the discrete transform reads w_{k+1} at layer k.
  std::vector<double> w(depth + 2);
  double mu = 0.0;
  if (kind == NormalizationKind::discrete_exact) {
    const double base = 1.0 + shift * dt;
    if (!(base > 0.0)) throw ConfigError("normalization needs 1 + shift*dt > 0");
    for (int k = 0; k <= depth + 1; ++k) w[k] = std::pow(base, k);
    mu = base * f.mu() - shift;
  } else {
    for (int k = 0; k <= depth + 1; ++k) w[k] = std::exp(shift * k * dt);
    mu = f.mu() - shift;
  }
  const bool exact = kind == NormalizationKind::discrete_exact;
  Generator::Fn fn = [f, w, shift, exact](int k, NodeId n, double y) {
    const double outer = exact ? w[k + 1] : w[k];
    return outer * f(k, n, y / w[k]) - shift * y;
  };
  std::ostringstream d;
  d << "normalized(" << f.description() << ", shift=" << shift << ")";

  auto scale = [&](const AdaptedProcess& x) {
    AdaptedProcess out(tree.size());
    for (NodeId n = 0; n < tree.size(); ++n) out[n] = w[tree.layer(n)] * x[n];
    return out;
  };
  w.resize(depth + 1);
  return NormalizedProblem{Generator(std::move(fn), mu, d.str()), scale(xi), scale(lower),
                           scale(upper), w};
}

}  // namespace rbsdelab
