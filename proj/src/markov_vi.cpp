#include "rbsdelab/markov_vi.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>

#include "rbsdelab/errors.hpp"

namespace rbsdelab {

StateNonlinearity StateNonlinearity::zero() {
  StateNonlinearity s;
  s.fn = [](std::size_t, double) { return 0.0; };
  s.affine = true;
  return s;
}

StateNonlinearity StateNonlinearity::affine_in_y(std::vector<double> intercept, double slope) {
  StateNonlinearity s;
  auto b = std::make_shared<const std::vector<double>>(std::move(intercept));
  s.fn = [b, slope](std::size_t i, double y) { return (*b)[i] + slope * y; };
  s.mu = slope;
  s.affine = true;
  s.slope = slope;
  return s;
}

StateNonlinearity StateNonlinearity::general(std::function<double(std::size_t, double)> fn,
                                             double mu) {
  StateNonlinearity s;
  s.fn = std::move(fn);
  s.mu = mu;
  return s;
}

// ---------------------------------------------------------------------------

MarkovScenario MarkovScenario::killed_walk(int interior, double lo, double hi, double laziness) {
  if (interior < 1) throw ConfigError("killed walk needs at least one interior state");
  if (!(laziness > 0.0 && laziness <= 1.0)) throw ConfigError("laziness must lie in (0, 1]");
  MarkovScenario s;
  const std::size_t m = static_cast<std::size_t>(interior) + 2;
  const double h = (hi - lo) / (interior + 1);
  s.dt = laziness * h * h;
  s.x.resize(m);
  s.transitions.resize(m);
  s.absorbing.assign(m, false);
  for (std::size_t j = 0; j < m; ++j) {
    s.x[j] = lo + h * static_cast<double>(j);
    if (j == 0 || j == m - 1) {
      s.absorbing[j] = true;
      s.transitions[j] = {{j, 1.0}};
      continue;
    }
    s.transitions[j] = {{j - 1, 0.5 * laziness}, {j + 1, 0.5 * laziness}};
    if (laziness < 1.0) s.transitions[j].push_back({j, 1.0 - laziness});
  }
  s.g.assign(m, 0.0);
  s.h1.assign(m, -kSentinel);
  s.h2.assign(m, kSentinel);
  s.psi.assign(m, 0.0);
  s.terminal.assign(m, 0.0);
  return s;
}

MarkovScenario MarkovScenario::lattice_walk(int half_width, double x0, double h, double dt) {
  if (half_width < 1) throw ConfigError("lattice walk needs half_width >= 1");
  MarkovScenario s;
  const std::size_t m = 2 * static_cast<std::size_t>(half_width) + 1;
  s.dt = dt;
  s.x.resize(m);
  s.transitions.resize(m);
  s.absorbing.assign(m, false);
  for (std::size_t j = 0; j < m; ++j) {
    s.x[j] = x0 + h * (static_cast<double>(j) - half_width);
    if (j == 0 || j == m - 1) {
      s.absorbing[j] = true;
      s.transitions[j] = {{j, 1.0}};
    } else {
      s.transitions[j] = {{j - 1, 0.5}, {j + 1, 0.5}};
    }
  }
  s.g.assign(m, 0.0);
  s.h1.assign(m, -kSentinel);
  s.h2.assign(m, kSentinel);
  s.psi.assign(m, 0.0);
  s.terminal.assign(m, 0.0);
  return s;
}

void MarkovScenario::set_data(const std::function<double(double)>& g_fn,
                              const std::function<double(double)>& h1_fn,
                              const std::function<double(double)>& h2_fn,
                              const std::function<double(double)>& psi_fn,
                              const std::function<double(double)>& terminal_fn) {
  for (std::size_t i = 0; i < size(); ++i) {
    if (g_fn) g[i] = g_fn(x[i]);
    if (h1_fn) h1[i] = h1_fn(x[i]);
    if (h2_fn) h2[i] = h2_fn(x[i]);
    if (psi_fn) psi[i] = psi_fn(x[i]);
    if (terminal_fn) terminal[i] = terminal_fn(x[i]);
  }
}

void MarkovScenario::validate() const {
  const std::size_t m = size();
  if (transitions.size() != m || absorbing.size() != m || g.size() != m || h1.size() != m ||
      h2.size() != m || psi.size() != m || terminal.size() != m) {
    throw ConfigError("Markov scenario arrays have inconsistent lengths");
  }
  if (!(dt > 0.0)) throw ConfigError("Markov scenario needs dt > 0");
  for (std::size_t i = 0; i < m; ++i) {
    double total = 0.0;
    for (const auto& t : transitions[i]) {
      if (t.to >= m || t.prob < 0.0) {
        throw ConfigError("bad transition out of state " + std::to_string(i));
      }
      total += t.prob;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ConfigError("transition row " + std::to_string(i) + " does not sum to one");
    }
    if (absorbing[i]) {
      for (const auto& t : transitions[i]) {
        if (t.to != i && t.prob > 0.0) {
          throw ConfigError("absorbing state " + std::to_string(i) + " has an exit");
        }
      }
      continue;
    }
    if (h1[i] > h2[i]) throw BarrierCrossing("h1 > h2 at state " + std::to_string(i));
    if (terminal[i] < h1[i] || terminal[i] > h2[i]) {
      throw TerminalViolation("terminal value outside [h1, h2] at state " + std::to_string(i));
    }
  }
}

namespace {

struct RowSplit {
  double rest = 0.0;
  double self = 0.0;
};

RowSplit split_row(const MarkovScenario& s, std::size_t i, const std::vector<double>& u) {
  RowSplit r;
  for (const auto& t : s.transitions[i]) {
    if (t.to == i) {
      r.self += t.prob;
    } else {
      r.rest += t.prob * u[t.to];
    }
  }
  return r;
}

// Root of y = e + (g_i + fhat(i, y)) * dt.
double chain_root(const MarkovScenario& s, std::size_t i, double e, double dt,
                  const RootOptions& root) {
  if (s.fhat.affine) {
    return (e + (s.g[i] + s.fhat(i, 0.0)) * dt) / (1.0 - s.fhat.slope * dt);
  }
  return implicit_step(e, [&](double y) { return s.g[i] + s.fhat(i, y); }, dt, root);
}

template <class Update>
MarkovValue gauss_seidel(const MarkovScenario& s, const ChainSolveOptions& opts, Update update) {
  MarkovValue out;
  out.u.assign(s.size(), 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    out.u[i] = s.absorbing[i] ? s.psi[i] : std::clamp(0.0, s.h1[i], s.h2[i]);
  }
  for (out.sweeps = 1; out.sweeps <= opts.max_sweeps; ++out.sweeps) {
    double change = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.absorbing[i]) continue;
      const RowSplit r = split_row(s, i, out.u);
      const double stay = 1.0 - r.self;
      if (!(stay > 0.0)) throw NonTransient("state " + std::to_string(i) + " never moves");
      const double next = update(i, r.rest / stay, s.dt / stay, out.u[i]);
      change = std::max(change, std::abs(next - out.u[i]));
      out.u[i] = next;
    }
    out.last_change = change;
    if (change <= opts.tol) return out;
  }
  std::ostringstream msg;
  msg << "chain fixed point not reached in " << opts.max_sweeps << " sweeps (last change "
      << out.last_change << ")";
  throw NonTransient(msg.str());
}

}  // namespace

MarkovValue value_function(const MarkovScenario& s, const ChainSolveOptions& opts) {
  s.validate();
  return gauss_seidel(s, opts, [&](std::size_t i, double e, double dt, double current) {
    if (s.fhat.mu * dt >= 1.0) throw StepTooLarge("fhat mu*dt >= 1 in chain update");
    const double y = chain_root(s, i, e, dt, opts.root);
    return std::clamp(current + opts.omega * (y - current), s.h1[i], s.h2[i]);
  });
}

std::vector<std::vector<double>> value_function_horizon(const MarkovScenario& s, int steps,
                                                        const RootOptions& root) {
  s.validate();
  if (s.fhat.mu * s.dt >= 1.0) throw StepTooLarge("fhat mu*dt >= 1 in chain update");
  std::vector<std::vector<double>> u(steps + 1, std::vector<double>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) u[steps][i] = s.absorbing[i] ? s.psi[i] : s.terminal[i];
  for (int k = steps - 1; k >= 0; --k) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.absorbing[i]) {
        u[k][i] = s.psi[i];
        continue;
      }
      double e = 0.0;
      for (const auto& t : s.transitions[i]) e += t.prob * u[k + 1][t.to];
      u[k][i] = std::clamp(chain_root(s, i, e, s.dt, root), s.h1[i], s.h2[i]);
    }
  }
  return u;
}

MarkovValue markov_penalized(const MarkovScenario& s, double n, const std::vector<double>& eta,
                             PenaltyMode mode, const ChainSolveOptions& opts) {
  s.validate();
  if (eta.size() != s.size()) throw ConfigError("eta must have one value per state");
  for (double e : eta) {
    if (!(e > 0.0)) throw ConfigError("penalty weight eta must be strictly positive");
  }
  const bool lower = mode != PenaltyMode::upper;
  const bool upper = mode != PenaltyMode::lower;
  return gauss_seidel(s, opts, [&](std::size_t i, double e, double dt, double current) {
    auto f = [&](double y) {
      double v = s.g[i] + s.fhat(i, y);
      if (lower) v += n * eta[i] * std::max(s.h1[i] - y, 0.0);
      if (upper) v -= n * eta[i] * std::max(y - s.h2[i], 0.0);
      return v;
    };
    const double y = implicit_step(e, f, dt, opts.root);
    return current + opts.omega * (y - current);
  });
}

UnrolledChain unroll_chain(const MarkovScenario& s, int steps, std::size_t start,
                           std::size_t max_nodes) {
  s.validate();
  if (start >= s.size()) throw ConfigError("start state out of range");
  std::vector<NodeSpec> specs{{0, 0, kNoParent, 1.0}};
  std::vector<std::size_t> state{start};
  for (std::size_t head = 0; head < specs.size(); ++head) {
    if (specs[head].layer == steps) continue;
    for (const auto& t : s.transitions[state[head]]) {
      if (t.prob <= 0.0) continue;
      if (specs.size() >= max_nodes) {
        throw BudgetExceeded("unrolled chain exceeds " + std::to_string(max_nodes) + " nodes");
      }
      specs.push_back({specs.size(), specs[head].layer + 1, head, t.prob});
      state.push_back(t.to);
    }
  }
  FiltrationTree tree = FiltrationTree::from_nodes(s.dt, specs);
  const std::size_t size = tree.size();
  AdaptedProcess lo(size);
  AdaptedProcess hi(size);
  AdaptedProcess xi(size);
  for (NodeId n = 0; n < size; ++n) {
    const std::size_t st = state[n];
    lo[n] = s.absorbing[st] ? s.psi[st] : s.h1[st];
    hi[n] = s.absorbing[st] ? s.psi[st] : s.h2[st];
    if (tree.is_leaf(n)) xi[n] = s.absorbing[st] ? s.psi[st] : s.terminal[st];
  }
  auto scenario = std::make_shared<const MarkovScenario>(s);
  auto states = std::make_shared<const std::vector<std::size_t>>(state);
  Generator f(
      [scenario, states](int, NodeId n, double y) {
        const std::size_t st = (*states)[n];
        if (scenario->absorbing[st]) return 0.0;
        return scenario->g[st] + scenario->fhat(st, y);
      },
      s.fhat.mu, "chain g + fhat");
  return UnrolledChain{std::move(tree), std::move(state), BarrierPair{lo, hi}, xi, f};
}

FukushimaResult fukushima_bookkeeping(const MarkovScenario& s, const std::vector<double>& u,
                                      int steps, std::size_t start, double tol) {
  if (u.size() != s.size()) throw ConfigError("u must have one value per state");
  UnrolledChain chain = unroll_chain(s, steps, start);
  const FiltrationTree& tree = chain.tree;
  AdaptedProcess ux(tree.size());
  for (NodeId n = 0; n < tree.size(); ++n) ux[n] = u[chain.state[n]];
  DoobDecomposition parts = doob_decompose(tree, ux);
  AdaptedProcess gamma(tree.size());
  for (NodeId c = 1; c < tree.size(); ++c) {
    const NodeId p = tree.parent(c);
    const double da_dm = parts.predictable_increments[c] + parts.martingale_increments[c];
    gamma[c] = -da_dm - chain.f(tree.layer(p), p, ux[p]) * tree.dt();
  }
  for (NodeId leaf : tree.leaves()) chain.xi[leaf] = ux[leaf];
  VerdictReport report = verify_solution(tree, ux, chain.f, chain.xi, chain.barriers, tol);
  return FukushimaResult{std::move(chain), std::move(ux), std::move(parts), std::move(gamma),
                         std::move(report)};
}

// ---------------------------------------------------------------------------

ObstacleProblem ObstacleProblem::half_laplacian(int interior, double x_lo, double x_hi,
                                                double left, double right) {
  if (interior < 1) throw ConfigError("obstacle problem needs at least one interior point");
  if (!(x_hi > x_lo)) throw ConfigError("obstacle problem needs x_lo < x_hi");
  ObstacleProblem p;
  p.x_lo = x_lo;
  p.x_hi = x_hi;
  p.left = left;
  p.right = right;
  const std::size_t m = static_cast<std::size_t>(interior);
  const double h = (x_hi - x_lo) / (interior + 1);
  const double c = 1.0 / (2.0 * h * h);
  p.sub.assign(m, -c);
  p.diag.assign(m, 2.0 * c);
  p.super.assign(m, -c);
  p.boundary_load.assign(m, 0.0);
  p.boundary_load[0] += c * left;
  p.boundary_load[m - 1] += c * right;
  p.h1.assign(m, -kSentinel);
  p.h2.assign(m, kSentinel);
  return p;
}

void ObstacleProblem::validate() const {
  const std::size_t m = size();
  if (m == 0 || sub.size() != m || super.size() != m || boundary_load.size() != m ||
      h1.size() != m || h2.size() != m) {
    throw ConfigError("obstacle problem arrays have inconsistent lengths");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (h1[i] > h2[i]) throw BarrierCrossing("h1 > h2 at grid point " + std::to_string(i));
    if (!(diag[i] > 0.0)) throw ConfigError("stiffness diagonal must be positive");
  }
}

namespace {

double apply_row(const std::vector<double>& sub, const std::vector<double>& diag,
                 const std::vector<double>& super, const std::vector<double>& u, std::size_t i) {
  double v = diag[i] * u[i];
  if (i > 0) v += sub[i] * u[i - 1];
  if (i + 1 < u.size()) v += super[i] * u[i + 1];
  return v;
}

double box_violation(double r, double u, double lo, double hi) {
  double v = std::max({lo - u, u - hi, 0.0});
  const bool at_lo = u <= lo;
  const bool at_hi = u >= hi;
  if (at_lo && at_hi) return v;
  if (at_lo) return std::max(v, -r);
  if (at_hi) return std::max(v, r);
  return std::max(v, std::abs(r));
}

// max over i of the complementarity violation of M u = rhs on [lo, hi].
double box_residual(const std::vector<double>& sub, const std::vector<double>& diag,
                    const std::vector<double>& super, const std::vector<double>& rhs,
                    const std::vector<double>& lo, const std::vector<double>& hi,
                    const std::vector<double>& u) {
  double worst = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double r = apply_row(sub, diag, super, u, i) - rhs[i];
    worst = std::max(worst, box_violation(r, u[i], lo[i], hi[i]));
  }
  return worst;
}

// Projected SOR for M u = rhs on the box; u holds the start value.
int psor_box(const std::vector<double>& sub, const std::vector<double>& diag,
             const std::vector<double>& super, const std::vector<double>& rhs,
             const std::vector<double>& lo, const std::vector<double>& hi, std::vector<double>& u,
             double omega, double tol, int max_sweeps) {
  const std::size_t m = u.size();
  for (std::size_t i = 0; i < m; ++i) u[i] = std::clamp(u[i], lo[i], hi[i]);
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    for (std::size_t i = 0; i < m; ++i) {
      double off = 0.0;
      if (i > 0) off += sub[i] * u[i - 1];
      if (i + 1 < m) off += super[i] * u[i + 1];
      const double gs = (rhs[i] - off) / diag[i];
      u[i] = std::clamp(u[i] + omega * (gs - u[i]), lo[i], hi[i]);
    }
    if ((sweep % 8 == 0 || sweep == max_sweeps) &&
        box_residual(sub, diag, super, rhs, lo, hi, u) <= tol) {
      return sweep;
    }
  }
  return -1;
}

std::vector<int> contact_flags(const ObstacleProblem& p, const std::vector<double>& u) {
  std::vector<int> c(u.size(), 0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u[i] <= p.h1[i]) {
      c[i] = -1;
    } else if (u[i] >= p.h2[i]) {
      c[i] = 1;
    }
  }
  return c;
}

double load_slope(const ObstacleProblem& p, std::size_t i, double u) {
  if (p.load.affine) return p.load.slope;
  const double step = 1e-7 * (1.0 + std::abs(u));
  return (p.load(i, u + step) - p.load(i, u - step)) / (2.0 * step);
}

}  // namespace

double complementarity_residual(const ObstacleProblem& p, const std::vector<double>& u) {
  double worst = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double r = apply_row(p.sub, p.diag, p.super, u, i) - p.load(i, u[i]) - p.boundary_load[i];
    worst = std::max(worst, box_violation(r, u[i], p.h1[i], p.h2[i]));
  }
  return worst;
}

double energy(const ObstacleProblem& p, const std::vector<double>& u) {
  double e = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) e += u[i] * apply_row(p.sub, p.diag, p.super, u, i);
  return p.h() * e;
}

std::vector<double> tridiagonal_solve(const std::vector<double>& sub, const std::vector<double>& diag,
                                      const std::vector<double>& super, std::vector<double> rhs) {
  const std::size_t m = diag.size();
  std::vector<double> c(m);
  double denom = diag[0];
  c[0] = m > 1 ? super[0] / denom : 0.0;
  rhs[0] /= denom;
  for (std::size_t i = 1; i < m; ++i) {
    denom = diag[i] - sub[i] * c[i - 1];
    if (denom == 0.0) throw SolverError("singular tridiagonal system");
    c[i] = i + 1 < m ? super[i] / denom : 0.0;
    rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / denom;
  }
  for (std::size_t i = m - 1; i-- > 0;) rhs[i] -= c[i] * rhs[i + 1];
  return rhs;
}

VISolution solve_vi_psor(const ObstacleProblem& p, double omega, double tol, int max_sweeps) {
  p.validate();
  const std::size_t m = p.size();
  if (omega <= 0.0) omega = 2.0 / (1.0 + std::sin(std::numbers::pi * p.h() / (p.x_hi - p.x_lo)));
  if (!(omega > 0.0 && omega < 2.0)) throw ConfigError("PSOR relaxation must lie in (0, 2)");
  VISolution out;
  out.u.assign(m, 0.0);

  if (p.load.affine) {
    std::vector<double> diag = p.diag;
    std::vector<double> rhs(m);
    for (std::size_t i = 0; i < m; ++i) {
      diag[i] -= p.load.slope;
      rhs[i] = p.load(i, 0.0) + p.boundary_load[i];
    }
    const int sweeps = psor_box(p.sub, diag, p.super, rhs, p.h1, p.h2, out.u, omega, tol, max_sweeps);
    if (sweeps < 0) throw Divergence("PSOR did not reach the tolerance within the sweep cap");
    out.iterations = sweeps;
  } else {
    // Outer loop lags the nonlinear load.
    double previous = std::numeric_limits<double>::infinity();
    int growth = 0;
    std::vector<double> rhs(m);
    for (int outer = 1;; ++outer) {
      for (std::size_t i = 0; i < m; ++i) rhs[i] = p.load(i, out.u[i]) + p.boundary_load[i];
      const int sweeps =
          psor_box(p.sub, p.diag, p.super, rhs, p.h1, p.h2, out.u, omega, 0.1 * tol, max_sweeps);
      if (sweeps < 0) throw Divergence("inner PSOR did not reach the tolerance");
      out.iterations += sweeps;
      const double res = complementarity_residual(p, out.u);
      if (res <= tol) break;
      growth = res > previous ? growth + 1 : 0;
      if (growth >= 10) throw Divergence("PSOR outer residual grew for 10 consecutive sweeps");
      if (out.iterations > max_sweeps) throw Divergence("PSOR sweep cap reached");
      previous = res;
    }
  }
  out.residual = complementarity_residual(p, out.u);
  out.contact = contact_flags(p, out.u);
  return out;
}

VISolution solve_vi_penalized(const ObstacleProblem& p, double n, double tol, int max_iterations) {
  p.validate();
  const std::size_t m = p.size();
  auto residual = [&](const std::vector<double>& u, std::vector<double>& r) {
    double worst = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      r[i] = apply_row(p.sub, p.diag, p.super, u, i) - p.load(i, u[i]) - p.boundary_load[i] -
             n * std::max(p.h1[i] - u[i], 0.0) + n * std::max(u[i] - p.h2[i], 0.0);
      worst = std::max(worst, std::abs(r[i]));
    }
    return worst;
  };
  VISolution out;
  out.u.assign(m, 0.0);
  std::vector<double> r(m);
  std::vector<double> trial(m);
  std::vector<double> trial_r(m);
  double norm = residual(out.u, r);
  int stalled = 0;
  for (out.iterations = 0; norm > tol; ++out.iterations) {
    if (out.iterations >= max_iterations) {
      std::ostringstream msg;
      msg << "penalized Newton hit the iteration cap with residual " << std::scientific << norm;
      throw NewtonStagnation(msg.str());
    }
    std::vector<double> jd(m);
    for (std::size_t i = 0; i < m; ++i) {
      jd[i] = p.diag[i] - load_slope(p, i, out.u[i]);
      if (out.u[i] < p.h1[i]) jd[i] += n;
      if (out.u[i] > p.h2[i]) jd[i] += n;
    }
    std::vector<double> minus_r(m);
    for (std::size_t i = 0; i < m; ++i) minus_r[i] = -r[i];
    const std::vector<double> step = tridiagonal_solve(p.sub, jd, p.super, minus_r);
    double t = 1.0;
    double trial_norm = 0.0;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
      for (std::size_t i = 0; i < m; ++i) trial[i] = out.u[i] + t * step[i];
      trial_norm = residual(trial, trial_r);
      if (trial_norm < (1.0 - 1e-4 * t) * norm) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // At the roundoff floor of the residual evaluation the step cannot help.
      double floor = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        double mag = std::abs(p.diag[i] * out.u[i]) + std::abs(p.load(i, out.u[i])) +
                     std::abs(p.boundary_load[i]);
        if (i > 0) mag += std::abs(p.sub[i] * out.u[i - 1]);
        if (i + 1 < m) mag += std::abs(p.super[i] * out.u[i + 1]);
        if (out.u[i] < p.h1[i]) mag += n * (std::abs(out.u[i]) + std::abs(p.h1[i]));
        if (out.u[i] > p.h2[i]) mag += n * (std::abs(out.u[i]) + std::abs(p.h2[i]));
        floor = std::max(floor, 64.0 * std::numeric_limits<double>::epsilon() * mag);
      }
      if (norm <= floor) break;
      if (++stalled >= 3) {
        std::ostringstream msg;
        msg << "penalized Newton stagnated at residual " << std::scientific << norm;
        throw NewtonStagnation(msg.str());
      }
      continue;
    }
    stalled = 0;
    out.u.swap(trial);
    r.swap(trial_r);
    norm = trial_norm;
  }
  out.residual = norm;
  out.contact = contact_flags(p, out.u);
  return out;
}

// ---------------------------------------------------------------------------

double ParabolicSolution::value_at(int k, double xq) const {
  const auto& row = u[k];
  if (xq <= x.front()) return row.front();
  if (xq >= x.back()) return row.back();
  const std::size_t j = std::upper_bound(x.begin(), x.end(), xq) - x.begin();
  const double w = (xq - x[j - 1]) / (x[j] - x[j - 1]);
  return (1.0 - w) * row[j - 1] + w * row[j];
}

ParabolicSolution solve_parabolic_vi(const ParabolicObstacleProblem& p, double tol) {
  const ObstacleProblem& sp = p.space;
  const std::size_t m = sp.size();
  if (m == 0 || sp.sub.size() != m || sp.super.size() != m) {
    throw ConfigError("parabolic problem needs a spatial operator");
  }
  if (!(p.theta >= 0.5 && p.theta <= 1.0)) throw ConfigError("theta must lie in [1/2, 1]");
  if (p.steps < 1 || !(p.horizon > 0.0)) throw ConfigError("parabolic problem needs a time grid");
  if (!p.lower || !p.upper || !p.terminal) {
    throw ConfigError("parabolic problem needs obstacles and terminal data");
  }
  const double dt = p.horizon / p.steps;
  ParabolicSolution sol;
  sol.t.resize(p.steps + 1);
  for (int k = 0; k <= p.steps; ++k) sol.t[k] = k * dt;
  sol.x.resize(m);
  for (std::size_t i = 0; i < m; ++i) sol.x[i] = sp.x(i);
  sol.u.assign(p.steps + 1, std::vector<double>(m));

  const double left_coupling = -sp.sub[0];
  const double right_coupling = -sp.super[m - 1];
  auto forcing = [&](double t, std::vector<double>& out) {
    const double scale = p.form_scale(t);
    for (std::size_t i = 0; i < m; ++i) out[i] = p.running(t, sol.x[i]);
    out[0] += scale * left_coupling * p.boundary(t, sp.x_lo);
    out[m - 1] += scale * right_coupling * p.boundary(t, sp.x_hi);
  };

  auto& last = sol.u[p.steps];
  for (std::size_t i = 0; i < m; ++i) {
    last[i] = p.terminal(sol.x[i]);
    const double lo = p.lower(p.horizon, sol.x[i]);
    const double hi = p.upper(p.horizon, sol.x[i]);
    if (lo > hi) throw BarrierCrossing("obstacles cross at the horizon");
    if (last[i] < lo - 1e-12 || last[i] > hi + 1e-12) {
      throw TerminalViolation("terminal datum outside the obstacles at x = " +
                              std::to_string(sol.x[i]));
    }
  }

  std::vector<double> f_now(m), f_next(m), rhs(m), lo(m), hi(m);
  std::vector<double> msub(m), mdiag(m), msuper(m);
  std::vector<double> inc_prev, inc_prev2;
  const double omega = 1.2;
  for (int k = p.steps - 1; k >= 0; --k) {
    const double t = sol.t[k];
    const double t_next = sol.t[k + 1];
    const double s_now = p.form_scale(t);
    const double s_next = p.form_scale(t_next);
    forcing(t, f_now);
    forcing(t_next, f_next);
    for (std::size_t i = 0; i < m; ++i) {
      lo[i] = p.lower(t, sol.x[i]);
      hi[i] = p.upper(t, sol.x[i]);
      if (lo[i] > hi[i]) throw BarrierCrossing("obstacles cross at t = " + std::to_string(t));
    }
    const auto& next = sol.u[k + 1];
    auto solve_step = [&](double theta) {
      for (std::size_t i = 0; i < m; ++i) {
        const double a_next = s_next * apply_row(sp.sub, sp.diag, sp.super, next, i);
        rhs[i] = next[i] - (1.0 - theta) * dt * a_next +
                 dt * (theta * f_now[i] + (1.0 - theta) * f_next[i]);
        msub[i] = theta * dt * s_now * sp.sub[i];
        mdiag[i] = 1.0 + theta * dt * s_now * sp.diag[i];
        msuper[i] = theta * dt * s_now * sp.super[i];
      }
      std::vector<double> u = next;
      if (psor_box(msub, mdiag, msuper, rhs, lo, hi, u, omega, tol, 1'000'000) < 0) {
        throw Divergence("PSOR failed in the time step at t = " + std::to_string(t));
      }
      return u;
    };
    std::vector<double> u = solve_step(p.theta);
    std::vector<double> inc(m);
    for (std::size_t i = 0; i < m; ++i) inc[i] = u[i] - next[i];
    if (p.theta < 1.0) {
      constexpr double kNoise = 1e-9;
      bool flip = false;
      // Sign flips in two consecutive time increments at one node.
      if (!inc_prev2.empty()) {
        for (std::size_t i = 0; i < m && !flip; ++i) {
          flip = std::abs(inc[i]) > kNoise && std::abs(inc_prev[i]) > kNoise &&
                 std::abs(inc_prev2[i]) > kNoise && inc[i] * inc_prev[i] < 0.0 &&
                 inc_prev[i] * inc_prev2[i] < 0.0;
        }
      }
      // New extrema that the implicit step could not produce: the theta = 1
      // solution stays within the range of the previous layer, the boundary
      // data and dt * |running|, up to the obstacle projection.
      if (!flip) {
        double run = 0.0;
        for (std::size_t i = 0; i < m; ++i) run = std::max(run, std::abs(p.running(t, sol.x[i])));
        double vmin = std::min(p.boundary(t, sp.x_lo), p.boundary(t, sp.x_hi));
        double vmax = std::max(p.boundary(t, sp.x_lo), p.boundary(t, sp.x_hi));
        for (double v : next) {
          vmin = std::min(vmin, v);
          vmax = std::max(vmax, v);
        }
        vmin -= dt * run + kNoise;
        vmax += dt * run + kNoise;
        for (std::size_t i = 0; i < m && !flip; ++i) {
          flip = u[i] < std::min(vmin, hi[i]) || u[i] > std::max(vmax, lo[i]);
        }
      }
      if (flip) {
        u = solve_step(1.0);
        for (std::size_t i = 0; i < m; ++i) inc[i] = u[i] - next[i];
        ++sol.fallback_steps;
      }
    }
    inc_prev2 = std::move(inc_prev);
    inc_prev = std::move(inc);
    sol.u[k] = std::move(u);
  }
  return sol;
}

}  // namespace rbsdelab
