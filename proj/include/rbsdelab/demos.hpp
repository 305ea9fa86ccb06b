#pragma once

// Two deterministic reference problems on chains: barriers that oscillate
// into a pinch point, and a cone that closes at t = 1.

#include "rbsdelab/lattice.hpp"
#include "rbsdelab/reflected.hpp"

namespace rbsdelab {

/// Grid t_k = k/n on [0, 2]; L = (1-t) cos(pi/(1-t)) and U = L + (1-t)/2
/// before t = 1, L = 0 and U = 1 from t = 1 on; f = 0, xi = 0.
struct OscillatingBarrierDemo {
  FiltrationTree tree;
  BarrierPair barriers;
  AdaptedProcess xi;
  AdaptedProcess y;
  /// sum_{t_k < 1} |Y_{k+1} - Y_k|.
  double total_variation = 0.0;
};

OscillatingBarrierDemo oscillating_barrier_demo(int n);

/// 20 steps of 0.1; L = -t, U = t before t = 1 and L = U = 0 afterwards;
/// f = 0, xi = 0. The true solution is Y = 0.
struct PinchedConeDemo {
  FiltrationTree tree;
  BarrierPair barriers;
  AdaptedProcess xi;

  /// Y = t up to `level`, then `level` until t = 1, then 0. Stays inside the
  /// barriers but jumps down at the pinch.
  AdaptedProcess plateau_candidate(double level) const;
};

PinchedConeDemo pinched_cone_demo();

}  // namespace rbsdelab
