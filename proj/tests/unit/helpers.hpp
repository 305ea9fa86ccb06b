#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "rbsdelab/dynkin.hpp"
#include "rbsdelab/lattice.hpp"
#include "rbsdelab/reflected.hpp"
#include "rbsdelab/scenario.hpp"

namespace testutil {

using namespace rbsdelab;

inline AdaptedProcess proc(std::vector<double> v) { return AdaptedProcess(std::move(v)); }

/// Binary depth-2 tree with p = 1/2, f = 0, L = -0.5 (terminal -1),
/// U = 0.5 (terminal 1), xi = (1, 1, -1, -1).
struct SmallGame {
  FiltrationTree tree = FiltrationTree::binomial(2, 0.5);
  BarrierPair barriers;
  AdaptedProcess xi;

  SmallGame() {
    AdaptedProcess lo(7, -0.5), hi(7, 0.5);
    for (NodeId n : tree.leaves()) {
      lo[n] = -1.0;
      hi[n] = 1.0;
    }
    barriers = BarrierPair::two_sided(lo, hi);
    xi = proc({0, 0, 0, 1, 1, -1, -1});
  }
};

inline double max_diff(const AdaptedProcess& a, const AdaptedProcess& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Random process with values in [-scale, scale].
inline AdaptedProcess random_process(std::mt19937_64& rng, const FiltrationTree& tree, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  AdaptedProcess x(tree.size());
  for (NodeId n = 0; n < tree.size(); ++n) x[n] = u(rng);
  return x;
}

}  // namespace testutil
