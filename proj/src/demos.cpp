#include "rbsdelab/demos.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rbsdelab/errors.hpp"

namespace rbsdelab {

OscillatingBarrierDemo oscillating_barrier_demo(int n) {
  if (n < 2) throw ConfigError("oscillating demo needs n >= 2");
  OscillatingBarrierDemo d{FiltrationTree::chain(2 * n, 1.0 / n), {}, {}, {}, 0.0};
  const std::size_t m = d.tree.size();
  AdaptedProcess lo(m), hi(m);
  for (NodeId k = 0; k < m; ++k) {
    // Layer arithmetic keeps t = 1 exact.
    if (static_cast<int>(k) < n) {
      const double s = 1.0 - static_cast<double>(k) / n;
      lo[k] = s * std::cos(std::numbers::pi / s);
      hi[k] = lo[k] + 0.5 * s;
    } else {
      lo[k] = 0.0;
      hi[k] = 1.0;
    }
  }
  d.barriers = BarrierPair::two_sided(std::move(lo), std::move(hi));
  d.xi = AdaptedProcess(m, 0.0);
  d.y = solve_reflected(d.tree, d.xi, Generator::zero(), d.barriers).y;
  for (int k = 0; k < n; ++k) d.total_variation += std::abs(d.y[k + 1] - d.y[k]);
  return d;
}

PinchedConeDemo pinched_cone_demo() {
  constexpr int kSteps = 20;
  PinchedConeDemo d{FiltrationTree::chain(kSteps, 0.1), {}, {}};
  const std::size_t m = d.tree.size();
  AdaptedProcess lo(m), hi(m);
  for (NodeId k = 0; k < m; ++k) {
    const bool open = d.tree.layer(k) < kSteps / 2;
    lo[k] = open ? -d.tree.time(k) : 0.0;
    hi[k] = open ? d.tree.time(k) : 0.0;
  }
  d.barriers = BarrierPair::two_sided(std::move(lo), std::move(hi));
  d.xi = AdaptedProcess(m, 0.0);
  return d;
}

AdaptedProcess PinchedConeDemo::plateau_candidate(double level) const {
  return AdaptedProcess::from_function(tree, [&](NodeId k) {
    if (tree.layer(k) >= 10) return 0.0;
    return std::min(tree.time(k), level);
  });
}

}  // namespace rbsdelab
