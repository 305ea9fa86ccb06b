#include "rbsdelab/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "rbsdelab/errors.hpp"

namespace rbsdelab {

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& what) {
  throw ConfigError("field '" + field + "': " + what);
}

double number_at(const Json& j, const std::string& key, const std::string& field) {
  if (!j.contains(key)) bad_field(field + "." + key, "missing");
  if (!j[key].is_number()) bad_field(field + "." + key, "expected a number");
  return j[key].get<double>();
}

double number_or(const Json& j, const std::string& key, double fallback, const std::string& field) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (!j[key].is_number()) bad_field(field + "." + key, "expected a number");
  return j[key].get<double>();
}

int int_or(const Json& j, const std::string& key, int fallback, const std::string& field) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (!j[key].is_number_integer()) bad_field(field + "." + key, "expected an integer");
  return j[key].get<int>();
}

std::vector<double> numbers_at(const Json& j, const std::string& key, const std::string& field) {
  if (!j.contains(key) || !j[key].is_array()) bad_field(field + "." + key, "expected an array");
  std::vector<double> out;
  for (const auto& v : j[key]) {
    if (!v.is_number()) bad_field(field + "." + key, "expected numbers only");
    out.push_back(v.get<double>());
  }
  return out;
}

std::string string_or(const Json& j, const std::string& key, const std::string& fallback) {
  if (!j.contains(key) || !j[key].is_string()) return fallback;
  return j[key].get<std::string>();
}

}  // namespace

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    const std::size_t pos = std::min<std::size_t>(e.byte, text.size());
    const std::size_t line = 1 + std::count(text.begin(), text.begin() + pos, '\n');
    const std::size_t nl = text.rfind('\n', pos == 0 ? 0 : pos - 1);
    const std::size_t col = nl == std::string::npos ? pos : pos - nl - 1;
    std::ostringstream msg;
    msg << path << ":" << line << ":" << col << ": JSON parse error: " << e.what();
    throw ConfigError(msg.str());
  }
}

std::vector<double> node_positions(const FiltrationTree& tree) {
  std::vector<double> x(tree.size(), 0.0);
  const double step = std::sqrt(tree.dt());
  for (int k = 0; k < tree.depth(); ++k) {
    for (NodeId n : tree.layer_nodes(k)) {
      const auto& ch = tree.children(n);
      const double b = static_cast<double>(ch.size());
      for (std::size_t j = 0; j < ch.size(); ++j) {
        const double move = ch.size() == 1 ? 0.0 : ((b - 1.0) - 2.0 * j) / (b - 1.0);
        x[ch[j]] = x[n] + move * step;
      }
    }
  }
  return x;
}

FunctionSpec parse_function(const Json& j, const std::string& field, const std::string& default_var) {
  if (j.is_number()) {
    const double c = j.get<double>();
    return {[c](double) { return c; }, default_var};
  }
  if (!j.is_object()) bad_field(field, "expected a number or a function object");
  const std::string kind = string_or(j, "function", "");
  std::function<double(double)> base;
  if (kind == "poly") {
    const auto c = numbers_at(j, "coeffs", field);
    base = [c](double v) {
      double acc = 0.0;
      for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * v + *it;
      return acc;
    };
  } else if (kind == "tent") {
    const double center = number_at(j, "center", field);
    const double width = number_at(j, "width", field);
    const double height = number_at(j, "height", field);
    if (!(width > 0.0)) bad_field(field + ".width", "must be positive");
    base = [=](double v) { return height * std::max(0.0, 1.0 - std::abs(v - center) / width); };
  } else if (kind == "sin") {
    const double a = number_at(j, "amplitude", field);
    const double k = number_at(j, "frequency", field);
    base = [=](double v) { return a * std::sin(k * std::numbers::pi * v); };
  } else if (kind == "tanh") {
    const double a = number_at(j, "amplitude", field);
    const double k = number_at(j, "rate", field);
    base = [=](double v) { return a * std::tanh(k * v); };
  } else if (kind == "sum") {
    if (!j.contains("terms") || !j["terms"].is_array()) bad_field(field + ".terms", "expected an array");
    std::vector<std::function<double(double)>> terms;
    for (std::size_t i = 0; i < j["terms"].size(); ++i) {
      terms.push_back(
          parse_function(j["terms"][i], field + ".terms[" + std::to_string(i) + "]", default_var).fn);
    }
    base = [terms](double v) {
      double acc = 0.0;
      for (const auto& t : terms) acc += t(v);
      return acc;
    };
  } else if (kind == "piecewise") {
    const auto breaks = numbers_at(j, "breaks", field);
    if (!j.contains("pieces") || !j["pieces"].is_array() || j["pieces"].size() != breaks.size() + 1) {
      bad_field(field + ".pieces", "expected one more piece than breaks");
    }
    std::vector<std::function<double(double)>> pieces;
    for (std::size_t i = 0; i < j["pieces"].size(); ++i) {
      pieces.push_back(
          parse_function(j["pieces"][i], field + ".pieces[" + std::to_string(i) + "]", default_var).fn);
    }
    base = [breaks, pieces](double v) {
      const std::size_t idx = std::upper_bound(breaks.begin(), breaks.end(), v) - breaks.begin();
      return pieces[idx](v);
    };
  } else {
    bad_field(field + ".function", "unknown function '" + kind + "'");
  }
  const bool positive = j.value("positive_part", false);
  const double scale = number_or(j, "scale", 1.0, field);
  const double offset = number_or(j, "offset", 0.0, field);
  const std::string var = string_or(j, "var", default_var);
  if (var != "t" && var != "x") bad_field(field + ".var", "must be \"t\" or \"x\"");
  return {[=](double v) {
            double y = base(v);
            if (positive) y = std::max(y, 0.0);
            return offset + scale * y;
          },
          var};
}

AdaptedProcess parse_process(const Json& j, const FiltrationTree& tree, const std::string& field) {
  if (j.is_number()) return AdaptedProcess::constant(tree, j.get<double>());
  if (j.is_array()) {
    if (j.size() != tree.size()) {
      bad_field(field, "expected " + std::to_string(tree.size()) + " node values, got " +
                           std::to_string(j.size()));
    }
    AdaptedProcess out(tree.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_number()) bad_field(field + "[" + std::to_string(i) + "]", "expected a number");
      out[i] = j[i].get<double>();
    }
    return out;
  }
  if (!j.is_object()) bad_field(field, "expected a number, list or object");
  if (j.contains("const")) return AdaptedProcess::constant(tree, number_at(j, "const", field));
  if (j.contains("nodes")) {
    AdaptedProcess out(tree.size(), number_or(j, "default", 0.0, field));
    if (!j["nodes"].is_object()) bad_field(field + ".nodes", "expected an object of id: value");
    for (const auto& [key, value] : j["nodes"].items()) {
      std::size_t id = 0;
      try {
        id = std::stoul(key);
      } catch (const std::exception&) {
        bad_field(field + ".nodes", "bad node id '" + key + "'");
      }
      if (id >= tree.size()) bad_field(field + ".nodes", "node id " + key + " out of range");
      if (!value.is_number()) bad_field(field + ".nodes." + key, "expected a number");
      out[id] = value.get<double>();
    }
    return out;
  }
  const FunctionSpec spec = parse_function(j, field, "t");
  const std::vector<double> x = spec.var == "x" ? node_positions(tree) : std::vector<double>{};
  return AdaptedProcess::from_function(tree, [&](NodeId n) {
    return spec.fn(spec.var == "x" ? x[n] : tree.time(n));
  });
}

FiltrationTree parse_tree(const Json& j, std::uint64_t seed) {
  const std::string field = "tree";
  if (!j.is_object()) bad_field(field, "expected an object");
  const std::string type = string_or(j, "type", "");
  const double dt = number_or(j, "dt", 1.0, field);
  if (type == "binomial") {
    return FiltrationTree::binomial(int_or(j, "steps", 1, field), dt, number_or(j, "p_up", 0.5, field));
  }
  if (type == "uniform") {
    const auto probs = numbers_at(j, "probs", field);
    return FiltrationTree::uniform(int_or(j, "steps", 1, field), dt, probs);
  }
  if (type == "chain") return FiltrationTree::chain(int_or(j, "steps", 1, field), dt);
  if (type == "nodes") {
    if (!j.contains("nodes") || !j["nodes"].is_array()) bad_field(field + ".nodes", "expected an array");
    std::vector<NodeSpec> specs;
    for (const auto& row : j["nodes"]) {
      NodeSpec s;
      s.id = static_cast<NodeId>(number_at(row, "id", field + ".nodes"));
      s.layer = static_cast<int>(number_at(row, "layer", field + ".nodes"));
      s.parent = row.contains("parent") && !row["parent"].is_null()
                     ? static_cast<NodeId>(row["parent"].get<long long>())
                     : kNoParent;
      s.prob = number_or(row, "prob", 1.0, field + ".nodes");
      specs.push_back(s);
    }
    return FiltrationTree::from_nodes(dt, specs);
  }
  if (type == "random") {
    RandomTreeOptions opts;
    opts.depth = int_or(j, "depth", 3, field);
    opts.min_branching = int_or(j, "min_branching", 1, field);
    opts.max_branching = int_or(j, "max_branching", 3, field);
    opts.dt = dt;
    std::mt19937_64 rng(j.contains("seed") ? j["seed"].get<std::uint64_t>() : seed);
    return random_tree(rng, opts);
  }
  bad_field(field + ".type", "unknown tree type '" + type + "'");
}

Generator parse_generator(const Json& j, const FiltrationTree& tree) {
  const std::string field = "generator";
  if (j.is_null()) return Generator::zero();
  if (!j.is_object()) bad_field(field, "expected an object");
  const std::string type = string_or(j, "type", "");
  if (type == "const") return Generator::constant(number_or(j, "c", 0.0, field));
  if (type == "linear") return Generator::linear(number_at(j, "a", field), number_or(j, "b", 0.0, field));
  if (type == "affine") {
    if (!j.contains("b")) bad_field(field + ".b", "missing");
    return Generator::affine(number_at(j, "a", field), parse_process(j["b"], tree, field + ".b"));
  }
  if (type == "monotone_poly") {
    std::vector<double> c;
    if (j.contains("odd_coeffs")) c = numbers_at(j, "odd_coeffs", field);
    return Generator::monotone_poly(number_or(j, "a", 0.0, field), number_or(j, "b", 0.0, field), c);
  }
  if (type == "tabulated") {
    auto grid = numbers_at(j, "y_grid", field);
    if (!j.contains("rows") || !j["rows"].is_array() || j["rows"].size() != tree.size()) {
      bad_field(field + ".rows", "expected one row per node");
    }
    std::vector<std::vector<double>> rows;
    for (const auto& r : j["rows"]) rows.push_back(r.get<std::vector<double>>());
    return Generator::tabulated(std::move(grid), std::move(rows));
  }
  bad_field(field + ".type", "unknown generator type '" + type + "'");
}

TreeScenario parse_tree_scenario(const Json& j, std::uint64_t seed) {
  if (!j.is_object()) throw ConfigError("scenario must be a JSON object");
  if (j.contains("random_problem")) {
    const Json& r = j["random_problem"];
    const std::string field = "random_problem";
    if (!r.is_object()) bad_field(field, "expected an object");
    RandomTreeOptions to;
    to.depth = int_or(r, "depth", 3, field);
    to.min_branching = int_or(r, "min_branching", 1, field);
    to.max_branching = int_or(r, "max_branching", 3, field);
    to.dt = number_or(r, "dt", 0.25, field);
    RandomProblemOptions po;
    po.pinch_probability = number_or(r, "pinch_probability", po.pinch_probability, field);
    po.one_sided_probability = number_or(r, "one_sided_probability", po.one_sided_probability, field);
    po.allow_nonlinear = r.value("allow_nonlinear", true);
    po.max_mu = number_or(r, "max_mu", 0.0, field);
    std::mt19937_64 rng(r.contains("seed") ? r["seed"].get<std::uint64_t>() : seed);
    FiltrationTree tree = random_tree(rng, to);
    ReflectedProblem p = random_problem(rng, tree, po);
    AdaptedProcess eta = default_eta(tree);
    return TreeScenario{std::move(tree), std::move(p.f), std::move(p.xi), std::move(p.barriers),
                        std::move(eta), number_or(j, "tol", 1e-9, "scenario"), j};
  }
  if (!j.contains("tree")) bad_field("tree", "missing");
  FiltrationTree tree = parse_tree(j["tree"], seed);
  Generator f = parse_generator(j.value("generator", Json()), tree);
  if (!j.contains("terminal")) bad_field("terminal", "missing");
  AdaptedProcess xi = parse_process(j["terminal"], tree, "terminal");
  const double scale = number_or(j, "sentinel_scale", 1.0, "scenario");
  AdaptedProcess lo = j.contains("lower") && !j["lower"].is_null()
                          ? parse_process(j["lower"], tree, "lower")
                          : AdaptedProcess::constant(tree, -scale * kSentinel);
  AdaptedProcess hi = j.contains("upper") && !j["upper"].is_null()
                          ? parse_process(j["upper"], tree, "upper")
                          : AdaptedProcess::constant(tree, scale * kSentinel);
  BarrierPair barriers{std::move(lo), std::move(hi)};
  barriers.validate(tree);
  barriers.validate_terminal(tree, xi);
  AdaptedProcess eta = j.contains("eta") ? parse_process(j["eta"], tree, "eta") : default_eta(tree);
  const double tol = number_or(j, "tol", 1e-9, "scenario");
  return TreeScenario{std::move(tree), std::move(f), std::move(xi), std::move(barriers),
                      std::move(eta), tol, j};
}

namespace {

ObstacleProblem parse_space(const Json& j) {
  const std::string field = "grid";
  int interior = 0;
  if (j.contains("k")) {
    const int k = int_or(j, "k", 5, field);
    if (k < 1 || k > 24) bad_field(field + ".k", "must lie in [1, 24]");
    interior = (1 << k) - 1;
  } else {
    interior = int_or(j, "interior", 31, field);
  }
  const double lo = number_or(j, "lo", 0.0, field);
  const double hi = number_or(j, "hi", 1.0, field);
  return ObstacleProblem::half_laplacian(interior, lo, hi, number_or(j, "left", 0.0, field),
                                         number_or(j, "right", 0.0, field));
}

std::vector<double> sample(const ObstacleProblem& p, const Json& j, const std::string& field,
                           double fallback) {
  std::vector<double> out(p.size(), fallback);
  if (!j.contains(field) || j[field].is_null()) return out;
  const FunctionSpec spec = parse_function(j[field], field, "x");
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = spec.fn(p.x(i));
  return out;
}

}  // namespace

ObstacleProblem parse_obstacle_problem(const Json& j) {
  if (!j.is_object()) throw ConfigError("obstacle scenario must be a JSON object");
  ObstacleProblem p = parse_space(j);
  const double slope = number_or(j, "slope", 0.0, "scenario");
  if (slope > 0.0) bad_field("slope", "the load must be nonincreasing in u (slope <= 0)");
  p.load = StateNonlinearity::affine_in_y(sample(p, j, "g", 0.0), slope);
  p.h1 = sample(p, j, "h1", -kSentinel);
  p.h2 = sample(p, j, "h2", kSentinel);
  p.validate();
  return p;
}

MarkovScenario obstacle_chain(const ObstacleProblem& p) {
  if (!p.load.affine) throw ConfigError("obstacle_chain needs an affine load");
  const int m = static_cast<int>(p.size());
  MarkovScenario s = MarkovScenario::killed_walk(m, p.x_lo, p.x_hi);
  std::vector<double> zero(s.size(), 0.0);
  s.fhat = StateNonlinearity::affine_in_y(zero, p.load.slope);
  for (int i = 0; i < m; ++i) {
    s.g[i + 1] = p.load(i, 0.0);
    s.h1[i + 1] = p.h1[i];
    s.h2[i + 1] = p.h2[i];
    s.terminal[i + 1] = std::clamp(0.0, p.h1[i], p.h2[i]);
  }
  s.psi.front() = p.left;
  s.psi.back() = p.right;
  return s;
}

ParabolicObstacleProblem parse_parabolic_problem(const Json& j) {
  if (!j.is_object()) throw ConfigError("evolution scenario must be a JSON object");
  ParabolicObstacleProblem p;
  p.space = parse_space(j);
  p.horizon = number_or(j, "horizon", 1.0, "scenario");
  p.steps = int_or(j, "steps", 100, "scenario");
  p.theta = number_or(j, "theta", 0.5, "scenario");
  auto spatio_temporal = [&](const std::string& key, double fallback)
      -> std::function<double(double, double)> {
    if (!j.contains(key) || j[key].is_null()) return [fallback](double, double) { return fallback; };
    const FunctionSpec spec = parse_function(j[key], key, "x");
    if (spec.var == "t") return [fn = spec.fn](double t, double) { return fn(t); };
    return [fn = spec.fn](double, double x) { return fn(x); };
  };
  p.running = spatio_temporal("g", 0.0);
  p.lower = spatio_temporal("h1", -kSentinel);
  p.upper = spatio_temporal("h2", kSentinel);
  if (!j.contains("terminal")) bad_field("terminal", "missing");
  const FunctionSpec term = parse_function(j["terminal"], "terminal", "x");
  p.terminal = term.fn;
  if (j.value("boundary_from_lower", false)) {
    p.boundary = p.lower;
  } else {
    const double left = p.space.left;
    const double right = p.space.right;
    const double lo = p.space.x_lo;
    p.boundary = [left, right, lo](double, double x) { return x == lo ? left : right; };
  }
  return p;
}

// ---------------------------------------------------------------------------

FiltrationTree random_tree(std::mt19937_64& rng, const RandomTreeOptions& opts) {
  if (opts.min_branching < 1 || opts.max_branching < opts.min_branching) {
    throw ConfigError("random tree branching range is empty");
  }
  std::uniform_int_distribution<int> branching(opts.min_branching, opts.max_branching);
  std::uniform_real_distribution<double> weight(0.2, 1.0);
  std::vector<NodeSpec> specs{{0, 0, kNoParent, 1.0}};
  for (std::size_t head = 0; head < specs.size(); ++head) {
    if (specs[head].layer == opts.depth) continue;
    int b = branching(rng);
    if (head == 0) b = std::max(b, std::min(2, opts.max_branching));
    std::vector<double> w(b);
    double total = 0.0;
    for (double& v : w) total += (v = weight(rng));
    for (int c = 0; c < b; ++c) {
      specs.push_back({specs.size(), specs[head].layer + 1, head, w[c] / total});
    }
  }
  // Renormalize the last child so each row sums to one in floating point.
  for (std::size_t i = 0; i < specs.size(); ++i) {
    double total = 0.0;
    std::size_t last = 0;
    for (std::size_t c = 0; c < specs.size(); ++c) {
      if (specs[c].parent == i) {
        total += specs[c].prob;
        last = c;
      }
    }
    if (last != 0) specs[last].prob += 1.0 - total;
  }
  return FiltrationTree::from_nodes(opts.dt, specs);
}

namespace {

Generator random_generator(std::mt19937_64& rng, const FiltrationTree& tree,
                           const RandomProblemOptions& opts) {
  std::uniform_real_distribution<double> slope(-1.0, opts.max_mu);
  std::normal_distribution<double> normal(0.0, opts.scale);
  std::uniform_int_distribution<int> pick(0, opts.allow_nonlinear ? 3 : 2);
  switch (pick(rng)) {
    case 0:
      return Generator::constant(normal(rng));
    case 1:
      return Generator::linear(slope(rng), normal(rng));
    case 2: {
      const double a = slope(rng);
      AdaptedProcess b(tree.size());
      for (NodeId n = 0; n < tree.size(); ++n) b[n] = normal(rng);
      return Generator::affine(a, std::move(b));
    }
    default: {
      std::uniform_real_distribution<double> coeff(0.0, 0.5);
      const double a = slope(rng);
      const double b = normal(rng);
      return Generator::monotone_poly(a, b, {coeff(rng)});
    }
  }
}

}  // namespace

AdaptedProcess random_terminal(std::mt19937_64& rng, const FiltrationTree& tree,
                               const BarrierPair& barriers) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AdaptedProcess xi(tree.size());
  for (NodeId leaf : tree.leaves()) {
    double lo = barriers.lower[leaf];
    double hi = barriers.upper[leaf];
    if (is_sentinel(lo) && is_sentinel(hi)) {
      lo = -1.0;
      hi = 1.0;
    } else if (is_sentinel(lo)) {
      lo = hi - 2.0;
    } else if (is_sentinel(hi)) {
      hi = lo + 2.0;
    }
    xi[leaf] = lo + (hi - lo) * unit(rng);
  }
  return xi;
}

ReflectedProblem random_problem(std::mt19937_64& rng, const FiltrationTree& tree,
                                const RandomProblemOptions& opts) {
  std::normal_distribution<double> normal(0.0, opts.scale);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> gap(0.1 * opts.scale, 2.0 * opts.scale);
  AdaptedProcess lo(tree.size());
  AdaptedProcess hi(tree.size());
  for (NodeId n = 0; n < tree.size(); ++n) {
    lo[n] = normal(rng);
    hi[n] = unit(rng) < opts.pinch_probability ? lo[n] : lo[n] + gap(rng);
  }
  const double side = unit(rng);
  if (side < 0.5 * opts.one_sided_probability) {
    lo = AdaptedProcess::constant(tree, -kSentinel);
  } else if (side < opts.one_sided_probability) {
    hi = AdaptedProcess::constant(tree, kSentinel);
  }
  BarrierPair barriers{std::move(lo), std::move(hi)};
  AdaptedProcess xi = random_terminal(rng, tree, barriers);
  return ReflectedProblem{std::move(xi), random_generator(rng, tree, opts), std::move(barriers)};
}

std::pair<ReflectedProblem, ReflectedProblem> random_ordered_pair(std::mt19937_64& rng,
                                                                  const FiltrationTree& tree,
                                                                  const RandomProblemOptions& opts) {
  ReflectedProblem first = random_problem(rng, tree, opts);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto bump = [&](double size) { return unit(rng) < 0.3 ? 0.0 : size * unit(rng); };
  AdaptedProcess lo = first.barriers.lower;
  AdaptedProcess hi = first.barriers.upper;
  for (NodeId n = 0; n < tree.size(); ++n) {
    const double up = is_sentinel(hi[n]) ? 0.0 : bump(0.5 * opts.scale);
    hi[n] += up;
    if (!is_sentinel(lo[n])) {
      const double room = is_sentinel(hi[n]) ? opts.scale : hi[n] - lo[n];
      lo[n] += bump(1.0) * room;
    }
  }
  AdaptedProcess xi(tree.size());
  for (NodeId leaf : tree.leaves()) {
    const double floor = std::max(first.xi[leaf], lo[leaf]);
    const double ceil = is_sentinel(hi[leaf]) ? floor + opts.scale : hi[leaf];
    xi[leaf] = floor + (ceil - floor) * (unit(rng) < 0.3 ? 0.0 : unit(rng));
  }
  AdaptedProcess shift(tree.size());
  for (NodeId n = 0; n < tree.size(); ++n) shift[n] = bump(opts.scale);
  auto shared = std::make_shared<const AdaptedProcess>(std::move(shift));
  Generator f2 = first.f.plus([shared](int, NodeId n, double) { return (*shared)[n]; }, 0.0, "shift");
  ReflectedProblem second{std::move(xi), std::move(f2), BarrierPair{std::move(lo), std::move(hi)}};
  return {std::move(first), std::move(second)};
}

BarrierPair random_projection_barriers(std::mt19937_64& rng, const FiltrationTree& tree,
                                       double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AdaptedProcess lo(tree.size());
  AdaptedProcess gap(tree.size());
  lo[tree.root()] = normal(rng);
  gap[tree.root()] = scale * (0.2 + 1.5 * unit(rng));
  for (int k = 0; k < tree.depth(); ++k) {
    for (NodeId n : tree.layer_nodes(k)) {
      const auto& ch = tree.children(n);
      // Mean-zero noise for L, nonnegative mean-one weights for the gap.
      std::vector<double> noise(ch.size());
      std::vector<double> w(ch.size());
      double mean = 0.0;
      double wmean = 0.0;
      for (std::size_t c = 0; c < ch.size(); ++c) {
        noise[c] = normal(rng);
        w[c] = unit(rng) < 0.15 ? 0.0 : 0.2 + unit(rng);
        mean += tree.node(ch[c]).prob * noise[c];
        wmean += tree.node(ch[c]).prob * w[c];
      }
      const double shrink = 0.5 * unit(rng);
      const double drift = shrink * gap[n] * unit(rng);
      for (std::size_t c = 0; c < ch.size(); ++c) {
        lo[ch[c]] = lo[n] + drift + noise[c] - mean;
        gap[ch[c]] = wmean > 0.0 ? (1.0 - shrink) * gap[n] * w[c] / wmean : 0.0;
      }
    }
  }
  AdaptedProcess hi = lo + gap;
  return BarrierPair{std::move(lo), std::move(hi)};
}

}  // namespace rbsdelab
