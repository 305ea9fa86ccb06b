import json
import math

import pytest

import rbsdelab as rl


def small_game():
    tree = rl.FiltrationTree.binomial(2, 0.5)
    lower = [-0.5] * 3 + [-1.0] * 4
    upper = [0.5] * 3 + [1.0] * 4
    xi = [0, 0, 0, 1, 1, -1, -1]
    return tree, rl.barriers(tree, lower, upper), xi


def test_tree_basics():
    tree = rl.FiltrationTree.binomial(3, 0.25)
    assert tree.size == 15
    assert tree.depth == 3
    assert tree.parent(0) is None
    assert tree.children(0) == [1, 2]
    assert len(tree.leaves()) == 8
    assert rl.count_stopping_rules(tree) == 26


def test_reflected_depth_two_example():
    tree, b, xi = small_game()
    sol = rl.solve_reflected(tree, xi, rl.Generator.zero(), b)
    assert sol["y"][0] == pytest.approx(0.0, abs=1e-12)
    assert sol["y"][1] == pytest.approx(0.5)
    assert sol["y"][2] == pytest.approx(-0.5)
    assert rl.verify_solution(tree, sol["y"], rl.Generator.zero(), xi, b)["pass"]
    game = rl.game_value(tree, rl.Generator.zero(), sol["y"], b, xi)
    assert game["supinf"] == pytest.approx(0.0, abs=1e-12)
    assert game["rules_per_player"] == 5


def test_generalized_game_and_penalty():
    tree, b, xi = small_game()
    f = rl.Generator.linear(-1.0, 0.0)
    y0 = rl.solve_reflected(tree, xi, f, b)["y"][0]
    lo, hi = rl.generalized_game_value(tree, f, b, xi)
    assert lo == pytest.approx(y0, abs=1e-8)
    assert hi == pytest.approx(y0, abs=1e-8)
    errs = [abs(rl.solve_penalized(tree, xi, f, b, n)[0] - y0) for n in (1, 100, 10000)]
    assert errs[2] <= errs[1] <= errs[0]


def test_verifier_rejects_a_shifted_root():
    tree, b, xi = small_game()
    y = rl.solve_reflected(tree, xi, rl.Generator.zero(), b)["y"]
    y[0] += 0.25
    assert not rl.verify_solution(tree, y, rl.Generator.zero(), xi, b)["pass"]


def test_errors_map_to_python_exceptions():
    tree = rl.FiltrationTree.chain(1, 1.0)
    with pytest.raises(ValueError):
        rl.barriers(tree, [1.0, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        rl.load_scenario("{not json")
    with pytest.raises(ValueError):
        rl.solve_reflected(tree, [0.0], rl.Generator.zero(), rl.barriers(tree))


def test_scenario_and_obstacle_problem():
    s = rl.load_scenario(json.dumps({"random_problem": {"depth": 3, "seed": 4}}))
    sol = rl.solve_reflected(s.tree, s.xi, s.f, s.barriers)
    assert rl.verify_solution(s.tree, sol["y"], s.f, s.xi, s.barriers)["pass"]

    p = rl.obstacle_problem(json.dumps({
        "k": 5, "g": 0,
        "h1": {"function": "tent", "center": 0.5, "width": 0.2, "height": 0.3},
    }))
    psor = rl.solve_vi_psor(p, tol=1e-10)
    assert rl.complementarity_residual(p, psor["u"]) <= 1e-9
    assert -1 in psor["contact"]
    pen = rl.solve_vi_penalized(p, 1e8)
    assert max(abs(a - b) for a, b in zip(pen["u"], psor["u"])) <= 1e-4
    chain = rl.chain_value(p)
    assert max(abs(a - b) for a, b in zip(chain, psor["u"])) <= 1e-8


def test_oscillating_demo_variation_grows():
    tv = [rl.oscillating_barrier_demo(n)["total_variation"] for n in (50, 100, 200)]
    assert tv[0] < tv[1] < tv[2]
    assert all(math.isfinite(v) for v in tv)
