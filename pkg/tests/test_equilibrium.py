import numpy as np
import pytest

from maal.equilibrium import (ExtendedOperator, ExtendedRegion, check_decoupling, check_monotone,
                              check_nash, check_vs_equals_sol, default_lambda_cap, feasible_grid,
                              grid_sets, min_extended_residual, natural_residual, vi_residual)
from maal.geometry import ActionSet

from conftest import scalar_game


def test_extended_operator_shape_and_blocks(lq2):
    game = lq2[0]
    op = ExtendedOperator(game)
    assert op.dim == game.dim + game.constraint.rows
    x = np.array([0.2, 0.7])
    out = op(x, np.zeros(1))
    np.testing.assert_array_equal(out[:2], game.gradient(x))
    on_face = np.array([0.4, 0.6])
    assert op(np.append(on_face, 0.3))[2] == pytest.approx(0.0, abs=1e-15)


def test_vi_residual_examples():
    Z = ActionSet.box([0], [1])
    for p in (0.0, 0.3, 1.0):
        assert vi_residual(lambda x: np.zeros(1), Z, [p]).value == 0.0
    F = lambda x: 1 - 2 * x
    assert vi_residual(F, Z, [0.5]).value == 0.0
    assert vi_residual(F, Z, [0.4]).value > 0
    with pytest.raises(ValueError):
        vi_residual(F, Z, [1.5])


def test_oracle_point_solves_vi_over_q(lq2, lq2_solution):
    game = lq2[0]
    assert vi_residual(game.gradient, game, lq2_solution.x).value <= 1e-8
    # and pointwise on the Q grid
    v = game.gradient(lq2_solution.x)
    grid = feasible_grid(game, 1e-2)
    assert np.max((grid - lq2_solution.x) @ v) <= 1e-8


def test_oracle_pair_solves_extended_vi(lq2, lq2_solution):
    game = lq2[0]
    op = ExtendedOperator(game)
    z = np.append(lq2_solution.x, lq2_solution.lam)
    cap = default_lambda_cap(lq2_solution.lam.max())
    assert vi_residual(op, ExtendedRegion(game, cap), z).value <= 1e-8
    F = op(z)
    xs = feasible_grid(game.sets[0], 1e-2)
    for x1 in xs[::5]:
        for x2 in xs[::5]:
            for lam in np.linspace(0, cap, 7):
                d = np.array([x1[0], x2[0], lam]) - z
                assert d @ F <= 1e-8
    assert natural_residual(game, lq2_solution.x, lq2_solution.lam) <= 1e-12


def test_nash_examples():
    g = scalar_game(lambda x: -2 * (x - 0.3), A=1.0, b=2.0, utility=lambda x: -(x[0] - 0.3) ** 2)
    assert check_nash(g, [0.3]).passed
    rep = check_nash(g, [0.6])
    assert not rep.passed and rep.max_violation > 0


def test_nash_needs_utilities():
    g = scalar_game(lambda x: -x)
    with pytest.raises(ValueError):
        check_nash(g, [0.5])


def test_oracle_point_is_nash(lq2, lq2_solution, cournot):
    assert check_nash(lq2[0], lq2_solution.x).passed
    assert check_nash(cournot[0], np.ones(3)).passed


def test_decoupling_on_grid(lq2, lq2_solution):
    game = lq2[0]
    pts = np.vstack([lq2_solution.x, feasible_grid(game, 0.1)])
    rep = check_decoupling(game, pts, lambda_cap=10.0)
    assert rep.passed
    rows = rep.details["rows"]
    assert rows[0]["q_residual"] <= 1e-8 and rows[0]["extended_residual"] <= 1e-8
    assert rows[0]["lambda"][0] == pytest.approx(0.35, abs=1e-9)
    solving = [r["point"] for r in rows if r["q_residual"] <= 1e-8]
    np.testing.assert_allclose(solving, [[0.5, 0.5]] * len(solving), atol=1e-12)


def test_min_extended_residual_lp_matches_brute_force(lq2):
    game = lq2[0]
    x = np.array([0.3, 0.6])
    val, lam = min_extended_residual(game, x, 5.0)
    op = ExtendedOperator(game)
    best = np.inf
    for lm in np.linspace(0, 5, 2001):
        z = np.array([x[0], x[1], lm])
        best = min(best, vi_residual(op, ExtendedRegion(game, 5.0), z).value)
    assert val == pytest.approx(best, abs=5e-3)
    assert val <= best + 1e-9


def test_vs_equals_sol_concave_gradient():
    # F = grad g with g = -(x - 0.3)^2 on [0, 1]: both sets are {0.3}
    Z = ActionSet.box([0], [1])
    rep = check_vs_equals_sol(lambda x: -2 * (x - 0.3), Z)
    assert rep.passed
    pts = np.array(rep.details["sol_points"])
    assert np.all(np.abs(pts - 0.3) <= 1e-2 + 1e-12)


def test_vs_equals_sol_monotone_linear():
    c = np.array([0.4, 0.7])
    M = np.array([[-1.0, 0.5], [-0.5, -1.0]])
    Z = ActionSet.box([0, 0], [1, 1])
    rep = check_vs_equals_sol(lambda x: M @ (x - c), Z)
    assert rep.passed
    for pts in (rep.details["sol_points"], rep.details["vs_points"]):
        assert np.max(np.linalg.norm(np.array(pts) - c, axis=1)) <= 2e-2 * np.sqrt(2)


def test_non_monotone_operator_flags_empty_vs():
    # F(x) = x - 1/2 on [0, 1] (gradient of a convex function): SOL = {0, 1/2, 1}, VS empty
    Z = ActionSet.box([0], [1])
    F = lambda x: x - 0.5
    P, in_sol, in_vs, _ = grid_sets(F, Z, 1e-2)
    assert in_sol.sum() > 0
    rep = check_vs_equals_sol(F, Z)
    assert not rep.passed
    assert any("VS set is empty" in m for m in rep.messages)


def test_monotonicity_checks(lq2):
    game = lq2[0]
    pts = game.sample(np.random.default_rng(0), 500)
    assert check_monotone(game.gradient, pts).passed
    assert not check_monotone(lambda x: x, pts).passed


def test_grid_cap():
    with pytest.raises(ValueError):
        feasible_grid(ActionSet.box(np.zeros(4), np.ones(4)), 0.5)
    with pytest.raises(ValueError, match="capped"):
        grid_sets(lambda x: -x, ActionSet.box(np.zeros(3), np.ones(3)), 1e-2)
