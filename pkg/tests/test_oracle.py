import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maal import scenarios
from maal.equilibrium import feasible_grid
from maal.game_model import AffineConstraint, Game, PlayerSpec
from maal.geometry import ActionSet
from maal.oracle import OracleError, kkt_residuals, solve_extragradient, solve_lq_kkt

from conftest import scalar_game

# simplex_alloc equilibrium from the extragradient oracle (residual ~1e-11);
# the test below re-certifies it through the simplex stationarity conditions
SIMPLEX_ALLOC_X = [0.5534049711, 0.2001423856, 0.2464526432, 0.3327498294, 0.4677726173,
                   0.1994775533, 0.1138451995, 0.1320849971, 0.7540698034]
SIMPLEX_ALLOC_LAM = [1.0754884721, 0.2541128254]


def affine_scalar(b):
    g = scalar_game(lambda x: 1 - 2 * x, A=1.0, b=b)
    g.affine = (np.array([[-2.0]]), np.array([1.0]))
    return g


@pytest.mark.parametrize("b, x, lam", [(1.0, 0.5, 0.0), (0.25, 0.25, 0.5)])
def test_scalar_examples(b, x, lam):
    g = affine_scalar(b)
    k = solve_lq_kkt(g)
    assert k.x[0] == pytest.approx(x, abs=1e-12)
    assert k.lam[0] == pytest.approx(lam, abs=1e-12)
    e = solve_extragradient(g)
    assert abs(e.x[0] - x) <= 1e-5 and abs(e.lam[0] - lam) <= 1e-5


def test_lq2_hand_solution(lq2_solution):
    # by hand: both constraint and stationarity active, v_i(0.5, 0.5) = 0.35 = lambda
    np.testing.assert_allclose(lq2_solution.x, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(lq2_solution.lam, [0.35], atol=1e-12)
    assert lq2_solution.max_residual <= 1e-10


def test_cournot_symmetric_solution(cournot):
    k = solve_lq_kkt(cournot[0])
    # p0 - c - s*sum(x) - s*x_i = lambda with sum(x) = Cap: x_i = 1, lambda = 5
    np.testing.assert_allclose(k.x, [1, 1, 1], atol=1e-12)
    assert k.lam[0] == pytest.approx(5.0, abs=1e-12)
    assert np.ptp(k.x) <= 1e-14


def test_unconstrained_game_matches_maximiser():
    # slack coupling row; u_i = -(x_i - t_i)^2 - 0.2 x_1 x_2 has interior optimum
    P = np.array([[-2.0, -0.2], [-0.2, -2.0]])
    q = np.array([0.8, 1.2])
    sets = [ActionSet.box([-5], [5]), ActionSet.box([-5], [5])]
    players = [PlayerSpec(S, (lambda x, k=k: P[k] @ x + q[k:k + 1])) for k, S in enumerate(sets)]
    g = Game(players, AffineConstraint.from_matrix([[1, 1]], [100], [1, 1]), affine=(P, q))
    xstar = np.linalg.solve(-P, q)
    assert np.allclose(solve_extragradient(g).x, xstar, atol=1e-6)
    assert np.allclose(solve_lq_kkt(g).x, xstar, atol=1e-12)


def test_simplex_alloc_reference_is_certified():
    game, _ = scenarios.builtin("simplex_alloc")
    sol = solve_extragradient(game)
    assert sol.max_residual <= 1e-6
    np.testing.assert_allclose(sol.x, SIMPLEX_ALLOC_X, atol=1e-8)
    np.testing.assert_allclose(sol.lam, SIMPLEX_ALLOC_LAM, atol=1e-8)
    # independent certificate: on a fully supported simplex the price-adjusted
    # gradient is constant across resources
    x, lam = np.array(SIMPLEX_ALLOC_X), np.array(SIMPLEX_ALLOC_LAM)
    A = game.constraint.A
    g = game.gradient(x) - A.T @ lam
    for s in game.slices:
        assert np.ptp(g[s]) <= 1e-8
    assert np.all(A @ x <= game.constraint.b + 1e-8)
    assert np.all(np.abs(lam * (game.constraint.b - A @ x)) <= 1e-8)


def test_cap_doubling(cournot):
    sol = solve_extragradient(cournot[0], lambda_cap=0.5)
    assert sol.lam[0] == pytest.approx(5.0, abs=1e-5)


def test_preconditions():
    with pytest.raises(OracleError):
        solve_lq_kkt(scalar_game(lambda x: -x))
    game, _ = scenarios.builtin("cournot_capacity", n=10)
    with pytest.raises(OracleError, match="exceeds"):
        solve_lq_kkt(game)


def test_accepted_solutions_solve_the_grid_vi(lq2, cournot, lq2_solution):
    for game, sol in ((lq2[0], lq2_solution), (cournot[0], solve_lq_kkt(cournot[0]))):
        grid = feasible_grid(game, 1e-2 if game.dim == 2 else 0.1)
        v = game.gradient(sol.x)
        assert np.max((grid - sol.x) @ v) <= 1e-8


def random_monotone_lq(seed):
    rng = np.random.default_rng(seed)
    dims = [1, 2]
    n = 3
    M = rng.standard_normal((n, n))
    K = rng.standard_normal((n, n))
    P = -(M @ M.T + 0.5 * np.eye(n)) + (K - K.T)
    # the own blocks must be symmetric for a potential-free game to have utilities;
    # the oracles only need the pseudo-gradient
    q = 2 * rng.standard_normal(n)
    sets = [ActionSet.box([-1], [1]), ActionSet.box([-1, -1], [1, 1])]
    slices = [slice(0, 1), slice(1, 3)]
    players = [PlayerSpec(S, (lambda x, s=s: P[s] @ x + q[s])) for S, s in zip(sets, slices)]
    A = rng.standard_normal((2, n))
    b = np.abs(rng.standard_normal(2)) * 0.5
    return Game(players, AffineConstraint.from_matrix(A, b, dims), affine=(P, q))


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_oracles_agree_on_random_monotone_games(seed):
    g = random_monotone_lq(seed)
    k = solve_lq_kkt(g)
    e = solve_extragradient(g)
    assert k.max_residual <= 1e-9 and e.max_residual <= 1e-6
    assert np.max(np.abs(k.x - e.x)) <= 1e-5
    assert np.max(np.abs(k.lam - e.lam)) <= 1e-5
    stat, comp, feas = kkt_residuals(g, k.x, k.lam)
    assert max(stat, comp, feas) <= 1e-9
