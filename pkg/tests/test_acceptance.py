"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` (the lines also appear without ``-s``).
Tolerances and run lengths are pinned here; no criterion loosens them.
"""

import math
import time

import numpy as np
import pytest

from maal import engine, scenarios
from maal.diagnostics import check_drift_bound, convergence_metrics
from maal.engine import (POINTWISE_AUGMENTATION, STEP_SQUARE_RATIO, PlayerView, Schedule,
                         player_step, run, validate_schedule)
from maal.equilibrium import (ExtendedOperator, ExtendedRegion, check_decoupling, check_nash,
                              check_vs_equals_sol, default_lambda_cap, feasible_grid, vi_residual)
from maal.game_model import AffineConstraint, estimate_constants
from maal.geometry import ActionSet
from maal.mirror import (Regularizer, check_coupling_inequalities, check_gradient_identity,
                         check_lipschitz)
from maal.oracle import solve_extragradient, solve_lq_kkt

COUPLING_TOL = 1e-8
FD_TOL = 1e-4
LIPSCHITZ_TOL = 1e-9
DRIFT_REL_TOL = 1e-6
FAULT_SCALE = 1e-3
DIST_TOL = 1e-3
VIOL_TOL = 1e-3
LAMBDA_TOL = 1e-2
ORACLE_AGREE = 1e-5
ORACLE_RESIDUAL = 1e-6
GRID_H = 1e-2


def _line(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")


def _setup(name):
    game, spec = scenarios.builtin(name)
    regs = spec.regularizers(game)
    return game, spec, regs, estimate_constants(game, seed=spec.seed, regularizers=regs)


def test_criterion_1_coupling_inequalities(capsys):
    t = time.perf_counter()
    regs = [Regularizer("euclidean", ActionSet.box([-1, 0, 0], [1, 2, 1])),
            Regularizer("entropic", ActionSet.simplex(4))]
    reps = [check_coupling_inequalities(r, trials=10_000, tol=COUPLING_TOL) for r in regs]
    faults = [check_coupling_inequalities(Regularizer(r.kind, r.domain, K=10 * r.K), trials=10_000)
              for r in regs]
    elapsed = time.perf_counter() - t
    worst = max(r.max_violation for r in reps)
    ok = all(r.passed for r in reps) and all(not f.passed for f in faults) and elapsed < 10
    _line(capsys, 1, "Fenchel coupling inequalities", ok,
          f"max violation {worst:.2e} (tol {COUPLING_TOL:g}), K-inflation caught "
          f"{[not f.passed for f in faults]}, {elapsed:.1f} s")
    assert ok


def test_criterion_2_mirror_map_identities(capsys):
    regs = [Regularizer("euclidean", ActionSet.box([-1, 0, 0], [1, 2, 1])),
            Regularizer("euclidean", ActionSet.ball([0, 1], 1.5)),
            Regularizer("entropic", ActionSet.simplex(4))]
    grads = [check_gradient_identity(r, points=1000, tol=FD_TOL) for r in regs]
    lips = [check_lipschitz(r, pairs=10_000, tol=LIPSCHITZ_TOL) for r in regs]
    ent3 = Regularizer("entropic", ActionSet.simplex(3))
    ent2 = Regularizer("entropic", ActionSet.simplex(2))
    logit = (np.allclose(ent3.mirror_map(np.zeros(3)), 1 / 3, rtol=0, atol=1e-15)
             and np.allclose(ent2.mirror_map(np.array([math.log(2), 0.0])), [2 / 3, 1 / 3],
                             rtol=0, atol=1e-15))
    ok = all(r.passed for r in grads + lips) and logit
    _line(capsys, 2, "mirror-map identities", ok,
          f"max FD error {max(r.max_violation for r in grads):.2e} (tol {FD_TOL:g}), "
          f"max Lipschitz excess {max(r.max_violation for r in lips):.2e} (tol {LIPSCHITZ_TOL:g}), "
          f"logit examples {logit}")
    assert ok


@pytest.mark.parametrize("name", ["lq2", "cournot_capacity"])
def test_criterion_3_drift_bound_ledger(capsys, name):
    game, spec, regs, c = _setup(name)
    sol = solve_lq_kkt(game)
    t = time.perf_counter()
    res = run(game, regs, spec.make_schedule(c), 100_000, stride=spec.stride, constants=c,
              reference=(sol.x, sol.lam))
    verdict = check_drift_bound(res.ledger, rel_tol=DRIFT_REL_TOL)
    fault = check_drift_bound(res.ledger, c.scaled_ctilde1(FAULT_SCALE), rel_tol=DRIFT_REL_TOL)
    elapsed = time.perf_counter() - t
    ok = verdict.passed and not fault.passed and elapsed < 60
    _line(capsys, 3, f"drift-bound ledger [{name}]", ok,
          f"{len(verdict.records)} records, worst relative excess {verdict.max_relative_violation:.2e} "
          f"(tol {DRIFT_REL_TOL:g}), fault excess {fault.max_relative_violation:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_4_schedule_certification(capsys):
    _, _, _, c = _setup("lq2")
    delta = engine.auto_delta(c)
    good = validate_schedule(Schedule.harmonic(delta), c)
    const = validate_schedule(Schedule.power(0.0, delta, gamma0=0.01), c)
    no_aug = validate_schedule(Schedule.harmonic(0.0), c)
    ok = (good.valid and good.t0 is not None and math.isfinite(good.t0)
          and STEP_SQUARE_RATIO in const.failing() and POINTWISE_AUGMENTATION in no_aug.failing())
    _line(capsys, 4, "schedule certification", ok,
          f"harmonic delta={delta:g} valid with t0={good.t0}; constant fails {const.failing()}; "
          f"theta=0 fails {no_aug.failing()}")
    assert ok


@pytest.mark.parametrize("name, horizon", [("lq2", 200_000), ("cournot_capacity", 200_000)])
def test_criterion_5_convergence(capsys, name, horizon):
    game, spec, regs, c = _setup(name)
    sol = solve_lq_kkt(game)
    t = time.perf_counter()
    res = run(game, regs, spec.make_schedule(c), horizon, stride=spec.stride, constants=c)
    elapsed = time.perf_counter() - t
    X, lam = res.final.X, res.final.lam
    dist = float(np.linalg.norm(X - sol.x))
    viol = float(np.linalg.norm(np.maximum(game.constraint.A @ X - game.constraint.b, 0.0)))
    lerr = float(np.linalg.norm(lam - sol.lam))
    ok = dist <= DIST_TOL and viol <= VIOL_TOL and lerr <= LAMBDA_TOL and elapsed < 120
    _line(capsys, 5, f"convergence [{name}, T={horizon}]", ok,
          f"|X-x*| {dist:.2e}, |(AX-b)+| {viol:.2e}, |lam-lam*| {lerr:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_6_cross_oracle_agreement(capsys):
    games = [scenarios.builtin("lq2")[0], scenarios.builtin("lq2", e=0.0)[0],
             scenarios.builtin("lq2", b=0.6)[0], scenarios.builtin("cournot_capacity")[0],
             scenarios.builtin("cournot_capacity", capacity=20.0)[0]]
    gaps, resid = [], []
    for g in games:
        k, e = solve_lq_kkt(g), solve_extragradient(g)
        gaps.append(max(np.max(np.abs(k.x - e.x)), np.max(np.abs(k.lam - e.lam))))
        resid.append(max(k.max_residual, e.max_residual))
    ok = max(gaps) <= ORACLE_AGREE and max(resid) <= ORACLE_RESIDUAL
    _line(capsys, 6, "cross-oracle agreement", ok,
          f"{len(games)} LQ games, max gap {max(gaps):.2e} (tol {ORACLE_AGREE:g}), "
          f"max residual {max(resid):.2e} (tol {ORACLE_RESIDUAL:g})")
    assert ok


def test_criterion_7_structure_checks(capsys):
    t = time.perf_counter()
    game, _ = scenarios.builtin("lq2")
    sol = solve_lq_kkt(game)
    nash = check_nash(game, sol.x, grid_resolution=GRID_H)
    # correspondence through the oracle pair, and across the Q grid
    op = ExtendedOperator(game)
    cap = default_lambda_cap(sol.lam.max())
    ext = vi_residual(op, ExtendedRegion(game, cap), np.append(sol.x, sol.lam)).value
    q_res = vi_residual(game.gradient, game, sol.x).value
    grid = feasible_grid(game, GRID_H)
    dec = check_decoupling(game, np.vstack([sol.x, grid[::10]]), lambda_cap=cap)
    vs_game = check_vs_equals_sol(game.gradient, game, h=GRID_H)
    # F = grad g for a concave g with its maximiser inside the box
    M = np.array([[2.0, 0.6], [0.6, 1.0]])
    c0 = np.array([0.35, 0.6])
    vs_grad = check_vs_equals_sol(lambda x: -M @ (x - c0), ActionSet.box([0, 0], [1, 1]), h=GRID_H)
    elapsed = time.perf_counter() - t
    ok = (nash.passed and ext <= 1e-8 and q_res <= 1e-8 and dec.passed
          and vs_game.passed and vs_grad.passed and elapsed < 60)
    _line(capsys, 7, "structure checks (h = 1e-2, dim 2)", ok,
          f"Nash {nash.passed}, extended residual {ext:.1e}, Q residual {q_res:.1e}, "
          f"correspondence on {dec.checked} points {dec.passed}, VS=SOL monotone "
          f"{vs_game.passed} (Hausdorff {vs_game.details['hausdorff']:.3f}), VS=SOL grad "
          f"{vs_grad.passed}, {elapsed:.1f} s")
    assert ok


def test_criterion_8_determinism_and_locality(capsys):
    game, spec, regs, c = _setup("lq2")
    sched = spec.make_schedule(c)
    a = run(game, regs, sched, 10_000, stride=3, constants=c, record_duals=True)
    b = run(game, regs, sched, 10_000, stride=3, constants=c, record_duals=True)
    same = (a.X.tobytes() == b.X.tobytes() and a.lam.tobytes() == b.lam.tobytes()
            and a.Y.tobytes() == b.Y.tobytes())

    con = game.constraint
    calls = []

    def poisoned(i):
        blocks = [con.block(j) if j == i else np.full_like(con.block(j), np.nan)
                  for j in range(game.n_players)]
        return AffineConstraint(blocks, con.b)

    def tainted_step(view, Y_i, gamma_t):
        i = len(calls) % game.n_players
        calls.append(i)
        out = player_step(view, Y_i, gamma_t)
        # rebuild the view from a state where every other player's data is NaN
        v = np.full(game.dim, np.nan)
        v[game.slices[i]] = view.gradient
        dirty = engine.player_view(poisoned(i), game.slices, i, v, view.price)
        if not np.array_equal(out, player_step(dirty, Y_i.copy(), gamma_t)):
            raise AssertionError(f"player {i} read foreign data")
        return out

    taint = run(game, regs, sched, 1000, constants=c, step=tainted_step)
    plain = run(game, regs, sched, 1000, constants=c)
    local = (set(f for f in PlayerView.__dataclass_fields__) == {"gradient", "block", "price"}
             and plain.X.tobytes() == taint.X.tobytes() and len(calls) == 1000 * game.n_players)
    ok = same and local
    _line(capsys, 8, "determinism and locality", ok,
          f"bit-identical reruns {same}, taint test {local}")
    assert ok
