"""Nash equilibria, variational inequalities and variational stability.

Sign convention: ``F`` is monotone when ``<x1 - x2, F(x1) - F(x2)> <= 0``
and ``x_bar`` solves ``VI(Z, F)`` when ``<x - x_bar, F(x_bar)> <= 0`` for
all ``x`` in ``Z``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from ._report import DiagnosticReport
from .game_model import Game, _stack_linear, maximize_linear, solve_over_q
from .geometry import ActionSet

GRID_STEP = 1e-2
MAX_GRID_DIM = 3
MAX_PAIR_GRID = 40_000  # all-pairs VS/SOL scans are quadratic in the grid size


class ExtendedOperator:
    """``(x, lam) -> (v(x) - A^T lam, A x - b)`` on ``X x R^M_+``.

    Call with ``(x, lam)`` or with one stacked vector ``z = (x, lam)``.
    """

    def __init__(self, game):
        self.game = game
        self.n = game.dim
        self.m = game.constraint.rows
        self.dim = self.n + self.m

    def split(self, z):
        return z[:self.n], z[self.n:]

    def __call__(self, x, lam=None):
        if lam is None:
            x, lam = self.split(np.asarray(x, dtype=float))
        A, b = self.game.constraint.A, self.game.constraint.b
        return np.concatenate([self.game.gradient(x) - A.T @ lam, A @ x - b])


def extended_operator(game):
    return ExtendedOperator(game)


@dataclass(frozen=True)
class ExtendedRegion:
    """``X x [0, lambda_cap]^M``: the price orthant truncated to a finite box."""

    game: Game
    lambda_cap: float


def natural_residual(game, x, lam):
    """Norm of ``z - Pi(z + v~(z))`` on ``X x R^M_+`` (zero exactly at solutions)."""
    A, b = game.constraint.A, game.constraint.b
    gx = game.gradient(x) - A.T @ lam
    rx = x - game.project_x(x + gx)
    rl = lam - np.maximum(lam + (A @ x - b), 0.0)
    return float(np.sqrt(rx @ rx + rl @ rl))


@dataclass
class ViResidual:
    point: np.ndarray
    value: float
    direction: np.ndarray
    lambda_cap: Optional[float] = None


def _argmax_linear(Z, c):
    if isinstance(Z, Game):
        x = solve_over_q(Z, c)
    elif isinstance(Z, ExtendedRegion):
        g = Z.game
        xs = maximize_linear(g.sets, g.slices, g.dim, c[:g.dim])
        lam = np.where(c[g.dim:] > 0, Z.lambda_cap, 0.0)
        x = None if xs is None else np.concatenate([xs, lam])
    elif isinstance(Z, ActionSet):
        if Z.kind == "euclidean_ball":
            n = np.linalg.norm(c)
            x = Z.params["center"] + (Z.params["radius"] / n * c if n > 0 else 0.0)
        else:
            x = maximize_linear([Z], [slice(0, Z.dim)], Z.dim, c)
    else:
        raise TypeError(f"unsupported region {type(Z).__name__}")
    if x is None:
        raise RuntimeError("linear program over the region is infeasible")
    return x


def _region_contains(Z, z, tol):
    if isinstance(Z, Game):
        return Z.contains(z, tol)
    if isinstance(Z, ExtendedRegion):
        g = Z.game
        x, lam = z[:g.dim], z[g.dim:]
        return (all(S.contains(x[s], tol) for S, s in zip(g.sets, g.slices))
                and bool(np.all(lam >= -tol)) and bool(np.all(lam <= Z.lambda_cap + tol)))
    return Z.contains(z, tol)


def vi_residual(F, Z, point, tol=1e-6, check_membership=True):
    """``max_{x in Z} <x - point, F(point)>``.

    ``Z`` is an :class:`ActionSet`, a :class:`Game` (meaning its coupled set
    Q) or an :class:`ExtendedRegion`. A value ``<= 1e-8`` certifies an
    approximate solution.
    """
    point = np.asarray(point, dtype=float)
    if check_membership and not _region_contains(Z, point, tol):
        raise ValueError("point is not in the region")
    c = np.asarray(F(point), dtype=float)
    x = _argmax_linear(Z, c)
    cap = Z.lambda_cap if isinstance(Z, ExtendedRegion) else None
    return ViResidual(point, float(c @ (x - point)), x - point, cap)


def default_lambda_cap(lam_sup):
    return 10.0 * (1.0 + float(lam_sup))


def min_extended_residual(game, x, lambda_cap):
    """``min over lam in [0, cap]^M`` of the extended VI residual at ``(x, lam)``.

    Solved as one LP through the dual description of ``max_{X} <c, x>``;
    needs polyhedral action sets. Returns ``(value, lam)``.
    """
    if not all(S.is_polyhedral for S in game.sets):
        raise ValueError("min_extended_residual needs polyhedral action sets")
    A, b = game.constraint.A, game.constraint.b
    G, h, E, e = _stack_linear(game.sets, game.slices, game.dim)
    v = game.gradient(x)
    w = A @ x - b
    nG, nE, m = G.shape[0], E.shape[0], A.shape[0]
    # variables (mu >= 0, nu free, lam in [0, cap]); G^T mu + E^T nu + A^T lam = v
    cost = np.concatenate([h, e, b])
    Aeq = np.hstack([G.T, E.T, A.T])
    bounds = [(0, None)] * nG + [(None, None)] * nE + [(0, lambda_cap)] * m
    res = linprog(cost, A_eq=Aeq, b_eq=v, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"extended residual LP failed: {res.message}")
    const = -float(x @ v) + float(np.sum(np.maximum(0.0, lambda_cap * w)))
    return float(res.fun) + const, res.x[nG + nE:]


# -- grids -----------------------------------------------------------------------


def feasible_grid(Z, h=GRID_STEP):
    """Grid points of an action set, or of a game's coupled set Q."""
    if isinstance(Z, ActionSet):
        if Z.dim > MAX_GRID_DIM:
            raise ValueError(f"grid search is capped at dimension {MAX_GRID_DIM}")
        return Z.grid(h)
    if Z.dim > MAX_GRID_DIM:
        raise ValueError(f"grid search is capped at dimension {MAX_GRID_DIM}")
    parts = [S.grid(h) for S in Z.sets]
    idx = itertools.product(*[range(len(p)) for p in parts])
    pts = np.array([np.concatenate([p[k] for p, k in zip(parts, ks)]) for ks in idx])
    keep = np.all(pts @ Z.constraint.A.T <= Z.constraint.b + 1e-12, axis=1)
    return pts[keep]


def check_nash(game, x, grid_resolution=GRID_STEP, tol=1e-9):
    """Best unilateral grid improvement for every player at profile ``x``."""
    x = np.asarray(x, dtype=float)
    if any(p.utility is None for p in game.players):
        raise ValueError("check_nash needs utility oracles for every player")
    A, b = game.constraint.A, game.constraint.b
    improvements = []
    for i, (S, s) in enumerate(zip(game.sets, game.slices)):
        if S.dim > MAX_GRID_DIM:
            raise ValueError(f"player {i} has dimension {S.dim} > {MAX_GRID_DIM}")
        base = game.utility(i, x)
        best = -np.inf
        for g in S.grid(grid_resolution):
            z = x.copy()
            z[s] = g
            if np.all(A @ z <= b + 1e-12):
                best = max(best, game.utility(i, z))
        improvements.append(float(best - base))
    worst = max(improvements)
    bad = sum(v > tol for v in improvements)
    return DiagnosticReport("nash-grid", bad == 0, game.n_players, int(bad), worst,
                            details={"improvements": improvements, "grid_resolution": grid_resolution,
                                     "tolerance": tol})


def _estimate_lipschitz(P, FP, rng, k=300):
    idx = rng.choice(len(P), size=min(k, len(P)), replace=False)
    Pk, Fk = P[idx], FP[idx]
    dp = np.linalg.norm(Pk[:, None] - Pk[None], axis=2)
    df = np.linalg.norm(Fk[:, None] - Fk[None], axis=2)
    mask = dp > 0
    return float(np.max(df[mask] / dp[mask])) if mask.any() else 0.0


def _hausdorff(P, Q):
    if len(P) == 0 or len(Q) == 0:
        return np.inf if len(P) + len(Q) else 0.0
    d = np.linalg.norm(P[:, None] - Q[None], axis=2)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def grid_sets(F, Z, h=GRID_STEP, tol_factor=1.0, lipschitz=None, seed=0, chunk=None):
    """Discrete SOL and VS sets of ``(Z, F)`` on a grid of spacing ``h``.

    Residuals are normalised by ``|x - x_bar|`` so that both sets shrink
    linearly with ``h``; a point belongs to a set when its residual is at
    most ``tol_factor * L * h * sqrt(dim)``.
    """
    P = feasible_grid(Z, h)
    if len(P) > MAX_PAIR_GRID:
        raise ValueError(f"grid has {len(P)} points; the pairwise scan is capped at {MAX_PAIR_GRID} "
                         f"(use a coarser step)")
    FP = np.array([F(p) for p in P])
    d = P.shape[1]
    if chunk is None:
        chunk = max(1, 4_000_000 // (len(P) * d))
    L = _estimate_lipschitz(P, FP, np.random.default_rng(seed)) if lipschitz is None else lipschitz
    tol = tol_factor * L * h * np.sqrt(d) + 1e-12
    r_sol = np.empty(len(P))
    r_vs = np.empty(len(P))
    for lo in range(0, len(P), chunk):
        U = P[None, :, :] - P[lo:lo + chunk, None, :]
        nrm = np.linalg.norm(U, axis=2)
        zero = nrm == 0
        nrm[zero] = 1.0
        sol = np.einsum("cnd,cd->cn", U, FP[lo:lo + chunk]) / nrm
        vs = np.einsum("cnd,nd->cn", U, FP) / nrm
        sol[zero] = -np.inf
        vs[zero] = -np.inf
        r_sol[lo:lo + chunk] = sol.max(axis=1)
        r_vs[lo:lo + chunk] = vs.max(axis=1)
    return P, r_sol <= tol, r_vs <= tol, {"tolerance": float(tol), "lipschitz": L,
                                          "r_sol": r_sol, "r_vs": r_vs}


def check_vs_equals_sol(F, Z, h=GRID_STEP, tol_factor=1.0, seed=0):
    """Compare the discrete VS and SOL sets.

    Passes when both sets are non-empty and their Hausdorff distance is at
    most ``2 h sqrt(dim)``. An empty VS set is reported as a failed
    precondition rather than a contradiction.
    """
    P, in_sol, in_vs, info = grid_sets(F, Z, h, tol_factor, seed=seed)
    S, V = P[in_sol], P[in_vs]
    haus = _hausdorff(S, V)
    limit = 2.0 * h * np.sqrt(P.shape[1])
    sym = int(np.sum(in_sol ^ in_vs))
    passed = len(S) > 0 and len(V) > 0 and haus <= limit
    rep = DiagnosticReport("vs-equals-sol", passed, len(P), sym, haus - limit,
                           details={"sol_points": S.tolist(), "vs_points": V.tolist(),
                                    "symmetric_difference": sym, "hausdorff": haus,
                                    "hausdorff_limit": limit, "tolerance": info["tolerance"],
                                    "lipschitz": info["lipschitz"]})
    if len(V) == 0:
        rep.messages.append("VS set is empty: the precondition VS != {} fails, so VS = SOL is not implied")
    elif not passed:
        rep.messages.append("discrete VS and SOL sets differ")
    return rep


def check_monotone(F, points, pairs=2000, seed=0, tol=1e-9):
    """``<x1 - x2, F(x1) - F(x2)> <= tol`` on random pairs of ``points``."""
    rng = np.random.default_rng(seed)
    P = np.asarray(points, dtype=float)
    i = rng.integers(0, len(P), pairs)
    j = rng.integers(0, len(P), pairs)
    vals = np.array([(P[a] - P[b]) @ (F(P[a]) - F(P[b])) for a, b in zip(i, j)])
    bad = int(np.sum(vals > tol))
    return DiagnosticReport("monotonicity", bad == 0, pairs, bad, float(vals.max()))


def check_decoupling(game, points, lambda_cap, tol=1e-8):
    """At each point compare 'solves VI(Q, v)' with 'some lam makes (x, lam) solve the extended VI'."""
    agree = 0
    rows = []
    for x in np.atleast_2d(points):
        rq = vi_residual(game.gradient, game, x, check_membership=False).value
        re, lam = min_extended_residual(game, x, lambda_cap)
        same = (rq <= tol) == (re <= tol)
        agree += same
        rows.append({"point": x.tolist(), "q_residual": rq, "extended_residual": re,
                     "lambda": lam.tolist(), "agree": bool(same)})
    n = len(rows)
    return DiagnosticReport("vi-decoupling", agree == n, n, n - agree,
                            float(n - agree), details={"rows": rows, "tolerance": tol,
                                                       "lambda_cap": lambda_cap})
