"""Reference equilibria for small games, computed without the mirror-ascent engine.

Two unrelated methods: exhaustive active-set enumeration of the KKT system
for affine pseudo-gradients, and projected extragradient on the extended
operator over ``X x [0, cap]^M``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .game_model import _stack_linear
from .equilibrium import ExtendedOperator

ACCEPT_TOL_KKT = 1e-9
ACCEPT_TOL_EG = 1e-6


class OracleError(RuntimeError):
    pass


@dataclass
class KktSolution:
    x: np.ndarray
    lam: np.ndarray
    stationarity: float
    complementarity: float
    feasibility: float
    method: str = ""
    iterations: int = 0

    @property
    def max_residual(self):
        return max(self.stationarity, self.complementarity, self.feasibility)

    def to_dict(self):
        return {"x": self.x.tolist(), "lambda": self.lam.tolist(),
                "stationarity": self.stationarity, "complementarity": self.complementarity,
                "feasibility": self.feasibility, "method": self.method}


def kkt_residuals(game, x, lam):
    """(stationarity, complementarity, feasibility) at ``(x, lam)``.

    Stationarity is the natural-map residual ``|x - Pi_X(x + v(x) - A^T lam)|``.
    """
    A, b = game.constraint.A, game.constraint.b
    g = game.gradient(x) - A.T @ lam
    stat = float(np.linalg.norm(x - game.project_x(x + g)))
    slack = b - A @ x
    comp = float(np.max(np.abs(lam * slack))) if lam.size else 0.0
    feas = float(np.linalg.norm(np.maximum(-slack, 0.0)) + np.linalg.norm(x - game.project_x(x))
                 + np.linalg.norm(np.minimum(lam, 0.0)))
    return stat, comp, feas


def solve_lq_kkt(game, tol=ACCEPT_TOL_KKT, max_size=10):
    """Solve the KKT system of ``VI(Q, v)`` for ``v(x) = P x + q`` by active-set enumeration.

    Every subset of the inequality rows of X and of ``A x <= b`` is tried as
    the active set, smallest first; the first candidate whose independent
    residuals are all ``<= tol`` is returned.
    """
    if game.affine is None:
        raise OracleError("solve_lq_kkt needs a game with an affine pseudo-gradient")
    if not all(S.is_polyhedral for S in game.sets):
        raise OracleError("solve_lq_kkt needs polyhedral action sets")
    n, m = game.dim, game.constraint.rows
    if n + m > max_size:
        raise OracleError(f"total dimension + constraint rows = {n + m} exceeds {max_size}")
    P, q = game.affine
    G, h, E, e = _stack_linear(game.sets, game.slices, n)
    A, b = game.constraint.A, game.constraint.b
    rows = np.vstack([G, A])
    rhs = np.concatenate([h, b])
    nG, R, nE = G.shape[0], G.shape[0] + m, E.shape[0]
    for k in range(0, min(R, n) + 1):
        for S in itertools.combinations(range(R), k):
            S = list(S)
            N = rows[S]
            # P x + q = N^T mult + E^T nu ;  N x = rhs_S ;  E x = e
            K = np.zeros((n + k + nE, n + k + nE))
            K[:n, :n] = P
            K[:n, n:n + k] = -N.T
            K[:n, n + k:] = -E.T
            K[n:n + k, :n] = N
            K[n + k:, :n] = E
            r = np.concatenate([-q, rhs[S], e])
            sol, *_ = np.linalg.lstsq(K, r, rcond=None)
            if np.linalg.norm(K @ sol - r) > 1e-10 * (1 + np.linalg.norm(r)):
                continue
            x, mult = sol[:n], sol[n:n + k]
            if np.any(mult < -1e-12) or np.any(rows @ x > rhs + 1e-10) or (nE and np.any(np.abs(E @ x - e) > 1e-10)):
                continue
            lam = np.zeros(m)
            for j, row in enumerate(S):
                if row >= nG:
                    lam[row - nG] = max(mult[j], 0.0)
            x = game.project_x(x)
            stat, comp, feas = kkt_residuals(game, x, lam)
            if max(stat, comp, feas) <= tol:
                return KktSolution(x, lam, stat, comp, feas, method="active-set")
    raise OracleError("no enumerated active set yields a verified KKT point")


def _lipschitz_extended(game, op, cap, rng, samples=2000):
    xs = game.sample(rng, 2 * samples)
    ls = cap * rng.random((2 * samples, game.constraint.rows))
    z = np.hstack([xs, ls])
    F = np.array([op(zz) for zz in z])
    dz = np.linalg.norm(z[:samples] - z[samples:], axis=1)
    dF = np.linalg.norm(F[:samples] - F[samples:], axis=1)
    ok = dz > 1e-12
    return float(np.max(dF[ok] / dz[ok]))


def solve_extragradient(game, lambda_cap=10.0, iters=200_000, tol=ACCEPT_TOL_EG, seed=0,
                        target=1e-11, max_doublings=8):
    """Projected extragradient on ``v~`` over ``X x [0, lambda_cap]^M``.

    Step ``1/L`` with ``L`` a sampled Lipschitz estimate times 1.25. If the
    price iterate ends on the cap, the cap is doubled and the solve repeated.
    """
    op = ExtendedOperator(game)
    rng = np.random.default_rng(seed)
    cap = float(lambda_cap)
    for _ in range(max_doublings + 1):
        L = 1.25 * _lipschitz_extended(game, op, cap, rng)
        eta = 1.0 / L
        x = np.concatenate([S.center() for S in game.sets])
        lam = np.zeros(game.constraint.rows)
        A, b = game.constraint.A, game.constraint.b

        def proj(x, lam):
            return game.project_x(x), np.clip(lam, 0.0, cap)

        k = 0
        for k in range(1, iters + 1):
            gx = game.gradient(x) - A.T @ lam
            gl = A @ x - b
            xh, lh = proj(x + eta * gx, lam + eta * gl)
            gx2 = game.gradient(xh) - A.T @ lh
            gl2 = A @ xh - b
            xn, ln = proj(x + eta * gx2, lam + eta * gl2)
            step = np.sqrt(np.sum((xn - x) ** 2) + np.sum((ln - lam) ** 2))
            x, lam = xn, ln
            if step / eta <= target:
                break
        if np.any(lam >= cap - 1e-9):
            cap *= 2.0
            continue
        stat, comp, feas = kkt_residuals(game, x, lam)
        sol = KktSolution(x, lam, stat, comp, feas, method="extragradient", iterations=k)
        if sol.max_residual > tol:
            raise OracleError(f"extragradient residual {sol.max_residual:.3e} exceeds {tol:g} "
                              f"after {k} iterations")
        return sol
    raise OracleError(f"price iterate keeps hitting the cap (last cap {cap:g})")
