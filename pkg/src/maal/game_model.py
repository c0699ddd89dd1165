"""Concave N-player games with an affine coupling constraint ``A x <= b``."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog, minimize

from ._report import DiagnosticReport
from .geometry import ActionSet

SAFETY_FACTOR = 1.25
POWER_ITER_TOL = 1e-10


class GameError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PlayerSpec:
    """One player: an action set and a gradient oracle over full profiles.

    ``gradient(x)`` receives the full concatenated profile and returns the
    partial gradient of the player's utility with respect to its own block.
    ``utility`` is optional and only used by diagnostics.
    """

    action_set: ActionSet
    gradient: Callable[[np.ndarray], np.ndarray]
    utility: Optional[Callable[[np.ndarray], float]] = None
    name: str = ""

    @property
    def dim(self):
        return self.action_set.dim


class AffineConstraint:
    """Coupling constraint ``A x <= b`` stored as per-player column blocks."""

    def __init__(self, blocks: Sequence, b):
        self._blocks = []
        b = np.atleast_1d(np.asarray(b, dtype=float))
        for blk in blocks:
            blk = np.array(blk, dtype=float, ndmin=2)
            if blk.shape[0] != b.size:
                raise GameError(f"constraint block has {blk.shape[0]} rows, expected {b.size}")
            blk.setflags(write=False)
            self._blocks.append(blk)
        b.setflags(write=False)
        self.b = b
        self.A = np.hstack(self._blocks)
        self.A.setflags(write=False)

    @classmethod
    def from_matrix(cls, A, b, dims):
        A = np.array(A, dtype=float, ndmin=2)
        if A.shape[1] != sum(dims):
            raise GameError(f"A has {A.shape[1]} columns but the game has total dimension {sum(dims)}")
        edges = np.cumsum([0, *dims])
        return cls([A[:, edges[i]:edges[i + 1]] for i in range(len(dims))], b)

    @property
    def rows(self):
        return self.b.size

    @property
    def block_dims(self):
        return [blk.shape[1] for blk in self._blocks]

    def block(self, i):
        """Player ``i``'s own contribution ``A_(:,i)``; the only view a player gets."""
        return self._blocks[i]

    def slack(self, x):
        return self.b - self.A @ x

    def violation(self, x):
        return float(np.linalg.norm(np.maximum(self.A @ x - self.b, 0.0)))


class Game:
    """An N-player concave game with coupled feasible set ``Q = X ∩ {Ax <= b}``.

    Parameters
    ----------
    players : list of PlayerSpec
    constraint : AffineConstraint
    affine : tuple (P, q), optional
        Declares ``v(x) = P x + q`` exactly; required by the KKT oracle.
    joint_gradient : callable, optional
        Vectorised ``x -> v(x)``; must agree with the per-player oracles.
    """

    def __init__(self, players, constraint, affine=None, joint_gradient=None, name=""):
        self.players = list(players)
        self.constraint = constraint
        self.name = name
        if constraint.block_dims != [p.dim for p in self.players]:
            raise GameError("constraint block dimensions do not match player dimensions")
        self.dims = [p.dim for p in self.players]
        edges = np.cumsum([0, *self.dims])
        self.slices = [slice(int(edges[i]), int(edges[i + 1])) for i in range(len(self.players))]
        self.dim = int(edges[-1])
        if affine is not None:
            P, q = affine
            P = np.array(P, dtype=float, ndmin=2)
            q = np.asarray(q, dtype=float)
            if P.shape != (self.dim, self.dim) or q.shape != (self.dim,):
                raise GameError("affine gradient data has the wrong shape")
            affine = (P, q)
        self.affine = affine
        self._joint = joint_gradient
        if solve_over_q(self, np.zeros(self.dim)) is None:
            raise GameError("feasible set Q = X ∩ {Ax <= b} is empty")

    @property
    def n_players(self):
        return len(self.players)

    @property
    def sets(self):
        return [p.action_set for p in self.players]

    def split(self, x):
        return [x[s] for s in self.slices]

    def join(self, blocks):
        return np.concatenate([np.asarray(b, dtype=float) for b in blocks])

    def gradient(self, x):
        """Full pseudo-gradient ``v(x) = (v_1(x), ..., v_N(x))``."""
        if self._joint is not None:
            return self._joint(x)
        return np.concatenate([p.gradient(x) for p in self.players])

    def player_gradient(self, i, x):
        g = np.asarray(self.players[i].gradient(x), dtype=float)
        if g.shape != (self.dims[i],):
            raise GameError(f"player {i} gradient has shape {g.shape}, expected ({self.dims[i]},)")
        return g

    def utility(self, i, x):
        u = self.players[i].utility
        if u is None:
            raise GameError(f"player {i} has no utility oracle")
        return float(u(x))

    def contains(self, x, tol=1e-9):
        return (all(S.contains(x[s], tol) for S, s in zip(self.sets, self.slices))
                and bool(np.all(self.constraint.A @ x <= self.constraint.b + tol)))

    def project_x(self, x):
        return np.concatenate([S.project(x[s]) for S, s in zip(self.sets, self.slices)])

    def sample(self, rng, n):
        return np.hstack([S.sample(rng, n) for S in self.sets])

    def dual_norm(self, v):
        """Dual of the sum norm: max over blocks of the per-block dual norms."""
        return max(S.dual_norm(v[s]) for S, s in zip(self.sets, self.slices))

    def norm(self, x):
        return sum(S.norm(x[s]) for S, s in zip(self.sets, self.slices))


def _stack_linear(sets, slices, dim):
    Gs, hs, Es, es = [], [], [], []
    for S, s in zip(sets, slices):
        if not S.is_polyhedral:
            continue
        G, h, E, e = S.inequalities()
        Gf = np.zeros((G.shape[0], dim))
        Gf[:, s] = G
        Ef = np.zeros((E.shape[0], dim))
        Ef[:, s] = E
        Gs.append(Gf)
        hs.append(h)
        Es.append(Ef)
        es.append(e)
    G = np.vstack(Gs) if Gs else np.zeros((0, dim))
    E = np.vstack(Es) if Es else np.zeros((0, dim))
    return G, np.concatenate(hs) if hs else np.zeros(0), E, np.concatenate(es) if es else np.zeros(0)


def _ball_blocks(sets, slices):
    return [(s, S.params["center"], S.params["radius"]) for S, s in zip(sets, slices)
            if S.kind == "euclidean_ball"]


def maximize_linear(sets, slices, dim, c, A=None, b=None):
    """Maximise ``c @ x`` over ``prod X_i`` (intersected with ``A x <= b``).

    Returns the maximiser, or ``None`` when the region is empty. Polyhedral
    products use HiGHS; anything with a ball goes through SLSQP.
    """
    c = np.asarray(c, dtype=float)
    G, h, E, e = _stack_linear(sets, slices, dim)
    if A is not None:
        G = np.vstack([G, A])
        h = np.concatenate([h, b])
    balls = _ball_blocks(sets, slices)
    if not balls:
        res = linprog(-c, A_ub=G if G.size else None, b_ub=h if G.size else None,
                      A_eq=E if E.size else None, b_eq=e if E.size else None,
                      bounds=[(None, None)] * dim, method="highs")
        if res.status == 2:
            return None
        if res.status != 0:
            raise RuntimeError(f"LP over the feasible set failed: {res.message}")
        return res.x
    cons = []
    if G.size:
        cons.append({"type": "ineq", "fun": lambda x: h - G @ x, "jac": lambda x: -G})
    if E.size:
        cons.append({"type": "eq", "fun": lambda x: E @ x - e, "jac": lambda x: E})
    for s, ctr, r in balls:
        def f(x, s=s, ctr=ctr, r=r):
            d = x[s] - ctr
            return r * r - d @ d
        cons.append({"type": "ineq", "fun": f})
    x0 = np.concatenate([S.center() for S in sets])
    res = minimize(lambda x: -c @ x, x0, jac=lambda x: -c, constraints=cons,
                   method="SLSQP", options={"ftol": 1e-12, "maxiter": 500})
    x = res.x
    ok = all(S.contains(x[s], 1e-7) for S, s in zip(sets, slices))
    if A is not None:
        ok = ok and bool(np.all(A @ x <= b + 1e-7))
    return x if ok else None


def solve_over_q(game, c):
    return maximize_linear(game.sets, game.slices, game.dim, c,
                           game.constraint.A, game.constraint.b)


# -- constants -------------------------------------------------------------


@dataclass(frozen=True)
class GameConstants:
    """Boundedness constants of the game.

    ``C1 >= sup ||v(x)||_*``, ``||A^T lam||_* <= C2 ||lam||_2`` and
    ``C3 >= sup ||A x||_2`` over X; ``K`` is the smallest strong-convexity
    modulus among the players' regularizers.
    """

    C1: float
    C2: float
    C3: float
    K: float = 1.0

    def __post_init__(self):
        for name in ("C1", "C2", "C3", "K"):
            if not getattr(self, name) > 0:
                raise GameError(f"constant {name} must be strictly positive")

    @property
    def Ctilde1(self):
        return self.C1 ** 2 / (2.0 * self.K) + 2.0 * self.C3 ** 2

    @property
    def Ctilde2(self):
        return self.C2 ** 2 / (2.0 * self.K)

    def scaled_ctilde1(self, factor):
        """Copy whose ``Ctilde1`` is multiplied by ``factor`` (fault injection)."""
        r = float(np.sqrt(factor))
        return GameConstants(self.C1 * r, self.C2, self.C3 * r, self.K)

    def to_dict(self):
        return {"C1": self.C1, "C2": self.C2, "C3": self.C3, "K": self.K,
                "Ctilde1": self.Ctilde1, "Ctilde2": self.Ctilde2}


def spectral_norm(M, tol=POWER_ITER_TOL, max_iter=100_000):
    """Largest singular value of ``M`` by power iteration on ``M^T M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.any(M):
        return 0.0
    MtM = M.T @ M
    v = np.ones(MtM.shape[0]) / np.sqrt(MtM.shape[0])
    v += 1e-3 * np.arange(v.size)  # avoid starting orthogonal to the top vector
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = MtM @ v
        new = float(np.linalg.norm(w))
        if new == 0.0:
            v = np.random.default_rng(0).standard_normal(v.size)
            v /= np.linalg.norm(v)
            continue
        v = w / new
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(np.sqrt(est))


def operator_norm_c2(game):
    """Smallest C2 with ``||A^T lam||_* <= C2 ||lam||_2`` for the block-max dual norm."""
    vals = []
    for S, i in zip(game.sets, range(game.n_players)):
        blk = game.constraint.block(i)
        if S.dual_norm_kind == "linf":
            # max_k |a_k . lam| <= max_k ||a_k||_2 ||lam||_2, attained at lam = a_k
            vals.append(float(np.max(np.linalg.norm(blk, axis=0))))
        else:
            vals.append(spectral_norm(blk))
    return max(vals)


def _profile_extremes(game, limit=65536):
    verts = [S.vertices() for S in game.sets]
    if any(v is None for v in verts):
        return None
    count = int(np.prod([len(v) for v in verts]))
    if count > limit:
        return None
    grids = np.meshgrid(*[np.arange(len(v)) for v in verts], indexing="ij")
    idx = [g.ravel() for g in grids]
    return np.hstack([verts[i][idx[i]] for i in range(len(verts))])


def estimate_constants(game, samples=2000, seed=0, regularizers=None, c1=None):
    """Estimate ``GameConstants`` for ``game``.

    C2 is exact. C3 is exact when every set is a box or simplex (vertex
    enumeration), a triangle-inequality bound when balls are present, and a
    sampled maximum times 1.25 otherwise. C1 is a sampled maximum (vertices
    included when enumerable) times 1.25, unless ``c1`` supplies an analytic
    bound.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    C2 = operator_norm_c2(game)
    if C2 == 0.0:
        raise GameError("constraint matrix is zero; run unconstrained mirror ascent instead")
    rng = np.random.default_rng(seed)
    pts = game.sample(rng, samples)
    extremes = _profile_extremes(game)
    if extremes is not None:
        pts = np.vstack([pts, extremes])
    A = game.constraint.A

    if extremes is not None:
        C3 = float(np.max(np.linalg.norm(extremes @ A.T, axis=1)))
    elif all(S.kind in ("box", "simplex", "euclidean_ball") for S in game.sets):
        C3 = 0.0
        centre = np.zeros(game.dim)
        for i, (S, s) in enumerate(zip(game.sets, game.slices)):
            if S.kind == "euclidean_ball":
                centre[s] = S.params["center"]
                C3 += S.params["radius"] * spectral_norm(game.constraint.block(i))
            else:
                ex = S.vertices()
                C3 += float(np.max(np.linalg.norm(ex @ game.constraint.block(i).T, axis=1)))
        C3 = max(C3, float(np.linalg.norm(A @ centre)))
    else:
        C3 = SAFETY_FACTOR * float(np.max(np.linalg.norm(pts @ A.T, axis=1)))
    if C3 == 0.0:
        C3 = 1e-12

    if c1 is None:
        C1 = SAFETY_FACTOR * max(game.dual_norm(game.gradient(x)) for x in pts)
        if C1 == 0.0:
            C1 = 1e-12
    else:
        C1 = float(c1)
    K = min(r.K for r in regularizers) if regularizers else 1.0
    return GameConstants(C1=C1, C2=C2, C3=C3, K=K)


# -- assumption checks ---------------------------------------------------------


@dataclass
class SlaterCertificate:
    holds: bool
    point: Optional[np.ndarray]
    constraint_slack: float
    interior_margin: float

    def to_dict(self):
        return {"holds": self.holds,
                "point": None if self.point is None else self.point.tolist(),
                "constraint_slack": self.constraint_slack,
                "interior_margin": self.interior_margin}


def check_slater(game, tol=1e-9):
    """Look for ``x`` in relint(X) with ``A x < b`` by maximising the smallest slack.

    The slack variable ``s`` bounds both the coupling rows and the relative
    interior margin of X (normalised inequality rows, or radius for balls).
    """
    n = game.dim
    G, h, E, e = _stack_linear(game.sets, game.slices, n)
    rn = np.linalg.norm(G, axis=1) if G.size else np.zeros(0)
    A, b = game.constraint.A, game.constraint.b
    Ga = np.vstack([np.hstack([G, rn[:, None]]), np.hstack([A, np.ones((A.shape[0], 1))])])
    ha = np.concatenate([h, b])
    Ea = np.hstack([E, np.zeros((E.shape[0], 1))])
    balls = _ball_blocks(game.sets, game.slices)
    cobj = np.zeros(n + 1)
    cobj[-1] = 1.0
    if not balls:
        res = linprog(-cobj, A_ub=Ga, b_ub=ha, A_eq=Ea if Ea.size else None, b_eq=e if Ea.size else None,
                      bounds=[(None, None)] * n + [(None, 1.0)], method="highs")
        z = res.x if res.status == 0 else None
    else:
        cons = [{"type": "ineq", "fun": lambda z: ha - Ga @ z, "jac": lambda z: -Ga}]
        if Ea.size:
            cons.append({"type": "eq", "fun": lambda z: Ea @ z - e, "jac": lambda z: Ea})
        for s, ctr, r in balls:
            def f(z, s=s, ctr=ctr, r=r):
                return r - np.linalg.norm(z[:-1][s] - ctr) - z[-1]
            cons.append({"type": "ineq", "fun": f})
        z0 = np.append(np.concatenate([S.center() for S in game.sets]), 0.0)
        res = minimize(lambda z: -z[-1], z0, constraints=cons, method="SLSQP",
                       bounds=[(None, None)] * n + [(None, 1.0)],
                       options={"ftol": 1e-12, "maxiter": 500})
        z = res.x
    if z is None:
        return SlaterCertificate(False, None, float("-inf"), float("-inf"))
    x = z[:-1]
    slack = float(np.min(b - A @ x))
    margin = float(z[-1])
    holds = margin > tol and slack > tol
    return SlaterCertificate(holds, x if holds else None, slack, margin)


def check_concavity(game, player, samples=200, seed=0, tol=1e-9):
    """Spot-check monotonicity of ``v_i`` in the player's own block.

    Concavity cannot be certified from an oracle; violations are reported and
    raise a warning, never an exception.
    """
    i = player if isinstance(player, (int, np.integer)) else game.players.index(player)
    rng = np.random.default_rng(seed)
    S, s = game.sets[i], game.slices[i]
    profiles = game.sample(rng, samples)
    own_a = S.sample(rng, samples)
    own_b = S.sample(rng, samples)
    worst = float("-inf")
    bad = []
    for k in range(samples):
        x1 = profiles[k].copy()
        x2 = profiles[k].copy()
        x1[s] = own_a[k]
        x2[s] = own_b[k]
        val = float((own_a[k] - own_b[k]) @ (game.player_gradient(i, x1) - game.player_gradient(i, x2)))
        worst = max(worst, val)
        if val > tol:
            bad.append(k)
    report = DiagnosticReport(f"concavity[player {i}]", not bad, samples, len(bad), worst)
    if bad:
        msg = f"player {i}: monotone-gradient inequality violated on {len(bad)} of {samples} sampled pairs"
        report.messages.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return report
