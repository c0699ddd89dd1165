"""Action-set geometry: exact Euclidean projections and norm arithmetic.

Supported sets are boxes, probability simplices, Euclidean balls and bounded
polytopes ``{x : G x <= h}``, plus the nonnegative orthant used for prices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

KINDS = ("box", "simplex", "euclidean_ball", "halfspace_polytope")

DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_SWEEPS = 10_000


class ProjectionError(RuntimeError):
    """Dykstra's method ran out of sweeps before reaching tolerance."""

    def __init__(self, message, last_iterate, residual):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


def norm(point, kind="l2"):
    """Return the l1, l2 or linf norm of ``point``."""
    point = np.asarray(point, dtype=float)
    if kind == "l1":
        return float(np.abs(point).sum())
    if kind == "l2":
        return float(np.sqrt(point @ point))
    if kind == "linf":
        return float(np.abs(point).max()) if point.size else 0.0
    raise ValueError(f"unknown norm kind {kind!r}")


DUAL_NORM = {"l1": "linf", "l2": "l2", "linf": "l1"}


def project_orthant(point):
    return np.maximum(np.asarray(point, dtype=float), 0.0)


def project_simplex(point):
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    y = np.asarray(point, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(y - tau, 0.0)


def _dykstra(point, G, h, tol=DYKSTRA_TOL, max_sweeps=DYKSTRA_MAX_SWEEPS):
    x = np.asarray(point, dtype=float).copy()
    if np.all(G @ x <= h):
        return x
    row_sq = np.einsum("ij,ij->i", G, G)
    corr = np.zeros((G.shape[0], x.size))
    residual = np.inf
    for _ in range(max_sweeps):
        x_prev = x.copy()
        corr_prev = corr.copy()
        for k in range(G.shape[0]):
            z = x + corr[k]
            excess = G[k] @ z - h[k]
            x = z - (excess / row_sq[k]) * G[k] if excess > 0 else z
            corr[k] = z - x
        # the iterate can stall for a sweep while corrections still move
        residual = float(np.linalg.norm(x - x_prev) + np.linalg.norm(corr - corr_prev))
        if residual <= tol:
            return x
    raise ProjectionError(
        f"Dykstra did not converge in {max_sweeps} sweeps (residual {residual:.3e})",
        x,
        residual,
    )


@dataclass(frozen=True, eq=False)
class ActionSet:
    """A non-empty compact convex action set.

    Use the constructors :meth:`box`, :meth:`simplex`, :meth:`ball` and
    :meth:`polytope` rather than instantiating directly.
    """

    kind: str
    dim: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown action-set kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dimension must be a positive integer")

    @classmethod
    def box(cls, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        lower, upper = np.broadcast_arrays(lower, upper)
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("box bounds must be finite")
        if np.any(lower > upper):
            raise ValueError("box requires lower <= upper")
        return cls("box", lower.size, {"lower": lower.copy(), "upper": upper.copy()})

    @classmethod
    def simplex(cls, dim):
        return cls("simplex", int(dim), {})

    @classmethod
    def ball(cls, center, radius):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if not radius > 0:
            raise ValueError("ball radius must be positive")
        return cls("euclidean_ball", center.size, {"center": center, "radius": float(radius)})

    @classmethod
    def polytope(cls, rows, offsets):
        G = np.atleast_2d(np.asarray(rows, dtype=float))
        h = np.atleast_1d(np.asarray(offsets, dtype=float))
        if G.shape[0] != h.size:
            raise ValueError("polytope rows and offsets disagree in length")
        n = G.shape[1]
        bounds = np.empty((n, 2))
        for k in range(n):
            for j, sign in enumerate((1.0, -1.0)):
                c = np.zeros(n)
                c[k] = sign
                res = linprog(c, A_ub=G, b_ub=h, bounds=[(None, None)] * n, method="highs")
                if res.status == 2:
                    raise ValueError("polytope is empty")
                if res.status != 0:
                    raise ValueError("polytope is unbounded")
                bounds[k, j] = sign * res.fun
        return cls("halfspace_polytope", n, {"rows": G, "offsets": h, "bounds": bounds})

    # -- norms -------------------------------------------------------------
    @property
    def norm_kind(self):
        """Primal norm attached to this set (l1 for simplices, l2 otherwise)."""
        return "l1" if self.kind == "simplex" else "l2"

    @property
    def dual_norm_kind(self):
        return DUAL_NORM[self.norm_kind]

    def norm(self, x):
        return norm(x, self.norm_kind)

    def dual_norm(self, y):
        return norm(y, self.dual_norm_kind)

    # -- membership and projection -------------------------------------------
    def project(self, point):
        point = np.asarray(point, dtype=float)
        if point.shape != (self.dim,):
            raise ValueError(f"point of shape {point.shape} does not match dim {self.dim}")
        if self.kind == "box":
            return np.clip(point, self.params["lower"], self.params["upper"])
        if self.kind == "simplex":
            return project_simplex(point)
        if self.kind == "euclidean_ball":
            c, r = self.params["center"], self.params["radius"]
            d = point - c
            n = np.sqrt(d @ d)
            return point.copy() if n <= r else c + (r / n) * d
        return _dykstra(point, self.params["rows"], self.params["offsets"])

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            return False
        if self.kind == "box":
            return bool(np.all(x >= self.params["lower"] - tol) and np.all(x <= self.params["upper"] + tol))
        if self.kind == "simplex":
            return bool(np.all(x >= -tol) and abs(x.sum() - 1.0) <= tol)
        if self.kind == "euclidean_ball":
            return bool(np.linalg.norm(x - self.params["center"]) <= self.params["radius"] + tol)
        return bool(np.all(self.params["rows"] @ x <= self.params["offsets"] + tol))

    # -- linear descriptions (for LP solves) ---------------------------------
    @property
    def is_polyhedral(self):
        return self.kind != "euclidean_ball"

    def inequalities(self):
        """Return ``(G, h, E, e)`` with ``X = {G x <= h, E x = e}``.

        Degenerate box coordinates (lower == upper) become equalities.
        """
        n = self.dim
        if self.kind == "box":
            lo, up = self.params["lower"], self.params["upper"]
            fixed = lo == up
            free = ~fixed
            eye = np.eye(n)
            G = np.vstack([eye[free], -eye[free]])
            h = np.concatenate([up[free], -lo[free]])
            return G, h, eye[fixed], lo[fixed]
        if self.kind == "simplex":
            return -np.eye(n), np.zeros(n), np.ones((1, n)), np.ones(1)
        if self.kind == "halfspace_polytope":
            return self.params["rows"], self.params["offsets"], np.zeros((0, n)), np.zeros(0)
        raise ValueError("a Euclidean ball has no finite linear description")

    def bounding_box(self):
        if self.kind == "box":
            return self.params["lower"], self.params["upper"]
        if self.kind == "simplex":
            return np.zeros(self.dim), np.ones(self.dim)
        if self.kind == "euclidean_ball":
            c, r = self.params["center"], self.params["radius"]
            return c - r, c + r
        b = self.params["bounds"]
        return b[:, 0].copy(), b[:, 1].copy()

    def center(self):
        """A point in the relative interior."""
        if self.kind == "box":
            return 0.5 * (self.params["lower"] + self.params["upper"])
        if self.kind == "simplex":
            return np.full(self.dim, 1.0 / self.dim)
        if self.kind == "euclidean_ball":
            return self.params["center"].copy()
        # Chebyshev center
        G, h = self.params["rows"], self.params["offsets"]
        rn = np.linalg.norm(G, axis=1)
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        res = linprog(c, A_ub=np.hstack([G, rn[:, None]]), b_ub=h,
                      bounds=[(None, None)] * self.dim + [(0, None)], method="highs")
        return res.x[:-1]

    def vertices(self, limit=65536):
        """Extreme points for boxes and simplices, or ``None`` if unavailable."""
        if self.kind == "box":
            if 2 ** self.dim > limit:
                return None
            lo, up = self.params["lower"], self.params["upper"]
            return np.array([np.where(bits, up, lo) for bits in itertools.product((0, 1), repeat=self.dim)])
        if self.kind == "simplex":
            return np.eye(self.dim)
        return None

    def sample(self, rng, n):
        """Draw ``n`` points from the set (not necessarily uniform for polytopes)."""
        if self.kind == "box":
            lo, up = self.params["lower"], self.params["upper"]
            return lo + (up - lo) * rng.random((n, self.dim))
        if self.kind == "simplex":
            return rng.dirichlet(np.ones(self.dim), size=n)
        if self.kind == "euclidean_ball":
            c, r = self.params["center"], self.params["radius"]
            d = rng.standard_normal((n, self.dim))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            rad = r * rng.random(n) ** (1.0 / self.dim)
            return c + d * rad[:, None]
        lo, up = self.bounding_box()
        G, h = self.params["rows"], self.params["offsets"]
        out = []
        count = 0
        while count < n:
            cand = lo + (up - lo) * rng.random((4 * n, self.dim))
            ok = cand[np.all(cand @ G.T <= h, axis=1)]
            out.append(ok)
            count += len(ok)
        return np.vstack(out)[:n]

    def grid(self, h):
        """Points of a regular grid with spacing ``h`` lying in the set."""
        if self.kind == "simplex":
            m = int(round(1.0 / h))
            pts = [np.array(c, dtype=float) / m
                   for c in itertools.product(range(m + 1), repeat=self.dim - 1)
                   if sum(c) <= m]
            return np.array([np.append(p, 1.0 - p.sum()) for p in pts])
        lo, up = self.bounding_box()
        axes = [np.linspace(a, b, max(int(round((b - a) / h)), 0) + 1) for a, b in zip(lo, up)]
        pts = np.array(list(itertools.product(*axes)))
        if self.kind == "box":
            return pts
        keep = np.array([self.contains(p, tol=1e-12) for p in pts])
        return pts[keep]

    def to_dict(self):
        d = {"kind": self.kind, "dim": self.dim}
        if self.kind == "box":
            d["lower"] = self.params["lower"].tolist()
            d["upper"] = self.params["upper"].tolist()
        elif self.kind == "euclidean_ball":
            d["center"] = self.params["center"].tolist()
            d["radius"] = self.params["radius"]
        elif self.kind == "halfspace_polytope":
            d["rows"] = self.params["rows"].tolist()
            d["offsets"] = self.params["offsets"].tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        if kind == "box":
            lower = np.broadcast_to(np.asarray(d["lower"], dtype=float), (d["dim"],))
            upper = np.broadcast_to(np.asarray(d["upper"], dtype=float), (d["dim"],))
            return cls.box(lower, upper)
        if kind == "simplex":
            return cls.simplex(d["dim"])
        if kind == "euclidean_ball":
            return cls.ball(d["center"], d["radius"])
        if kind == "halfspace_polytope":
            return cls.polytope(d["rows"], d["offsets"])
        raise ValueError(f"unknown action-set kind {kind!r}")


ORTHANT = "nonneg_orthant"


def project(target, point):
    """Project ``point`` onto an :class:`ActionSet` or the nonnegative orthant."""
    if isinstance(target, str):
        if target != ORTHANT:
            raise ValueError(f"unknown projection target {target!r}")
        return project_orthant(point)
    return target.project(point)
