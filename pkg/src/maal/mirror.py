"""Regularizers, mirror maps, convex conjugates and the Fenchel coupling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from ._report import DiagnosticReport
from .geometry import ActionSet, norm

DOMAIN_TOL = 1e-9
REGULARIZER_KINDS = ("euclidean", "entropic")


@dataclass(frozen=True, eq=False)
class Regularizer:
    """A K-strongly convex penalty on an action set.

    ``euclidean`` is ``psi(x) = |x|_2^2 / 2`` on any set; ``entropic`` is the
    Gibbs entropy ``sum x log x`` on a simplex. ``K`` defaults to the modulus
    with respect to the domain's own norm (l2, or l1 on simplices); passing
    a larger value is only useful for fault injection.
    """

    kind: str
    domain: ActionSet
    K: Optional[float] = None

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.kind == "entropic" and self.domain.kind != "simplex":
            raise ValueError("the entropic regularizer needs a simplex domain")
        if self.K is None:
            # 1/2 |x|_2^2 is only (1/D)-strongly convex w.r.t. l1
            k = 1.0 if (self.kind == "entropic" or self.domain.norm_kind == "l2") else 1.0 / self.domain.dim
            object.__setattr__(self, "K", k)

    @property
    def dim(self):
        return self.domain.dim

    def norm(self, x):
        return norm(x, self.domain.norm_kind)

    def dual_norm(self, y):
        return norm(y, self.domain.dual_norm_kind)

    def psi(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "euclidean":
            return 0.5 * float(x @ x)
        pos = x > 0
        return float(np.sum(x[pos] * np.log(x[pos])))

    def mirror_map(self, y):
        """``argmax_{x in domain} <x, y> - psi(x)``."""
        y = np.asarray(y, dtype=float)
        if self.kind == "euclidean":
            return self.domain.project(y)
        z = np.exp(y - np.max(y))
        return z / z.sum()

    def conjugate(self, y):
        """``psi*(y)``, evaluated at the computed maximiser."""
        y = np.asarray(y, dtype=float)
        if self.kind == "entropic":
            return float(logsumexp(y))
        x = self.mirror_map(y)
        return float(x @ y) - self.psi(x)

    def fenchel(self, p, y):
        """Fenchel coupling ``psi(p) + psi*(y) - <p, y>`` (returns ``inf`` for KL blow-ups)."""
        p = np.asarray(p, dtype=float)
        y = np.asarray(y, dtype=float)
        if not self.domain.contains(p, DOMAIN_TOL):
            raise ValueError("p lies outside the regularizer's domain")
        if self.kind == "euclidean":
            x = self.domain.project(y)
            d = p - x
            val = 0.5 * float(d @ d) + float(d @ (x - y))
        else:
            pos = p > 0
            if np.any(np.isneginf(y[pos])):
                return math.inf
            val = float(np.sum(p[pos] * (np.log(p[pos]) - y[pos]))) + float(logsumexp(y))
        return val if val > 0.0 else 0.0


def mirror_map(reg, y):
    return reg.mirror_map(y)


def fenchel(reg, p, y):
    return reg.fenchel(p, y)


def kl_divergence(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pos = p > 0
    if np.any(q[pos] == 0):
        return math.inf
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])))


def total_fenchel(regs, x_blocks, y_blocks):
    """``F^N(x, Y) = sum_i F_i(x_i, Y_i)``."""
    return float(sum(r.fenchel(x, y) for r, x, y in zip(regs, x_blocks, y_blocks)))


def primal_dual_fenchel(regs, x_blocks, lam_ref, y_blocks, lam):
    """``F~((x, lam_ref), (Y, lam)) = F^N(x, Y) + |lam - lam_ref|^2 / 2``."""
    d = np.asarray(lam, dtype=float) - np.asarray(lam_ref, dtype=float)
    return total_fenchel(regs, x_blocks, y_blocks) + 0.5 * float(d @ d)


# -- sampled verification ------------------------------------------------------


def _dual_scale(reg):
    lo, up = reg.domain.bounding_box()
    return max(1.0, float(np.max(up - lo)))


def _random_duals(reg, rng, n):
    scale = 3.0 if reg.kind == "entropic" else 2.0 * _dual_scale(reg)
    centre = reg.domain.center()
    return centre + scale * rng.standard_normal((n, reg.dim))


def check_coupling_inequalities(reg, trials=10_000, seed=0, tol=1e-8):
    """Sample ``(p, y, y')`` and test the two Fenchel coupling inequalities.

    1. ``F(p, y) >= (K/2) |Phi(y) - p|^2``
    2. ``F(p, y') <= F(p, y) + <y' - y, Phi(y) - p> + |y' - y|_*^2 / (2K)``
    """
    rng = np.random.default_rng(seed)
    ps = reg.domain.sample(rng, trials)
    ys = _random_duals(reg, rng, trials)
    far = _random_duals(reg, rng, trials)
    near = ys + 0.05 * rng.standard_normal(ys.shape)
    pick = rng.random(trials) < 0.5
    yps = np.where(pick[:, None], near, far)
    K = reg.K
    worst1 = worst2 = float("-inf")
    bad1 = bad2 = 0
    for p, y, yp in zip(ps, ys, yps):
        x = reg.mirror_map(y)
        F = reg.fenchel(p, y)
        v1 = 0.5 * K * reg.norm(x - p) ** 2 - F
        Fp = reg.fenchel(p, yp)
        d = yp - y
        v2 = Fp - (F + float(d @ (x - p)) + reg.dual_norm(d) ** 2 / (2.0 * K))
        worst1 = max(worst1, v1)
        worst2 = max(worst2, v2)
        bad1 += v1 > tol
        bad2 += v2 > tol
    worst = max(worst1, worst2)
    return DiagnosticReport(
        f"fenchel-coupling[{reg.kind}, K={K:g}]",
        passed=(bad1 + bad2) == 0,
        checked=2 * trials,
        violations=int(bad1 + bad2),
        max_violation=worst,
        details={"lower_bound": {"violations": int(bad1), "max_violation": worst1},
                 "three_point": {"violations": int(bad2), "max_violation": worst2},
                 "tolerance": tol},
    )


def check_gradient_identity(reg, points=1000, seed=0, h=1e-6, tol=1e-4):
    """Compare central differences of ``psi*`` with ``Phi`` (``Phi = grad psi*``)."""
    rng = np.random.default_rng(seed)
    ys = _random_duals(reg, rng, points)
    eye = np.eye(reg.dim)
    worst = float("-inf")
    bad = 0
    for y in ys:
        fd = np.array([(reg.conjugate(y + h * e) - reg.conjugate(y - h * e)) / (2 * h) for e in eye])
        err = float(np.max(np.abs(fd - reg.mirror_map(y))))
        worst = max(worst, err)
        bad += err > tol
    return DiagnosticReport(f"mirror-gradient[{reg.kind}]", bad == 0, points, int(bad), worst,
                            details={"step": h, "tolerance": tol})


def check_lipschitz(reg, pairs=10_000, seed=0, tol=1e-9):
    """``|Phi(y) - Phi(y')| <= |y - y'|_* / K`` on sampled pairs."""
    rng = np.random.default_rng(seed)
    ys = _random_duals(reg, rng, pairs)
    yps = np.where((rng.random(pairs) < 0.5)[:, None],
                   ys + 0.1 * rng.standard_normal(ys.shape),
                   _random_duals(reg, rng, pairs))
    worst = float("-inf")
    bad = 0
    for y, yp in zip(ys, yps):
        v = reg.norm(reg.mirror_map(y) - reg.mirror_map(yp)) - reg.dual_norm(y - yp) / reg.K
        worst = max(worst, v)
        bad += v > tol
    return DiagnosticReport(f"mirror-lipschitz[{reg.kind}]", bad == 0, pairs, int(bad), worst,
                            details={"tolerance": tol})


def check_strong_convexity(reg, trials=2000, seed=0, tol=1e-9):
    rng = np.random.default_rng(seed)
    xs = reg.domain.sample(rng, trials)
    zs = reg.domain.sample(rng, trials)
    ts = rng.random(trials)
    worst = float("-inf")
    bad = 0
    for x, z, t in zip(xs, zs, ts):
        lhs = reg.psi(t * x + (1 - t) * z)
        rhs = t * reg.psi(x) + (1 - t) * reg.psi(z) - 0.5 * reg.K * t * (1 - t) * reg.norm(x - z) ** 2
        worst = max(worst, lhs - rhs)
        bad += lhs - rhs > tol
    return DiagnosticReport(f"strong-convexity[{reg.kind}]", bad == 0, trials, int(bad), worst)


def check_reverse_convergence(reg, p, approach: Callable[[int], np.ndarray], n_terms=1000,
                              tol=1e-6, convergence_tol=1e-2):
    """Follow ``Y_n = approach(n)`` and check that ``F(p, Y_n)`` decays to zero.

    Raises ``ValueError`` if the mirror images ``Phi(Y_n)`` do not approach
    ``p``. The report fails (with a "slow decay" message) when the coupling
    has not dropped below ``tol`` by ``n_terms`` or is not eventually
    nonincreasing.
    """
    p = np.asarray(p, dtype=float)
    ns = np.arange(1, n_terms + 1)
    dists = np.empty(n_terms)
    vals = np.empty(n_terms)
    for k, n in enumerate(ns):
        y = np.asarray(approach(int(n)), dtype=float)
        dists[k] = reg.norm(reg.mirror_map(y) - p)
        vals[k] = reg.fenchel(p, y)
    if not (dists[-1] <= convergence_tol and dists[-1] <= dists[0]):
        raise ValueError(f"mirror images do not converge to p (final distance {dists[-1]:.3e})")
    tail = vals[n_terms // 2:]
    monotone = bool(np.all(np.diff(tail) <= 1e-15))
    final = float(vals[-1])
    pos = vals > 0
    slope = float(np.polyfit(np.log(ns[pos][n_terms // 4:]), np.log(vals[pos][n_terms // 4:]), 1)[0]) \
        if pos.sum() > n_terms // 4 + 2 else float("-inf")
    report = DiagnosticReport(
        f"reverse-convergence[{reg.kind}]",
        passed=monotone and final <= tol,
        checked=n_terms,
        violations=0 if final <= tol else 1,
        max_violation=final - tol,
        details={"final_coupling": final, "eventually_monotone": monotone,
                 "decay_order": slope, "final_distance": float(dists[-1])},
    )
    if final > tol:
        report.messages.append(
            f"slow decay: F(p, Y_n) = {final:.3e} after {n_terms} terms (log-log slope {slope:.2f})")
    if not monotone:
        report.messages.append("F(p, Y_n) is not eventually nonincreasing")
    return report
