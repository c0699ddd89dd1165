"""Run-time measurement of the bound ledger, convergence metrics and reports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import validate_schedule
from .equilibrium import natural_residual, vi_residual
from .mirror import primal_dual_fenchel, total_fenchel

DRIFT_REL_TOL = 1e-6
CONVERGENCE_TOL = 1e-3


class IncompleteLedgerError(RuntimeError):
    pass


def tilde_inner(x, lam, x2, lam2):
    """``<(x, lam), (x2, lam2)>~ = <x, x2> + <lam, lam2>``."""
    return float(np.dot(x, x2) + np.dot(lam, lam2))


class BoundLedger:
    """Per-iteration record of the quantities in the summed drift bound.

    For a fixed reference ``(x_ref, lam_ref)`` the ledger stores, for every
    iteration ``t``, ``xi_t = <(X_t, lam_t) - (x_ref, lam_ref), v~(X_t, lam_t)>~``
    together with ``gamma_t``, ``theta_t`` and ``|lam_t|^2``, and at every
    recorded ``T`` the primal-dual coupling ``F~((x_ref, lam_ref), (Y_T, lam_T))``.
    The bound at ``T`` sums iterations ``0..T-1``, the ones that produced
    ``(Y_T, lam_T)``.
    """

    def __init__(self, game, regs, constants, reference, Y0, lam0, horizon):
        self.game = game
        self.regs = list(regs)
        self.constants = constants
        x_ref, lam_ref = reference
        self.x_ref = np.asarray(x_ref, dtype=float)
        self.lam_ref = np.asarray(lam_ref, dtype=float)
        if np.any(self.lam_ref < 0):
            raise ValueError("reference price must be nonnegative")
        self._x_blocks = game.split(self.x_ref)
        self.xi = np.zeros(horizon)
        self.gamma = np.zeros(horizon)
        self.theta = np.zeros(horizon)
        self.lam_sq = np.zeros(horizon)
        self.count = 0
        self.records_t = []
        self.records_ftilde = []
        self.records_Y = []
        self.records_lam = []
        self.complete = False
        self.final_t = None

    def accumulate(self, t, X, lam, v, gamma, theta):
        A, b = self.game.constraint.A, self.game.constraint.b
        dx = X - self.x_ref
        dl = lam - self.lam_ref
        self.xi[t] = tilde_inner(dx, dl, v - A.T @ lam, A @ X - b)
        self.gamma[t] = gamma
        self.theta[t] = theta
        self.lam_sq[t] = lam @ lam
        self.count = t + 1

    def snapshot(self, T, Y, lam):
        self.records_t.append(int(T))
        self.records_Y.append([y.copy() for y in Y])
        self.records_lam.append(np.array(lam, dtype=float))
        self.records_ftilde.append(self.ftilde(Y, lam))

    def ftilde(self, Y, lam):
        return primal_dual_fenchel(self.regs, self._x_blocks, self.lam_ref, Y, lam)

    def finish(self, T):
        self.complete = True
        self.final_t = int(T)

    # partial sums over t = 0..T-1 for T = 0..count
    def partial_sums(self):
        g, th, ls = self.gamma[:self.count], self.theta[:self.count], self.lam_sq[:self.count]
        z = np.zeros(1)
        return {
            "tau": np.concatenate([z, np.cumsum(g)]),
            "gamma_xi": np.concatenate([z, np.cumsum(g * self.xi[:self.count])]),
            "gamma_sq": np.concatenate([z, np.cumsum(g * g)]),
            "gamma_theta": np.concatenate([z, np.cumsum(g * th)]),
            "aug_sq": np.concatenate([z, np.cumsum(2.0 * g * g * th * th * ls)]),
            "gamma_sq_lam": np.concatenate([z, np.cumsum(g * g * ls)]),
            "gamma_theta_lam": np.concatenate([z, np.cumsum(g * th * ls)]),
        }

    def psi_terms(self, constants=None):
        """Per-step ``|lam_t|^2 [gamma_t (2 theta_t^2 + C2~) - theta_t/2] + theta_t |lam_ref|^2 / 2``."""
        c = constants or self.constants
        g, th, ls = self.gamma[:self.count], self.theta[:self.count], self.lam_sq[:self.count]
        return ls * (g * (2 * th ** 2 + c.Ctilde2) - th / 2) + th * (self.lam_ref @ self.lam_ref) / 2

    def rhs(self, constants=None):
        """Right-hand side of the drift bound for every ``T = 0..count``."""
        c = constants or self.constants
        s = self.partial_sums()
        return (s["gamma_xi"] + c.Ctilde1 * s["gamma_sq"]
                + 0.5 * (self.lam_ref @ self.lam_ref) * s["gamma_theta"]
                + s["aug_sq"] + c.Ctilde2 * s["gamma_sq_lam"] - 0.5 * s["gamma_theta_lam"])

    def lhs(self):
        """``E_T = F~(ref, (Y_T, lam_T)) - F~(ref, (Y_0, lam_0))`` at recorded ``T``."""
        f = np.asarray(self.records_ftilde)
        return np.asarray(self.records_t), f - f[0]


@dataclass
class DriftBoundVerdict:
    passed: bool
    max_relative_violation: float
    records: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    def to_dict(self):
        return {"passed": self.passed, "max_relative_violation": self.max_relative_violation,
                "records": int(len(self.records))}


def check_drift_bound(ledger, constants=None, rel_tol=DRIFT_REL_TOL):
    """Check ``E_T <= rhs_T`` with slack ``rel_tol (1 + |rhs_T|)`` at every recorded ``T``."""
    if not ledger.complete or ledger.final_t is None or ledger.count < ledger.final_t:
        raise IncompleteLedgerError("the ledger does not cover the run")
    T, lhs = ledger.lhs()
    rhs_all = ledger.rhs(constants)
    rhs = rhs_all[T]
    rel = (lhs - rhs) / (1.0 + np.abs(rhs))
    worst = float(rel.max()) if rel.size else float("-inf")
    return DriftBoundVerdict(worst <= rel_tol, worst, T, lhs, rhs)


@dataclass
class PreconditionVerdict:
    passed: bool
    certificate: object

    def to_dict(self):
        return {"passed": self.passed, "certificate": self.certificate.to_dict()}


def check_schedule_conditions(schedule, constants, T=100_000):
    """Record the schedule certificate; fails exactly when the certificate does."""
    cert = validate_schedule(schedule, constants, horizon_check=T)
    return PreconditionVerdict(cert.valid, cert)


# -- run report ------------------------------------------------------------------


@dataclass
class RunReport:
    ts: np.ndarray
    X: np.ndarray
    lam: np.ndarray
    violation: np.ndarray
    residual: np.ndarray
    lam_norm: np.ndarray
    distance: Optional[np.ndarray] = None
    fenchel: Optional[np.ndarray] = None
    final_vi_residual: float = float("nan")
    verdicts: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def converged(self):
        return bool(self.verdicts.get("converged", False))

    def summary(self):
        return {
            "iterations": int(self.ts[-1]),
            "final_X": self.X[-1].tolist(),
            "final_lambda": self.lam[-1].tolist(),
            "final_violation": float(self.violation[-1]),
            "final_kkt_residual": float(self.residual[-1]),
            "final_vi_residual": self.final_vi_residual,
            "final_distance": None if self.distance is None else float(self.distance[-1]),
            "sup_lambda_norm": float(self.lam_norm.max()),
            "verdicts": self.verdicts,
            "flags": list(self.flags),
            "elapsed_seconds": self.elapsed,
        }


def _lambda_unbounded(ts, lam_norm):
    """Growth of ``|lam_t|`` that does not slow down across the last three doublings of t.

    A convergent price gains geometrically less per doubling of ``t``; a
    diverging one (logarithmic growth or faster) gains about the same or more.
    """
    T = ts[-1]
    if len(ts) < 16 or T < 64 or lam_norm[-1] <= 1e-9:
        return False
    tail = lam_norm[np.searchsorted(ts, T // 8):]
    if not np.all(np.diff(tail) >= -1e-12 * (1.0 + tail[:-1])):
        return False
    at = [lam_norm[min(np.searchsorted(ts, T // k), len(ts) - 1)] for k in (8, 4, 2, 1)]
    d = np.diff(at)
    floor = 1e-9 * (1.0 + lam_norm[-1])
    return bool(np.all(d > floor) and d[1] >= 0.8 * d[0] and d[2] >= 0.8 * d[1])


def convergence_metrics(trajectory, game=None, reference=None, regs=None, tol_v=CONVERGENCE_TOL,
                        tol_r=CONVERGENCE_TOL, burn_in=None):
    """Build a :class:`RunReport` from a run's recorded trajectory.

    ``reference`` is ``(x_ref, lam_ref)`` (or just ``x_ref``); it enables
    distances and, when duals were recorded and ``regs`` known, the coupling
    trajectory ``F^N(x_ref, Y_t)``.
    """
    game = game or trajectory.game
    regs = regs or getattr(trajectory, "regs", None)
    ts, X, lam = trajectory.ts, trajectory.X, trajectory.lam
    if len(ts) == 0:
        raise ValueError("empty trajectory")
    con = game.constraint
    viol = np.linalg.norm(np.maximum(X @ con.A.T - con.b, 0.0), axis=1)
    resid = np.array([natural_residual(game, x, l) for x, l in zip(X, lam)])
    lam_norm = np.linalg.norm(lam, axis=1)
    vi_final = vi_residual(game.gradient, game, X[-1], check_membership=False).value
    report = RunReport(ts=ts, X=X, lam=lam, violation=viol, residual=resid, lam_norm=lam_norm,
                       final_vi_residual=max(vi_final, 0.0), elapsed=getattr(trajectory, "elapsed", 0.0))
    if reference is not None:
        if isinstance(reference, tuple):
            x_ref, lam_ref = reference
        else:
            x_ref, lam_ref = reference, None
        x_ref = np.asarray(x_ref, dtype=float)
        report.distance = np.linalg.norm(X - x_ref, axis=1)
        if lam_ref is not None:
            report.verdicts["final_lambda_distance"] = float(np.linalg.norm(lam[-1] - np.asarray(lam_ref)))
        Ys = getattr(trajectory, "Y", None)
        if Ys is not None and regs is not None:
            xb = game.split(x_ref)
            report.fenchel = np.array([total_fenchel(regs, xb, game.split(y)) for y in Ys])
            start = 0 if burn_in is None else int(np.searchsorted(ts, burn_in))
            f = report.fenchel[start:]
            report.verdicts["fenchel_decreasing_trend"] = bool(len(f) > 1 and f[-1] < f[0])
    report.verdicts["violation_ok"] = bool(viol[-1] < tol_v)
    report.verdicts["vi_residual_ok"] = bool(report.final_vi_residual < tol_r)
    report.verdicts["converged"] = report.verdicts["violation_ok"] and report.verdicts["vi_residual_ok"]
    if _lambda_unbounded(ts, lam_norm):
        report.flags.append("λ unbounded — check augmentation")
    return report


# -- serialisation ---------------------------------------------------------------


def trajectory_columns(n, m):
    return (["t"] + [f"x{k}" for k in range(n)] + [f"lambda{k}" for k in range(m)]
            + ["violation", "residual"])


def write_trajectory_csv(report, path):
    """Columns: t, x0..x{n-1}, lambda0..lambda{m-1}, violation, residual (17 significant digits)."""
    n, m = report.X.shape[1], report.lam.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_columns(n, m))
        for k in range(len(report.ts)):
            row = [str(int(report.ts[k]))]
            row += [format(float(v), ".17g") for v in report.X[k]]
            row += [format(float(v), ".17g") for v in report.lam[k]]
            row += [format(float(report.violation[k]), ".17g"), format(float(report.residual[k]), ".17g")]
            w.writerow(row)


@dataclass
class StoredTrajectory:
    ts: np.ndarray
    X: np.ndarray
    lam: np.ndarray
    violation: np.ndarray
    residual: np.ndarray
    Y: Optional[np.ndarray] = None
    elapsed: float = 0.0


def read_trajectory_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    data = np.array(rows, dtype=float)
    xs = [k for k, h in enumerate(header) if h.startswith("x")]
    ls = [k for k, h in enumerate(header) if h.startswith("lambda")]
    if header[0] != "t" or header[-2:] != ["violation", "residual"]:
        raise ValueError("not a trajectory file: unexpected columns")
    return StoredTrajectory(ts=data[:, 0].astype(int), X=data[:, xs], lam=data[:, ls],
                            violation=data[:, -2], residual=data[:, -1])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def write_summary_json(path, report, constants=None, certificate=None, drift=None, extra=None):
    doc = {"summary": report.summary()}
    if constants is not None:
        doc["constants"] = constants.to_dict()
    if certificate is not None:
        doc["schedule_certificate"] = certificate.to_dict()
    if drift is not None:
        doc["drift_bound"] = drift.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2, allow_nan=True)
    return doc
