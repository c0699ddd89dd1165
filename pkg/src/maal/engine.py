"""Mirror ascent with an augmented-Lagrangian price coordinator.

Each player keeps a dual score ``Y_i``, plays ``X_i = Phi_i(Y_i)`` and moves
its score along its own gradient minus the broadcast price correction
``A_i^T lam``. A coordinator moves the price along the constraint residual
damped by the augmentation term ``theta_t * lam`` and projects onto
``lam >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import ORTHANT, project

SCHEDULE_FAMILIES = ("harmonic", "power", "custom")

STEP_DIVERGENCE = "step_divergence"            # sum gamma_t = inf
STEP_SQUARE_RATIO = "step_square_ratio"        # sum gamma^2 / sum gamma -> 0
AUGMENTATION_RATIO = "augmentation_ratio"      # sum gamma*theta / sum gamma -> 0
POINTWISE_AUGMENTATION = "pointwise_augmentation"  # gamma(2 theta^2 + C2~) - theta/2 <= 0

CONDITION_TEXT = {
    STEP_DIVERGENCE: "sum_t gamma_t = infinity",
    STEP_SQUARE_RATIO: "(sum gamma_t^2)/(sum gamma_t) -> 0",
    AUGMENTATION_RATIO: "(sum gamma_t theta_t)/(sum gamma_t) -> 0",
    POINTWISE_AUGMENTATION: "gamma_t (2 theta_t^2 + Ctilde2) - theta_t/2 <= 0 for large t",
}


class ScheduleError(ValueError):
    def __init__(self, certificate):
        names = ", ".join(f["condition"] for f in certificate.failures)
        super().__init__(f"schedule fails: {names}")
        self.certificate = certificate


class NonFiniteStateError(FloatingPointError):
    def __init__(self, t, component):
        super().__init__(f"non-finite state at iteration {t} in {component}")
        self.t = t
        self.component = component


@dataclass(frozen=True)
class Schedule:
    """Paired step sizes ``gamma_t`` and augmentation weights ``theta_t``.

    ``harmonic``: ``gamma_t = gamma0/(t+1)``; ``power``:
    ``gamma_t = gamma0/(t+1)**exponent``. Both use ``theta_t = delta * gamma_t``.
    ``custom`` takes arbitrary callables.
    """

    family: str = "harmonic"
    gamma0: float = 1.0
    delta: float = 0.0
    exponent: float = 1.0
    gamma_fn: Optional[Callable[[int], float]] = field(default=None, compare=False)
    theta_fn: Optional[Callable[[int], float]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in SCHEDULE_FAMILIES:
            raise ValueError(f"unknown schedule family {self.family!r}")
        if self.family == "custom":
            if self.gamma_fn is None or self.theta_fn is None:
                raise ValueError("a custom schedule needs gamma_fn and theta_fn")
        else:
            if not self.gamma0 > 0:
                raise ValueError("gamma0 must be positive")
            if self.delta < 0:
                raise ValueError("delta must be nonnegative")
            if self.family == "harmonic" and self.exponent != 1.0:
                raise ValueError("the harmonic family has exponent 1")

    @classmethod
    def harmonic(cls, delta, gamma0=1.0):
        return cls("harmonic", gamma0=float(gamma0), delta=float(delta))

    @classmethod
    def power(cls, exponent, delta, gamma0=1.0):
        return cls("power", gamma0=float(gamma0), delta=float(delta), exponent=float(exponent))

    @classmethod
    def custom(cls, gamma, theta):
        return cls("custom", gamma_fn=gamma, theta_fn=theta)

    def gamma(self, t):
        if self.family == "custom":
            return float(self.gamma_fn(t))
        return self.gamma0 / (t + 1.0) ** self.exponent

    def theta(self, t):
        if self.family == "custom":
            return float(self.theta_fn(t))
        return self.delta * self.gamma(t)

    def arrays(self, horizon):
        """``(gamma_0..gamma_{T-1}, theta_0..theta_{T-1})``."""
        if self.family == "custom":
            g = np.array([self.gamma_fn(t) for t in range(horizon)], dtype=float)
            th = np.array([self.theta_fn(t) for t in range(horizon)], dtype=float)
        else:
            g = self.gamma0 / np.arange(1.0, horizon + 1.0) ** self.exponent
            th = self.delta * g
        if np.any(g <= 0) or np.any(th < 0):
            raise ValueError("schedule needs gamma_t > 0 and theta_t >= 0")
        return g, th

    def to_dict(self):
        if self.family == "custom":
            raise ValueError("custom schedules are not serialisable")
        return {"family": self.family, "gamma0": self.gamma0, "delta": self.delta,
                "exponent": self.exponent}


def auto_delta(constants, margin=0.5):
    """``delta = 2 Ctilde2 (1 + margin)``, strictly above the ``2 Ctilde2`` threshold."""
    if not margin > 0:
        raise ValueError("margin must be positive")
    return 2.0 * constants.Ctilde2 * (1.0 + margin)


@dataclass
class ScheduleCertificate:
    valid: bool
    numeric_only: bool
    t0: Optional[int]
    conditions: dict
    failures: list

    def failing(self):
        return [f["condition"] for f in self.failures]

    def to_dict(self):
        return {"valid": self.valid, "numeric_only": self.numeric_only, "t0": self.t0,
                "conditions": self.conditions, "failures": self.failures}


def _pointwise(g, th, ct2):
    return g * (2.0 * th ** 2 + ct2) - 0.5 * th


def validate_schedule(schedule, constants, horizon_check=100_000):
    """Certify the step-size / augmentation conditions for convergence.

    Harmonic and power families are certified analytically; the pointwise
    inequality is additionally evaluated at every ``t <= horizon_check``.
    ``t0`` is the first index from which the pointwise inequality holds.
    Custom schedules get numeric checks only.
    """
    ct2 = constants.Ctilde2
    T = int(horizon_check)
    g, th = schedule.arrays(T + 1)
    pw = _pointwise(g, th, ct2)
    bad = np.nonzero(pw > 0)[0]
    conditions = {}
    failures = []

    def record(name, ok, witness=None, detail=""):
        conditions[name] = {"holds": bool(ok), "statement": CONDITION_TEXT[name], "detail": detail}
        if not ok:
            failures.append({"condition": name, "statement": CONDITION_TEXT[name],
                             "witness_t": witness, "detail": detail})

    if schedule.family != "custom":
        p, d = schedule.exponent, schedule.delta
        record(STEP_DIVERGENCE, p <= 1.0, T, f"gamma_t ~ t^-{p:g}")
        # sum g^2 / sum g ~ t^-p for 0 < p <= 1 and stays at gamma0 for p = 0
        record(STEP_SQUARE_RATIO, 0.0 < p <= 1.0, T,
               "ratio tends to gamma0" if p == 0 else f"ratio ~ t^-{min(p, 1):g}")
        # theta = delta gamma, so the augmentation ratio is delta times the step ratio
        record(AUGMENTATION_RATIO, d == 0.0 or 0.0 < p <= 1.0, T, f"delta = {d:g}")
        if p > 0:
            # the bracket 2 delta^2 gamma^2 + Ctilde2 - delta/2 decreases in t
            eventually = d / 2.0 > ct2
            if eventually:
                gcrit = math.sqrt((d / 2.0 - ct2) / (2.0 * d * d))
                t_star = max(0, math.ceil((schedule.gamma0 / gcrit) ** (1.0 / p) - 1.0))
                while schedule.gamma(t_star) > gcrit:
                    t_star += 1
                while t_star > 0 and schedule.gamma(t_star - 1) <= gcrit:
                    t_star -= 1
                t0 = int(t_star)
            else:
                t0 = None
        else:
            eventually = bool(pw[0] <= 0)
            t0 = 0 if eventually else None
        if eventually:
            later_bad = bad[bad >= t0] if t0 is not None else bad
            eventually = later_bad.size == 0
        witness = int(bad[-1]) if bad.size else T
        detail = (f"delta = {d:g}, 2*Ctilde2 = {2 * ct2:g}" + ("" if eventually else "; delta <= 2*Ctilde2"))
        record(POINTWISE_AUGMENTATION, eventually, witness, detail)
        if not eventually:
            t0 = None
        numeric_only = False
    else:
        cg = np.cumsum(g)
        ratio2 = np.cumsum(g * g) / cg
        ratio_a = np.cumsum(g * th) / cg
        checkpoints = [2 ** k for k in range(int(math.log2(max(T, 2))) + 1) if 2 ** k <= T]
        block = [g[c // 2:c].sum() for c in checkpoints[1:]] or [g.sum()]
        div_ok = len(block) < 2 or block[-1] >= 0.8 * block[-2]
        record(STEP_DIVERGENCE, div_ok, T, "dyadic block sums of gamma must not decay geometrically")

        def shrinking(r):
            rc = r[checkpoints]
            return bool(np.all(np.diff(rc) <= 1e-15) and r[T] <= 0.5 * r[0])

        record(STEP_SQUARE_RATIO, shrinking(ratio2), T, f"ratio at T = {ratio2[T]:.3e}")
        record(AUGMENTATION_RATIO, ratio_a[T] == 0.0 or shrinking(ratio_a), T,
               f"ratio at T = {ratio_a[T]:.3e}")
        t0 = int(bad[-1]) + 1 if bad.size else 0
        ok = t0 <= T // 2
        record(POINTWISE_AUGMENTATION, ok, int(bad[-1]) if bad.size else T,
               "checked numerically up to horizon")
        if not ok:
            t0 = None
        numeric_only = True
    return ScheduleCertificate(not failures, numeric_only, t0, conditions, failures)


# -- the algorithm -------------------------------------------------------------


@dataclass(frozen=True)
class PlayerView:
    """Everything a player may see: its own gradient, its own block, the price."""

    gradient: np.ndarray
    block: np.ndarray
    price: np.ndarray


def player_view(constraint, slices, i, v, lam):
    """Cut player ``i``'s view out of the round's shared state."""
    return PlayerView(v[slices[i]], constraint.block(i), lam)


def player_step(view, Y_i, gamma_t):
    """``Y_i + gamma_t * (v_i - A_i^T lam)``."""
    if not np.all(np.isfinite(view.gradient)):
        raise FloatingPointError("non-finite gradient value")
    return Y_i + gamma_t * (view.gradient - view.block.T @ view.price)


def coordinator_step(lam, X, constraint, gamma_t, theta_t):
    """Projected price update ``max(0, lam + gamma_t ((A X - b) - theta_t lam))``."""
    return project(ORTHANT, lam + gamma_t * ((constraint.A @ X - constraint.b) - theta_t * lam))


@dataclass
class MaalState:
    t: int
    Y: list
    X: np.ndarray
    lam: np.ndarray

    def snapshot(self):
        return MaalState(self.t, [y.copy() for y in self.Y], self.X.copy(), self.lam.copy())


@dataclass
class RunResult:
    """Raw output of :func:`run`; turn into a report with ``diagnostics.convergence_metrics``."""

    game: object
    regs: list
    schedule: Schedule
    certificate: Optional[ScheduleCertificate]
    ts: np.ndarray
    X: np.ndarray
    lam: np.ndarray
    Y: Optional[np.ndarray]
    final: MaalState
    Y0: list
    lam0: np.ndarray
    gammas: np.ndarray
    thetas: np.ndarray
    ledger: Optional[object] = None
    stopped_early: bool = False
    elapsed: float = 0.0


def _mirror_all(regs, Y):
    return np.concatenate([r.mirror_map(y) for r, y in zip(regs, Y)])


def run(game, regs, schedule, horizon, Y0=None, lambda0=None, stride=1, observer=None,
        constants=None, waive_validation=False, reference=None, record_duals=False,
        early_stop_tol=None, early_stop_patience=100, step=None):
    """Run ``horizon`` iterations of the algorithm and return a :class:`RunResult`.

    Parameters
    ----------
    game : Game
    regs : list of Regularizer
        One per player, with domains equal to the players' action sets.
    schedule : Schedule
    horizon : int
    Y0, lambda0 : optional
        Initial dual scores (default zeros) and price (default zero).
    stride : int
        Recording and observer interval. Index ``T`` is recorded whenever
        ``T % stride == 0`` and always at ``T = horizon``.
    observer : callable, optional
        ``observer(t, X_t, lam_t, gamma_t, theta_t)`` on copies of the state.
    constants : GameConstants, optional
        Used for schedule validation and for the bound ledger.
    waive_validation : bool
        Skip the schedule certificate.
    reference : (x_ref, lam_ref), optional
        When given (together with ``constants``) a bound ledger is filled.
    early_stop_tol : float, optional
        Stop once KKT residual and constraint violation stay below this value
        for ``early_stop_patience`` consecutive recordings.
    step : callable, optional
        Replacement for :func:`player_step` with the same signature.
    """
    import time

    from .diagnostics import BoundLedger
    from .equilibrium import natural_residual

    if len(regs) != game.n_players:
        raise ValueError("need one regularizer per player")
    for r, S in zip(regs, game.sets):
        if r.domain is not S and r.domain.to_dict() != S.to_dict():
            raise ValueError("regularizer domain differs from the player's action set")
    certificate = None
    if not waive_validation:
        if constants is None:
            from .game_model import estimate_constants
            constants = estimate_constants(game, regularizers=regs)
        certificate = validate_schedule(schedule, constants, horizon_check=max(horizon, 1))
        if not certificate.valid:
            raise ScheduleError(certificate)
    step = player_step if step is None else step

    Y = [np.zeros(d) for d in game.dims] if Y0 is None else [np.array(y, dtype=float) for y in Y0]
    lam = np.zeros(game.constraint.rows) if lambda0 is None else np.array(lambda0, dtype=float)
    if np.any(lam < 0):
        raise ValueError("initial price must be nonnegative")
    Y0c = [y.copy() for y in Y]
    lam0 = lam.copy()
    X = _mirror_all(regs, Y)
    gammas, thetas = schedule.arrays(horizon)
    con = game.constraint
    slices = game.slices

    ledger = None
    if reference is not None and constants is not None:
        ledger = BoundLedger(game, regs, constants, reference, Y0c, lam0, horizon)

    rec_t = [t for t in range(0, horizon + 1, stride)]
    if rec_t[-1] != horizon:
        rec_t.append(horizon)
    n_rec = len(rec_t)
    tr_X = np.empty((n_rec, game.dim))
    tr_lam = np.empty((n_rec, con.rows))
    tr_Y = np.empty((n_rec, game.dim)) if record_duals else None
    k_rec = 0
    calm = 0
    stopped = False
    start = time.perf_counter()

    def record(t):
        nonlocal k_rec
        tr_X[k_rec] = X
        tr_lam[k_rec] = lam
        if tr_Y is not None:
            tr_Y[k_rec] = np.concatenate(Y)
        k_rec += 1
        if ledger is not None:
            ledger.snapshot(t, Y, lam)

    for t in range(horizon):
        if t == rec_t[k_rec]:
            record(t)
            if observer is not None:
                observer(t, X.copy(), lam.copy(), float(gammas[t]), float(thetas[t]))
            if early_stop_tol is not None:
                res = max(natural_residual(game, X, lam), con.violation(X))
                calm = calm + 1 if res < early_stop_tol else 0
                if calm >= early_stop_patience:
                    stopped = True
                    break
        g_t = gammas[t]
        v = game.gradient(X)
        if not np.all(np.isfinite(v)):
            bad = next(i for i, s in enumerate(slices) if not np.all(np.isfinite(v[s])))
            raise NonFiniteStateError(t, f"gradient of player {bad}")
        if ledger is not None:
            ledger.accumulate(t, X, lam, v, g_t, thetas[t])
        # every player reads the same (X_t, lam_t) snapshot
        Y = [step(player_view(con, slices, i, v, lam), Y[i], g_t) for i in range(len(Y))]
        lam = coordinator_step(lam, X, con, g_t, thetas[t])
        X = _mirror_all(regs, Y)
        if not np.all(np.isfinite(lam)):
            raise NonFiniteStateError(t + 1, "price vector")
        if not np.all(np.isfinite(X)):
            raise NonFiniteStateError(t + 1, "primal profile")
    else:
        t = horizon
    if not stopped:
        record(horizon)
        if observer is not None:
            observer(horizon, X.copy(), lam.copy(), float("nan"), float("nan"))
    else:
        t = rec_t[k_rec - 1]
    elapsed = time.perf_counter() - start
    if ledger is not None:
        ledger.finish(t)
    ts = np.array(rec_t[:k_rec])
    return RunResult(
        game=game, regs=list(regs), schedule=schedule, certificate=certificate, ts=ts,
        X=tr_X[:k_rec], lam=tr_lam[:k_rec], Y=None if tr_Y is None else tr_Y[:k_rec],
        final=MaalState(int(ts[-1]), [y.copy() for y in Y], X.copy(), lam.copy()),
        Y0=Y0c, lam0=lam0, gammas=gammas, thetas=thetas, ledger=ledger,
        stopped_early=stopped, elapsed=elapsed,
    )
