"""Built-in games and the versioned JSON scenario format.

Scenario document (``schema_version: 1``)::

    {
      "schema_version": 1,
      "name": "lq2",
      "players": [
        {"set": {"kind": "box", "dim": 1, "lower": [0], "upper": [1]},
         "utility": {"family": "quadratic", "H": [[-2.0, -0.5]], "g": [1.6]},
         "regularizer": "euclidean"},
        ...
      ],
      "constraint": {"A": [[1, 1]], "b": [1]},
      "schedule": {"family": "harmonic", "gamma0": 1.0, "delta": "auto", "margin": 0.5},
      "horizon": 200000, "stride": 100, "seed": 0,
      "reference": {"x": [...], "lambda": [...]}          # optional
    }

Utility families have closed-form gradients:

``quadratic``  ``{"H": D_i x n, "g": D_i}``; ``v_i(x) = H x + g`` and
    ``u_i = x_i^T H_ii x_i / 2 + x_i^T (H_i,-i x_-i + g)`` (``H_ii`` symmetric).
``cournot``    ``{"intercept": p0, "slope": s, "cost": c}`` for scalar players;
    ``u_i = x_i (p0 - s sum(x)) - c x_i``.
``log_congestion``  ``{"weights": D_i, "congestion": c}``, all players of equal
    dimension; ``u_i = sum_k w_k log(1 + x_ik) - c sum_k x_ik L_k`` with
    ``L_k = sum_j x_jk``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Optional

import jsonschema
import numpy as np

from .engine import Schedule, auto_delta
from .game_model import AffineConstraint, Game, PlayerSpec
from .geometry import ActionSet
from .mirror import Regularizer

SCHEMA_VERSION = 1
BUILTINS = ("lq2", "cournot_capacity", "simplex_alloc")

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "players", "constraint"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "players": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object",
                "required": ["set", "utility"],
                "additionalProperties": False,
                "properties": {
                    "set": {
                        "type": "object", "required": ["kind", "dim"],
                        "properties": {
                            "kind": {"enum": ["box", "simplex", "euclidean_ball", "halfspace_polytope"]},
                            "dim": {"type": "integer", "minimum": 1},
                            "lower": _vec, "upper": _vec, "center": _vec,
                            "radius": {"type": "number", "exclusiveMinimum": 0},
                            "rows": _mat, "offsets": _vec,
                        },
                        "additionalProperties": False,
                    },
                    "utility": {
                        "type": "object", "required": ["family"],
                        "properties": {
                            "family": {"enum": ["quadratic", "cournot", "log_congestion"]},
                            "H": _mat, "g": _vec,
                            "intercept": _num, "slope": {"type": "number", "minimum": 0}, "cost": _num,
                            "weights": _vec, "congestion": {"type": "number", "minimum": 0},
                        },
                        "additionalProperties": False,
                    },
                    "regularizer": {"enum": ["euclidean", "entropic"]},
                },
            },
        },
        "constraint": {
            "type": "object", "required": ["A", "b"], "additionalProperties": False,
            "properties": {"A": _mat, "b": _vec},
        },
        "schedule": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "family": {"enum": ["harmonic", "power"]},
                "gamma0": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"oneOf": [{"const": "auto"}, {"type": "number", "minimum": 0}]},
                "margin": {"type": "number", "exclusiveMinimum": 0},
                "exponent": {"type": "number", "minimum": 0},
            },
        },
        "horizon": {"type": "integer", "minimum": 0},
        "stride": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "reference": {
            "type": "object", "required": ["x"], "additionalProperties": False,
            "properties": {"x": _vec, "lambda": {"type": "array", "items": _num}},
        },
    },
}


class ScenarioError(ValueError):
    """Malformed scenario; ``pointer`` is a JSON pointer to the offending field."""

    def __init__(self, pointer, message):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer or "/"


def _pointer(path):
    return "/" + "/".join(str(p) for p in path) if path else "/"


DEFAULT_SCHEDULE = {"family": "harmonic", "gamma0": 1.0, "delta": "auto", "margin": 0.5, "exponent": 1.0}


@dataclass
class ScenarioSpec:
    """Plain-data scenario mirroring the JSON document field for field."""

    players: list
    constraint: dict
    name: str = ""
    schedule: dict = field(default_factory=lambda: dict(DEFAULT_SCHEDULE))
    horizon: int = 10_000
    stride: int = 100
    seed: int = 0
    reference: Optional[dict] = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        d = {"schema_version": self.schema_version, "name": self.name,
             "players": copy.deepcopy(self.players), "constraint": copy.deepcopy(self.constraint),
             "schedule": dict(self.schedule), "horizon": self.horizon, "stride": self.stride,
             "seed": self.seed}
        if self.reference is not None:
            d["reference"] = copy.deepcopy(self.reference)
        return d

    @classmethod
    def from_dict(cls, doc):
        validate_document(doc)
        sched = dict(DEFAULT_SCHEDULE)
        sched.update(doc.get("schedule", {}))
        return cls(players=copy.deepcopy(doc["players"]), constraint=copy.deepcopy(doc["constraint"]),
                   name=doc.get("name", ""), schedule=sched, horizon=doc.get("horizon", 10_000),
                   stride=doc.get("stride", 100), seed=doc.get("seed", 0),
                   reference=copy.deepcopy(doc.get("reference")))

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ScenarioError("/", f"invalid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def build(self):
        return build_game(self)

    def regularizers(self, game):
        return [Regularizer(p.get("regularizer", "euclidean"), S)
                for p, S in zip(self.players, game.sets)]

    def make_schedule(self, constants):
        s = self.schedule
        delta = s.get("delta", "auto")
        if delta == "auto":
            delta = auto_delta(constants, s.get("margin", 0.5))
        if s.get("family", "harmonic") == "harmonic":
            return Schedule.harmonic(delta, gamma0=s.get("gamma0", 1.0))
        return Schedule.power(s.get("exponent", 1.0), delta, gamma0=s.get("gamma0", 1.0))

    def reference_pair(self):
        if self.reference is None:
            return None
        lam = self.reference.get("lambda")
        return (np.asarray(self.reference["x"], dtype=float),
                None if lam is None else np.asarray(lam, dtype=float))


def validate_document(doc):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ScenarioError(_pointer(err.absolute_path), err.message)
    dims = []
    for k, p in enumerate(doc["players"]):
        s = p["set"]
        dim = s["dim"]
        base = f"/players/{k}/set"
        need = {"box": ("lower", "upper"), "euclidean_ball": ("center", "radius"),
                "halfspace_polytope": ("rows", "offsets"), "simplex": ()}[s["kind"]]
        for key in need:
            if key not in s:
                raise ScenarioError(f"{base}/{key}", f"required for kind {s['kind']!r}")
        for key in ("lower", "upper", "center"):
            if key in s and len(s[key]) not in ((1, dim) if key != "center" else (dim,)):
                raise ScenarioError(f"{base}/{key}", f"length must be {dim}")
        if "rows" in s and any(len(r) != dim for r in s["rows"]):
            raise ScenarioError(f"{base}/rows", f"every row needs {dim} entries")
        if p.get("regularizer") == "entropic" and s["kind"] != "simplex":
            raise ScenarioError(f"/players/{k}/regularizer", "entropic needs a simplex set")
        dims.append(dim)
    n = sum(dims)
    for k, p in enumerate(doc["players"]):
        u = p["utility"]
        base = f"/players/{k}/utility"
        fam = u["family"]
        if fam == "quadratic":
            for key in ("H", "g"):
                if key not in u:
                    raise ScenarioError(f"{base}/{key}", "required for the quadratic family")
            if len(u["H"]) != dims[k] or any(len(r) != n for r in u["H"]):
                raise ScenarioError(f"{base}/H", f"must be {dims[k]} x {n}")
            if len(u["g"]) != dims[k]:
                raise ScenarioError(f"{base}/g", f"length must be {dims[k]}")
        elif fam == "cournot":
            for key in ("intercept", "slope", "cost"):
                if key not in u:
                    raise ScenarioError(f"{base}/{key}", "required for the cournot family")
            if dims[k] != 1:
                raise ScenarioError(f"/players/{k}/set/dim", "cournot players are scalar")
        else:
            for key in ("weights", "congestion"):
                if key not in u:
                    raise ScenarioError(f"{base}/{key}", "required for the log_congestion family")
            if len(u["weights"]) != dims[k] or len(set(dims)) != 1:
                raise ScenarioError(f"{base}/weights", "all log_congestion players need equal dimension")
    A = doc["constraint"]["A"]
    b = doc["constraint"]["b"]
    if len(A) != len(b):
        raise ScenarioError("/constraint/b", f"length must equal the {len(A)} rows of A")
    for r, row in enumerate(A):
        if len(row) != n:
            raise ScenarioError(f"/constraint/A/{r}", f"row needs {n} entries")
    if not (np.all(np.isfinite(np.asarray(A, dtype=float))) and np.all(np.isfinite(np.asarray(b, dtype=float)))):
        raise ScenarioError("/constraint", "matrix entries must be finite")
    ref = doc.get("reference")
    if ref is not None:
        if len(ref["x"]) != n:
            raise ScenarioError("/reference/x", f"length must be {n}")
        if "lambda" in ref and len(ref["lambda"]) != len(b):
            raise ScenarioError("/reference/lambda", f"length must be {len(b)}")


# -- utility families ---------------------------------------------------------------


def _quadratic(H, g, s):
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    Hii = H[:, s]
    if not np.allclose(Hii, Hii.T):
        raise ScenarioError("", "own-block of H must be symmetric")

    def grad(x):
        return H @ x + g

    def util(x):
        xi = x[s]
        other = H @ x - Hii @ xi
        return float(0.5 * xi @ Hii @ xi + xi @ (other + g))

    return grad, util


def _cournot(p0, slope, cost, s):
    def grad(x):
        return np.array([p0 - cost - slope * x.sum() - slope * x[s][0]])

    def util(x):
        xi = x[s][0]
        return float(xi * (p0 - slope * x.sum()) - cost * xi)

    return grad, util


def _log_congestion(w, c, s, slices):
    w = np.asarray(w, dtype=float)

    def load(x):
        return sum(x[t] for t in slices)

    def grad(x):
        xi = x[s]
        return w / (1.0 + xi) - c * (load(x) + xi)

    def util(x):
        xi = x[s]
        return float(w @ np.log1p(xi) - c * xi @ load(x))

    return grad, util


def build_game(spec):
    doc = spec.to_dict() if isinstance(spec, ScenarioSpec) else spec
    sets = []
    for k, p in enumerate(doc["players"]):
        try:
            sets.append(ActionSet.from_dict(p["set"]))
        except ValueError as exc:
            raise ScenarioError(f"/players/{k}/set", str(exc)) from exc
    dims = [S.dim for S in sets]
    edges = np.cumsum([0, *dims])
    slices = [slice(int(edges[i]), int(edges[i + 1])) for i in range(len(sets))]
    n = int(edges[-1])
    players = []
    rowsP, rowsq = [], []
    affine = True
    for k, (p, S, s) in enumerate(zip(doc["players"], sets, slices)):
        u = p["utility"]
        fam = u["family"]
        if fam == "quadratic":
            grad, util = _quadratic(u["H"], u["g"], s)
            rowsP.append(np.asarray(u["H"], dtype=float))
            rowsq.append(np.asarray(u["g"], dtype=float))
        elif fam == "cournot":
            grad, util = _cournot(u["intercept"], u["slope"], u["cost"], s)
            row = -u["slope"] * np.ones((1, n))
            row[0, s] -= u["slope"]
            rowsP.append(row)
            rowsq.append(np.array([u["intercept"] - u["cost"]]))
        else:
            grad, util = _log_congestion(u["weights"], u["congestion"], s, slices)
            affine = False
        players.append(PlayerSpec(S, grad, util, name=f"player{k}"))
    constraint = AffineConstraint.from_matrix(doc["constraint"]["A"], doc["constraint"]["b"], dims)
    aff = None
    joint = None
    if affine:
        P = np.vstack(rowsP)
        q = np.concatenate(rowsq)
        aff = (P, q)

        def joint(x, P=P, q=q):
            return P @ x + q
    return Game(players, constraint, affine=aff, joint_gradient=joint, name=doc.get("name", ""))


# -- built-ins ------------------------------------------------------------------------


def lq2_spec(a=(1.0, 1.5), c=(0.8, 0.7), e=0.5, b=1.0, upper=1.0):
    """Two scalar players, ``u_i = -a_i (x_i - c_i)^2 - e x_i x_j`` on ``[0, upper]``, ``x1 + x2 <= b``."""
    H = [[[-2 * a[0], -e]], [[-e, -2 * a[1]]]]
    g = [[2 * a[0] * c[0]], [2 * a[1] * c[1]]]
    players = [{"set": {"kind": "box", "dim": 1, "lower": [0.0], "upper": [upper]},
                "utility": {"family": "quadratic", "H": H[i], "g": g[i]},
                "regularizer": "euclidean"} for i in range(2)]
    return ScenarioSpec(players=players, constraint={"A": [[1.0, 1.0]], "b": [float(b)]}, name="lq2",
                        horizon=200_000, stride=100)


def cournot_spec(n=3, intercept=10.0, slope=1.0, cost=1.0, q_max=5.0, capacity=3.0):
    """Cournot oligopoly with price ``p0 - s sum(x)`` and shared capacity ``sum(x) <= capacity``."""
    costs = np.broadcast_to(np.asarray(cost, dtype=float), (n,))
    players = [{"set": {"kind": "box", "dim": 1, "lower": [0.0], "upper": [float(q_max)]},
                "utility": {"family": "cournot", "intercept": float(intercept), "slope": float(slope),
                            "cost": float(costs[i])},
                "regularizer": "euclidean"} for i in range(n)]
    return ScenarioSpec(players=players, constraint={"A": [[1.0] * n], "b": [float(capacity)]},
                        name="cournot_capacity", horizon=200_000, stride=100)


def simplex_alloc_spec(weights=((3.0, 1.0, 1.0), (2.5, 1.5, 1.0), (2.0, 1.0, 2.0)),
                       congestion=0.5, capacities=(1.0, 0.8)):
    """Players split one unit over resources; loads of the first resources are capped."""
    W = np.asarray(weights, dtype=float)
    n, D = W.shape
    players = [{"set": {"kind": "simplex", "dim": D},
                "utility": {"family": "log_congestion", "weights": W[i].tolist(),
                            "congestion": float(congestion)},
                "regularizer": "entropic"} for i in range(n)]
    A = []
    for r in range(len(capacities)):
        row = np.zeros(n * D)
        row[r::D] = 1.0
        A.append(row.tolist())
    return ScenarioSpec(players=players, constraint={"A": A, "b": [float(c) for c in capacities]},
                        name="simplex_alloc", horizon=400_000, stride=200)


def builtin_spec(name, **overrides):
    makers = {"lq2": lq2_spec, "cournot_capacity": cournot_spec, "simplex_alloc": simplex_alloc_spec}
    if name not in makers:
        raise KeyError(f"unknown builtin scenario {name!r}; choose from {', '.join(BUILTINS)}")
    return makers[name](**overrides)


def builtin(name, **overrides):
    """``(game, spec)`` for a built-in scenario."""
    spec = builtin_spec(name, **overrides)
    return spec.build(), spec
