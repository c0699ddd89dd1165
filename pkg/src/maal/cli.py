"""Command line entry point: ``maal run | validate-schedule | check-game | report``.

Exit status is 0 on success, 2 when validation fails (bad scenario, invalid
schedule, refuted assumption) and 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, engine, game_model, oracle, scenarios
from .diagnostics import _jsonable

OUTPUT_DIR_ENV = "MAAL_OUTPUT_DIR"

log = logging.getLogger("maal")


class ValidationFailure(Exception):
    pass


def _delta(text):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a number or 'auto'") from None
    if value < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return value


def _add_source(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--builtin", choices=scenarios.BUILTINS, help="built-in scenario name")
    g.add_argument("--scenario", type=Path, help="scenario JSON file")


def _load(args):
    if args.builtin:
        return scenarios.builtin_spec(args.builtin)
    if args.scenario:
        return scenarios.ScenarioSpec.load(args.scenario)
    return None


def _output_dir(args):
    out = args.out or os.environ.get(OUTPUT_DIR_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _reference(spec, game):
    """Scenario reference if given, else an oracle solution (``None`` if both oracles fail)."""
    ref = spec.reference_pair()
    if ref is not None:
        return ref
    try:
        if game.affine is not None and all(S.is_polyhedral for S in game.sets) \
                and game.dim + game.constraint.rows <= 10:
            sol = oracle.solve_lq_kkt(game)
        else:
            sol = oracle.solve_extragradient(game)
    except oracle.OracleError as exc:
        log.warning("no reference solution: %s", exc)
        return None
    return sol.x, sol.lam


def _emit(doc):
    print(json.dumps(_jsonable(doc), indent=2))


def cmd_run(args):
    spec = _load(args)
    sched = spec.schedule
    if args.schedule:
        sched["family"] = args.schedule
    for key in ("gamma0", "delta", "margin", "exponent"):
        val = getattr(args, key)
        if val is not None:
            sched[key] = val
    horizon = args.horizon if args.horizon is not None else spec.horizon
    stride = args.stride if args.stride is not None else spec.stride
    game = spec.build()
    regs = spec.regularizers(game)
    constants = game_model.estimate_constants(game, seed=spec.seed, regularizers=regs)
    schedule = spec.make_schedule(constants)
    cert = engine.validate_schedule(schedule, constants, horizon_check=max(horizon, 1))
    if not cert.valid:
        _emit({"schedule_certificate": cert.to_dict()})
        raise ValidationFailure("schedule fails: " + ", ".join(cert.failing()))
    reference = None if args.no_reference else _reference(spec, game)
    ledger_ref = None
    if reference is not None and reference[1] is not None:
        ledger_ref = reference
    result = engine.run(game, regs, schedule, horizon, stride=stride, constants=constants,
                        waive_validation=True, reference=ledger_ref)
    result.certificate = cert
    report = diagnostics.convergence_metrics(result, reference=reference)
    drift = diagnostics.check_drift_bound(result.ledger, constants) if result.ledger is not None else None
    extra = {"scenario": spec.name, "schedule": schedule.to_dict(), "horizon": horizon, "stride": stride}
    if reference is not None:
        x_ref, lam_ref = reference
        extra["reference"] = {"x": x_ref, "lambda": lam_ref}
        dist = float(report.distance[-1])
        extra["distance_ok"] = dist <= diagnostics.CONVERGENCE_TOL
        report.verdicts["converged"] = report.verdicts["converged"] and extra["distance_ok"]
    out = _output_dir(args)
    stem = args.name or (spec.name or "scenario")
    csv_path = out / f"{stem}_trajectory.csv"
    json_path = out / f"{stem}_summary.json"
    diagnostics.write_trajectory_csv(report, csv_path)
    doc = diagnostics.write_summary_json(json_path, report, constants, cert, drift, extra)
    print(json.dumps({"trajectory": str(csv_path), "summary": str(json_path),
                      "converged": report.converged, "flags": report.flags}, ensure_ascii=False))
    return 0


def cmd_validate_schedule(args):
    spec = _load(args)
    if spec is not None:
        game = spec.build()
        constants = game_model.estimate_constants(game, seed=spec.seed, regularizers=spec.regularizers(game))
    else:
        # only Ctilde2 enters the conditions; C1 and C3 are placeholders
        c2 = args.ctilde2
        constants = game_model.GameConstants(C1=1.0, C2=float(np.sqrt(2.0 * c2)), C3=1.0, K=1.0)
    delta = args.theta_delta
    if delta == "auto":
        delta = engine.auto_delta(constants, args.margin)
    if args.family == "harmonic":
        schedule = engine.Schedule.harmonic(delta, gamma0=args.gamma0)
    elif args.family == "power":
        schedule = engine.Schedule.power(args.exponent, delta, gamma0=args.gamma0)
    else:
        schedule = engine.Schedule.power(0.0, delta, gamma0=args.gamma0)
    cert = engine.validate_schedule(schedule, constants, horizon_check=args.horizon_check)
    _emit({"schedule": schedule.to_dict(), "Ctilde2": constants.Ctilde2, "certificate": cert.to_dict()})
    if not cert.valid:
        for name in cert.failing():
            print(f"failing condition: {name} ({engine.CONDITION_TEXT[name]})", file=sys.stderr)
        return 2
    return 0


def cmd_check_game(args):
    spec = _load(args)
    game = spec.build()
    regs = spec.regularizers(game)
    slater = game_model.check_slater(game)
    conc = [game_model.check_concavity(game, i, samples=args.samples, seed=spec.seed)
            for i in range(game.n_players)]
    constants = game_model.estimate_constants(game, seed=spec.seed, regularizers=regs)
    _emit({"scenario": spec.name, "slater": slater.to_dict(),
           "concavity": [r.to_dict() for r in conc], "constants": constants.to_dict(),
           "auto_delta": engine.auto_delta(constants)})
    ok = slater.holds and all(r.passed for r in conc)
    return 0 if ok else 2


def cmd_report(args):
    spec = _load(args)
    game = spec.build()
    stored = diagnostics.read_trajectory_csv(args.trajectory)
    if stored.X.shape[1] != game.dim or stored.lam.shape[1] != game.constraint.rows:
        raise ValidationFailure("trajectory columns do not match the scenario dimensions")
    reference = None if args.no_reference else _reference(spec, game)
    report = diagnostics.convergence_metrics(stored, game=game, reference=reference)
    doc = {"summary": report.summary(), "scenario": spec.name}
    if args.output:
        doc = diagnostics.write_summary_json(args.output, report, extra={"scenario": spec.name})
    _emit(doc)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="maal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the algorithm on a scenario")
    _add_source(p)
    p.add_argument("--schedule", choices=["harmonic", "power"])
    p.add_argument("--gamma0", type=float)
    p.add_argument("--delta", type=_delta, help="theta_t = delta * gamma_t; 'auto' = 2 Ctilde2 (1 + margin)")
    p.add_argument("--margin", type=float)
    p.add_argument("--exponent", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_DIR_ENV} or .)")
    p.add_argument("--name", help="file stem for outputs (default: scenario name)")
    p.add_argument("--no-reference", action="store_true", help="skip the oracle reference")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate-schedule", help="certify a step-size / augmentation schedule")
    _add_source(p, required=False)
    p.add_argument("--family", choices=["harmonic", "power", "constant"], default="harmonic")
    p.add_argument("--gamma0", type=float, default=1.0)
    p.add_argument("--theta-delta", type=_delta, default="auto")
    p.add_argument("--margin", type=float, default=0.5)
    p.add_argument("--exponent", type=float, default=1.0)
    p.add_argument("--ctilde2", type=float, default=0.5,
                   help="Ctilde2 to use when no scenario is given")
    p.add_argument("--horizon-check", type=int, default=100_000)
    p.set_defaults(func=cmd_validate_schedule)

    p = sub.add_parser("check-game", help="Slater, concavity and constants report")
    _add_source(p)
    p.add_argument("--samples", type=int, default=200)
    p.set_defaults(func=cmd_check_game)

    p = sub.add_parser("report", help="recompute diagnostics from a stored trajectory")
    _add_source(p)
    p.add_argument("--trajectory", type=Path, required=True)
    p.add_argument("--output", type=Path, help="write the summary JSON here")
    p.add_argument("--no-reference", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (scenarios.ScenarioError, ValidationFailure, engine.ScheduleError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except game_model.GameError as exc:
        print(f"invalid game: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
