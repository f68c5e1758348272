"""Command-line front end: ``octodesign size | tune | simulate | codesign``.

Every command reads one JSON configuration (the bundled default when
``--config`` is omitted), writes its outputs into ``--out`` and records
timestamps only in ``meta.json`` so that reruns with the same configuration
and seed are byte-identical everywhere else.

Exit codes: 0 success, 2 configuration error, 3 infeasible or diverged,
4 numerical failure.  Log verbosity follows ``OCTODESIGN_LOG_LEVEL``.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import __version__
from .config import ConfigError, RunConfig, validate_output
from .control import AllocationError, ControlGains
from .designopt import CONSTRAINT_NAMES, DesignProblem, optimize
from .dynamics import DynamicsError, SimulationDiverged, TrimError, simulate_mission
from .htune import TuningError, build_problem, synthesize
from .linear import LinearError
from .sizing import DESIGN_NAMES, PlantDesign, SizingError, assemble_vehicle, mass_breakdown

log = logging.getLogger("octodesign")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4
ACTIVE_TOL = 0.05
LOG_ENV = "OCTODESIGN_LOG_LEVEL"


class Infeasible(RuntimeError):
    """Raised after the outputs are written when the result is infeasible or diverged."""


def _dump(obj, path: Path, schema: str | None = None):
    if schema is not None:
        validate_output(obj, schema)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")
    return path


def _finite_or_none(v):
    v = float(v)
    return v if math.isfinite(v) else None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_size(cfg: RunConfig) -> list:
    try:
        params = assemble_vehicle(cfg.design, cfg.reference(), cfg.bounds)
    except SizingError as exc:
        raise ConfigError(str(exc)) from None
    x = cfg.design.as_array()
    s = params.summary()
    report = {
        "design": dict(zip(DESIGN_NAMES, x.tolist())),
        "relative_change": dict(zip(DESIGN_NAMES, (x - 1.0).tolist())),
        "mass": mass_breakdown(params),
        "m_total": params.m_total,
        "I_body": list(params.I_body),
        "components": {k: s[k] for k in ("motor", "rotor", "battery", "arm")},
    }
    return [_dump(report, cfg.output / "size_report.json", "size_report.schema.json")]


def _tune(cfg: RunConfig):
    params = assemble_vehicle(cfg.design, cfg.reference(), cfg.bounds)
    problem = build_problem(params, ftc=cfg.ftc, **cfg.tuning_kwargs())
    return params, synthesize(problem, budget=cfg.tuning_budget, seed=cfg.seed)


def cmd_tune(cfg: RunConfig) -> list:
    try:
        _, result = _tune(cfg)
    except SizingError as exc:
        raise ConfigError(str(exc)) from None
    files = [
        _dump(result.to_dict(), cfg.output / "tuning.json", "tuning_result.schema.json"),
        _dump(result.gains.to_dict(), cfg.output / "gains.json", "gains.schema.json"),
    ]
    if not result.feasible:
        raise Infeasible("no gains satisfy every requirement", files)
    return files


def simulation_summary(trace, fault) -> dict:
    """Trace statistics plus recovery metrics for a (possibly faulty) flight."""
    s = trace.summary()
    tail = trace.time >= trace.time[-1] - 1.0
    steady = trace.rotor_speed[tail].mean(axis=0)
    healthy = [j for j in range(steady.size) if j != fault.index]
    s.update({
        "fault": None if fault.failed_rotor is None
        else {"rotor": fault.failed_rotor, "time": fault.fail_time},
        "E_power_integral": float(trapezoid(trace.power, trace.time)),
        "recovery_time": _finite_or_none(trace.recovery_time()),
        "final_position_error": float(trace.position_error()[-1]),
        "final_attitude_error": float(trace.attitude_error()[-1]),
        "steady_rotor_speed": steady.tolist(),
        "slowest_rotor": int(healthy[int(np.argmin(steady[healthy]))]) + 1 if healthy else None,
    })
    return s


def cmd_simulate(cfg: RunConfig, gains_path=None) -> list:
    try:
        params = assemble_vehicle(cfg.design, cfg.reference(), cfg.bounds)
    except SizingError as exc:
        raise ConfigError(str(exc)) from None
    files = []
    if gains_path is not None:
        try:
            gains = ControlGains.load(gains_path)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read gains file {gains_path}: {exc}") from None
    else:
        log.info("no gains file given: tuning the configured design first")
        _, result = _tune(cfg)
        files.append(_dump(result.gains.to_dict(), cfg.output / "gains.json", "gains.schema.json"))
        gains = result.gains
    fault = cfg.fault()
    try:
        trace = simulate_mission(params, gains, cfg.simulation_mission(), fault, dt=cfg.simulation.dt)
        diverged = None
    except SimulationDiverged as exc:
        trace, diverged = exc.trace, exc
    trace.to_csv(cfg.output / "trace.csv")
    files.append(cfg.output / "trace.csv")
    files.append(_dump(simulation_summary(trace, fault), cfg.output / "summary.json",
                       "simulation_summary.schema.json"))
    if diverged is not None:
        raise Infeasible(str(diverged), files)
    return files


def _constraint_report(values) -> list:
    return [{"name": n, "value": float(v), "satisfied": bool(v <= 0.0), "active": bool(abs(v) <= ACTIVE_TOL)}
            for n, v in zip(CONSTRAINT_NAMES, values)]


def cmd_codesign(cfg: RunConfig) -> list:
    problem = DesignProblem(
        cfg.reference(), cfg.mission(), objective=cfg.objective, bounds=cfg.bounds,
        faults=cfg.faults, ftc=cfg.ftc, inner_budget=cfg.tuning_budget,
        outer_budget=cfg.outer_budget, initial_samples=cfg.initial_samples, dt=cfg.codesign_dt,
        eta_dod=cfg.eta_dod, power_margin=cfg.power_margin, nominal_tier=cfg.nominal,
        degraded_tier=cfg.degraded, restarts=cfg.restarts,
    )

    def progress(ev):
        log.info("candidate %s: %s objective=%s", np.round(ev.x, 4).tolist(), ev.status, ev.objective)

    result = optimize(problem, seed=cfg.seed, callback=progress)
    best = result.best
    idx = next(i for i, ev in enumerate(result.history) if ev is best)
    hist = cfg.output / "history.csv"
    hist.write_text(result.history_csv())
    report = best.report()
    tuning = best.tuning
    report.update({
        "objective_name": cfg.objective,
        "feasible_found": result.feasible_found,
        "evaluations": len(result.history),
        "best_index": idx,
        "gains": tuning.gains.to_dict() if tuning is not None else None,
        "tuning": tuning.to_dict() if tuning is not None else None,
    })
    files = [
        hist,
        _dump(report, cfg.output / "best_design.json", "best_design.schema.json"),
        _dump(_constraint_report(best.constraints), cfg.output / "constraints.json",
              "constraints.schema.json"),
    ]
    if math.isfinite(best.m_total):
        params = assemble_vehicle(PlantDesign.from_array(best.x), problem.reference)
        files.append(_dump(mass_breakdown(params), cfg.output / "mass.json", "mass_report.schema.json"))
    if not result.feasible_found:
        raise Infeasible("no feasible design found within the budget", files)
    return files


COMMANDS = {"size": cmd_size, "tune": cmd_tune, "simulate": cmd_simulate, "codesign": cmd_codesign}


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration JSON (default: bundled)")
    common.add_argument("--out", type=Path, help="output directory (default: config 'output')")
    common.add_argument("--seed", type=_seed, help="random seed (64-bit unsigned)")
    common.add_argument("--objective", choices=("energy", "mass"), help="co-design objective")
    common.add_argument("--ftc", choices=("on", "off"), help="include the single-rotor-failure models")
    common.add_argument("--fault", metavar="ROTOR:TIME", help="failure to inject in simulate ('none' for healthy)")
    parser = argparse.ArgumentParser(prog="octodesign", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("size", parents=[common], help="scale the components of one design")
    sub.add_parser("tune", parents=[common], help="tune the controller of one design")
    sim = sub.add_parser("simulate", parents=[common], help="simulate a mission with given gains")
    sim.add_argument("--gains", type=Path, help="gains JSON (default: tune the design first)")
    sub.add_parser("codesign", parents=[common], help="optimize plant and controller together")
    return parser


def _configure_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _stamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        cfg = cfg.with_overrides(
            out=args.out, seed=args.seed, objective=args.objective,
            ftc=None if args.ftc is None else args.ftc == "on", fault=args.fault,
        )
        cfg.output.mkdir(parents=True, exist_ok=True)
    except (ConfigError, DynamicsError, OSError) as exc:
        print(f"octodesign: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    started, t0 = _stamp(), time.perf_counter()
    files, code = [], EXIT_OK
    try:
        _dump(cfg.to_dict(), cfg.output / "config.resolved.json")
        extra = {"gains_path": args.gains} if args.command == "simulate" else {}
        files = COMMANDS[args.command](cfg, **extra)
    except ConfigError as exc:
        print(f"octodesign: configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except Infeasible as exc:
        print(f"octodesign: {exc.args[0]}", file=sys.stderr)
        files, code = exc.args[1], EXIT_INFEASIBLE
    except (TuningError, SimulationDiverged) as exc:
        print(f"octodesign: {exc}", file=sys.stderr)
        code = EXIT_INFEASIBLE
    except (TrimError, AllocationError, LinearError, DynamicsError, np.linalg.LinAlgError,
            FloatingPointError, ArithmeticError) as exc:
        print(f"octodesign: numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    meta = {
        "command": args.command, "version": __version__, "started": started,
        "finished": _stamp(), "elapsed_s": round(time.perf_counter() - t0, 3), "exit_code": code,
        "files": [Path(f).name for f in files],
    }
    _dump(meta, cfg.output / "meta.json", "meta.schema.json")
    return code


if __name__ == "__main__":
    sys.exit(main())
