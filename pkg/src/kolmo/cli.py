"""Command line entry point ``kolmo``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 equivalence violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import tempfile
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .barrier import build_barrier, verify_strict_superharmonicity
from .criterion import CriterionParams, evaluate_criterion
from .data import boundary_function
from .dirichlet import (ProbeConfig, SolverConfig, regularity_probe_evolution, regularity_probe_stationary,
                        solve_evolution, solve_stationary)
from .domain import Cylinder, from_spec
from .errors import ConfigError, EquivalenceViolation, NumericalError, StructureError
from .fundamental import GammaContext, gamma
from .harness import (ExperimentSpec, assert_equivalence, equivalence_summary, gold_suite, rows_to_csv,
                      run_criterion_sufficiency_check, run_suite)
from .operator import OUOperator, validate
from .parallel import resolve_workers

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_EQUIVALENCE = 1, 2, 3


class Result:
    """Payload plus an optional CSV rendering and a deferred exit code."""

    def __init__(self, payload: dict, csv_text: str | None = None, code: int = 0):
        self.payload = payload
        self.csv_text = csv_text
        self.code = code


def _flat_csv(d: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    for k, v in d.items():
        w.writerow([k, json.dumps(v) if isinstance(v, (list, dict)) else v])
    return buf.getvalue()


def _operator(cfg: dict) -> OUOperator:
    op_cfg = cfg.get("operator", cfg)
    if not isinstance(op_cfg, dict):
        raise ConfigError("operator config must be an object")
    return OUOperator.from_dict(op_cfg)


def _context(cfg: dict) -> GammaContext:
    op = _operator(cfg)
    report = validate(op)
    if not report.ok:
        raise ConfigError(f"operator fails validation: {report.failures()}")
    return GammaContext.from_operator(op)


def _need(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config missing key {key!r}")
    return cfg[key]


def _sub(cls, cfg, seed):
    cfg = dict(cfg or {})
    if seed is not None:
        cfg["seed"] = seed
    try:
        return cls(**cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cls.__name__}: {exc}") from None


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"cannot parse vector {text!r}") from None


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(cfg, args) -> Result:
    op = _operator(cfg)
    rep = validate(op)
    payload = {"operator": op.to_dict(), "N": op.N, "Q": op.Q, **rep.to_dict(), "ok": rep.ok}
    return Result(payload, _flat_csv(payload), 0 if rep.ok else EXIT_CONFIG)


def cmd_gamma(cfg, args) -> Result:
    ctx = _context(cfg)
    if args.x is None or args.t is None:
        raise ConfigError("gamma needs --x and --t")
    x = _floats(args.x)
    if x.shape != (ctx.N,):
        raise ConfigError(f"--x must have {ctx.N} components")
    val = gamma(ctx, x, float(args.t))
    payload = {"x": x.tolist(), "t": float(args.t), "gamma": val, "drift_sign": ctx.drift_sign,
               "C_Q": ctx.CQ, "Q": ctx.Q}
    return Result(payload, _flat_csv(payload))


def cmd_criterion(cfg, args) -> Result:
    ctx = _context(cfg)
    dom = from_spec(_need(cfg, "domain"))
    params = _sub(CriterionParams, cfg.get("params"), args.seed)
    rep = evaluate_criterion(ctx, dom, _need(cfg, "x0"), params, args.workers)
    return Result(rep.to_dict(), rep.to_csv())


def _cylinder(dom, cfg):
    c = cfg.get("cylinder")
    if c is None:
        return None
    try:
        return Cylinder(dom, float(c["t0"]), float(c["t1"]))
    except KeyError as exc:
        raise ConfigError(f"cylinder missing key {exc}") from None


def cmd_solve(cfg, args) -> Result:
    ctx = _context(cfg)
    dom = from_spec(_need(cfg, "domain"))
    solver = _sub(SolverConfig, cfg.get("solver"), args.seed)
    data = boundary_function(_need(cfg, "data"), ctx.N)
    x = np.asarray(_need(cfg, "x"), dtype=float)
    cyl = _cylinder(dom, cfg)
    if cyl is None:
        est = solve_stationary(ctx, dom, data, x, solver, args.workers)
    else:
        est = solve_evolution(ctx, cyl, data, (x, float(_need(cfg, "t"))), solver, args.workers)
    payload = est.to_dict()
    return Result(payload, _flat_csv(payload))


def cmd_probe(cfg, args) -> Result:
    ctx = _context(cfg)
    dom = from_spec(_need(cfg, "domain"))
    solver = _sub(SolverConfig, cfg.get("solver"), args.seed)
    pc = _sub(ProbeConfig, cfg.get("probe"), None)
    point = np.asarray(_need(cfg, "point"), dtype=float)
    cyl = _cylinder(dom, cfg)
    if cyl is None:
        v = regularity_probe_stationary(ctx, dom, point, solver, pc, args.workers)
    else:
        t0 = float(cfg.get("t", 0.5 * (cyl.t0 + cyl.t1)))
        v = regularity_probe_evolution(ctx, cyl, (point, t0), solver, pc, args.workers)
    return Result(v.to_dict(), v.to_csv())


def cmd_barrier(cfg, args) -> Result:
    op = _operator(cfg)
    Y = from_spec(_need(cfg, "working_set"))
    b = build_barrier(op, _need(cfg, "point"), Y, cfg.get("lambda"))
    grid = cfg.get("grid", {})
    rep = verify_strict_superharmonicity(b, op, int(grid.get("per_axis", 64)),
                                         int(grid.get("random_points", 10_000)),
                                         int(args.seed if args.seed is not None else grid.get("seed", 0)))
    payload = rep.to_dict()
    return Result(payload, _flat_csv(payload), 0 if rep.ok else EXIT_EQUIVALENCE)


def _experiments(cfg, seed):
    if "suite" in cfg:
        if cfg["suite"] != "gold":
            raise ConfigError(f"unknown suite {cfg['suite']!r}")
        opts = {k: cfg[k] for k in ("paths", "samples_per_k", "kmax") if k in cfg}
        return gold_suite(seed=seed if seed is not None else int(cfg.get("seed", 0)), **opts)
    raw = cfg.get("experiments", [cfg])
    out = []
    for e in raw:
        e = dict(e)
        if seed is not None:
            e["seed"] = seed
        out.append(ExperimentSpec.from_dict(e))
    return out


def cmd_equivalence(cfg, args) -> Result:
    specs = _experiments(cfg, args.seed)
    rows = run_suite(specs, args.workers)
    payload = {"rows": [asdict(r) for r in rows], "equivalence": equivalence_summary(rows),
               "sufficiency": run_criterion_sufficiency_check(rows)}
    code = 0
    try:
        assert_equivalence(rows)
    except EquivalenceViolation as exc:
        print(f"equivalence violation: {exc}", file=sys.stderr)
        code = EXIT_EQUIVALENCE
    return Result(payload, rows_to_csv(rows), code)


COMMANDS = {
    "validate": (cmd_validate, "check the structural hypotheses of an operator"),
    "gamma": (cmd_gamma, "evaluate the fundamental solution at (x, t)"),
    "criterion": (cmd_criterion, "evaluate the regularity series at a boundary point"),
    "solve": (cmd_solve, "Monte Carlo Dirichlet solution at an interior point"),
    "probe": (cmd_probe, "regularity probe at a boundary point"),
    "barrier": (cmd_barrier, "build and verify an explicit barrier"),
    "equivalence": (cmd_equivalence, "stationary/evolution equivalence experiments"),
}


# --------------------------------------------------------------------------
# plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kolmo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kolmo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", help="output file (stdout when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="worker threads (default: $KOLMO_WORKERS or CPU count)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if name == "gamma":
            p.add_argument("--x", help="comma separated point")
            p.add_argument("--t", type=float, help="time")
    return parser


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _manifest(command: str, raw: bytes, args) -> dict:
    return {
        "command": command,
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "seed": args.seed,
        "workers": resolve_workers(args.workers),
        "versions": {"kolmo": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _emit(result: Result, manifest: dict, args) -> None:
    if args.format == "csv":
        body = result.csv_text if result.csv_text is not None else _flat_csv(result.payload)
        side = json.dumps(manifest, indent=2) + "\n"
        if args.out:
            atomic_write(Path(args.out), body)
            atomic_write(Path(str(args.out) + ".manifest.json"), side)
        else:
            sys.stdout.write(body)
            sys.stderr.write(side)
        return
    doc = json.dumps({"result": result.payload, "manifest": manifest}, indent=2, default=_default) + "\n"
    if args.out:
        atomic_write(Path(args.out), doc)
    else:
        sys.stdout.write(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        raw = Path(args.config).read_bytes()
        cfg = json.loads(raw)
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        result = func(cfg, args)
        _emit(result, _manifest(args.command, raw, args), args)
        return result.code
    except (ConfigError, StructureError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EquivalenceViolation as exc:
        print(f"equivalence violation: {exc}", file=sys.stderr)
        return EXIT_EQUIVALENCE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
