"""End-to-end regularity experiments.

For every probe point ``x0`` of an experiment the stationary probe on
``Omega``, the evolution probe at ``(x0, T/2)`` on ``Omega x (0, T)`` and the
series criterion are run side by side.  Stationary and evolution regularity
are equivalent, so two conclusive probe verdicts must agree; the criterion
is only sufficient, so the one forbidden combination is a diverging series
at a point the probes call irregular.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .criterion import CriterionParams, evaluate_criterion
from .dirichlet import ProbeConfig, SolverConfig, regularity_probe_evolution, regularity_probe_stationary
from .domain import Cylinder, from_spec
from .errors import ConfigError, EquivalenceViolation
from .fundamental import GammaContext
from .operator import OUOperator, heat, kolmogorov

EXPECTED = ("regular", "irregular", "unknown")
PROBE_TO_LABEL = {"regular-likely": "regular", "irregular-likely": "irregular"}


def _sub(cls, cfg: dict | None):
    cfg = dict(cfg or {})
    names = {f.name for f in fields(cls)}
    unknown = set(cfg) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cls.__name__}: {exc}") from None


@dataclass
class ProbePoint:
    point: list
    expected: str = "unknown"
    direction: list | None = None

    def __post_init__(self):
        if self.expected not in EXPECTED:
            raise ConfigError(f"expected verdict must be one of {EXPECTED}, got {self.expected!r}")
        self.point = [float(v) for v in self.point]


@dataclass
class ExperimentSpec:
    """One operator, one domain and the boundary points to examine there."""

    name: str
    operator: dict
    domain: dict
    probes: list
    criterion: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)
    T: float = 1.0
    t0_fractions: tuple = (0.5,)
    seed: int = 0

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentSpec":
        try:
            probes = [ProbePoint(**p) if isinstance(p, dict) else ProbePoint(list(p)) for p in cfg["probes"]]
            spec = cls(
                name=str(cfg.get("name", "experiment")),
                operator=cfg["operator"],
                domain=cfg["domain"],
                probes=probes,
                criterion=cfg.get("criterion", {}),
                solver=cfg.get("solver", {}),
                probe=cfg.get("probe", {}),
                T=float(cfg.get("T", 1.0)),
                t0_fractions=tuple(cfg.get("t0_fractions", (0.5,))),
                seed=int(cfg.get("seed", 0)),
            )
        except KeyError as exc:
            raise ConfigError(f"experiment spec missing key {exc}") from None
        except TypeError as exc:
            raise ConfigError(f"malformed experiment spec: {exc}") from None
        spec.build()
        return spec

    def to_dict(self) -> dict:
        d = asdict(self)
        d["t0_fractions"] = list(self.t0_fractions)
        return d

    def build(self):
        """Operator context, domain and configs, checked for consistency."""
        op = OUOperator.from_dict(self.operator)
        dom = from_spec(self.domain)
        if dom.dim != op.N:
            raise ConfigError(f"domain dimension {dom.dim} != operator dimension {op.N}")
        for p in self.probes:
            if len(p.point) != op.N:
                raise ConfigError(f"probe point {p.point} has the wrong dimension")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if not all(0 < f < 1 for f in self.t0_fractions):
            raise ConfigError("t0 fractions must lie in (0, 1)")
        crit = _sub(CriterionParams, {"seed": self.seed, **self.criterion})
        solver = _sub(SolverConfig, {"seed": self.seed, **self.solver})
        pcfg = _sub(ProbeConfig, self.probe)
        return op, dom, crit, solver, pcfg


def load_experiment(path) -> ExperimentSpec:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read experiment spec {path}: {exc}") from None
    return ExperimentSpec.from_dict(cfg)


@dataclass
class EquivalenceRow:
    case: str
    x0: list
    t0: float
    expected: str
    stationary: str
    evolution: str
    criterion: str
    probes_agree: bool | None
    forbidden: bool
    matches_expected: bool | None
    stationary_limit: float
    evolution_limit: float


def _agree(a: str, b: str):
    la, lb = PROBE_TO_LABEL.get(a), PROBE_TO_LABEL.get(b)
    if la is None or lb is None:
        return None
    return la == lb


def _forbidden(criterion: str, *probes: str) -> bool:
    return criterion == "diverges-likely" and any(p == "irregular-likely" for p in probes)


def _matches(expected: str, *probes: str):
    if expected == "unknown":
        return None
    labels = [PROBE_TO_LABEL[p] for p in probes if p in PROBE_TO_LABEL]
    if not labels:
        return None
    return all(lab == expected for lab in labels)


def run_equivalence_suite(spec: ExperimentSpec, workers: int | None = None) -> list:
    """One :class:`EquivalenceRow` per probe point and lateral time ``t0``."""
    op, dom, crit, solver, pcfg = spec.build()
    ctx = GammaContext.from_operator(op)
    cyl = Cylinder(dom, 0.0, spec.T)
    rows = []
    for pp in spec.probes:
        pc = pcfg if pp.direction is None else ProbeConfig(**{**asdict(pcfg), "direction": tuple(pp.direction)})
        x0 = np.asarray(pp.point)
        st = regularity_probe_stationary(ctx, dom, x0, solver, pc, workers)
        cr = evaluate_criterion(ctx, dom, x0, crit, workers)
        for frac in spec.t0_fractions:
            t0 = frac * spec.T
            ev = regularity_probe_evolution(ctx, cyl, (x0, t0), solver, pc, workers)
            rows.append(EquivalenceRow(
                case=spec.name, x0=pp.point, t0=t0, expected=pp.expected,
                stationary=st.verdict, evolution=ev.verdict, criterion=cr.verdict,
                probes_agree=_agree(st.verdict, ev.verdict),
                forbidden=_forbidden(cr.verdict, st.verdict, ev.verdict),
                matches_expected=_matches(pp.expected, st.verdict, ev.verdict),
                stationary_limit=st.rows[-1]["estimate"],
                evolution_limit=ev.rows[-1]["estimate"],
            ))
    return rows


def run_suite(specs, workers: int | None = None) -> list:
    """Rows of every experiment, in experiment order."""
    rows = []
    for s in specs:
        rows.extend(run_equivalence_suite(s, workers))
    return rows


def run_criterion_sufficiency_check(rows) -> dict:
    """Count rows where the series diverges while a probe reports irregularity."""
    checked = [r for r in rows if r.criterion != "inconclusive"]
    bad = [asdict(r) for r in checked if r.forbidden]
    return {"checked": len(checked), "excluded": len(rows) - len(checked),
            "forbidden": len(bad), "forbidden_rows": bad, "ok": not bad}


def equivalence_summary(rows) -> dict:
    pairs = [r for r in rows if r.probes_agree is not None]
    disagree = [asdict(r) for r in pairs if not r.probes_agree]
    wrong = [asdict(r) for r in rows if r.matches_expected is False]
    return {"rows": len(rows), "conclusive_pairs": len(pairs), "disagreements": disagree,
            "expected_mismatches": wrong, "ok": not disagree}


def assert_equivalence(rows) -> None:
    """Raise :class:`EquivalenceViolation` on any disagreement or forbidden combination."""
    summ = equivalence_summary(rows)
    suff = run_criterion_sufficiency_check(rows)
    if not summ["ok"]:
        raise EquivalenceViolation(f"stationary/evolution verdicts disagree: {summ['disagreements']}")
    if not suff["ok"]:
        raise EquivalenceViolation(f"diverging series at an irregular point: {suff['forbidden_rows']}")


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    names = [f.name for f in fields(EquivalenceRow)]
    w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    w.writeheader()
    for r in rows:
        d = asdict(r)
        d["x0"] = " ".join(repr(v) for v in r.x0)
        w.writerow(d)
    return buf.getvalue()


# --------------------------------------------------------------------------
# reference cases


def three_dim_operator() -> OUOperator:
    """``p = (2, 1)``: diffusion in ``x1, x2`` and transport ``x1 d/dx3``."""
    return OUOperator(p=(2, 1), A0=np.eye(2), B_blocks=([[1.0], [0.0]],))


def _ball(c, r):
    return {"op": "ball", "center": list(c), "radius": r}


def _box(lo, hi):
    return {"op": "box", "lo": list(lo), "hi": list(hi)}


def gold_suite(seed: int = 0, paths: int = 4000, samples_per_k: int = 100_000, kmax: int = 12) -> list:
    """The reference experiments with classical labels where they are known.

    Heat cases carry regular/irregular labels; the degenerate operators only
    test agreement between the two probes.
    """
    h2, h3, k2, p21 = (heat(2).to_dict(), heat(3).to_dict(), kolmogorov().to_dict(),
                       three_dim_operator().to_dict())
    common = {"solver": {"paths": paths}, "criterion": {"samples_per_k": samples_per_k, "kmax": kmax},
              "seed": seed}
    cases = [
        {"name": "heat2-exterior-ball", "operator": h2,
         "domain": {"op": "puncture", "children": [_ball([0, 0], 3.0)], "point": [0, 0], "radius": 1.0},
         "probes": [{"point": [1.0, 0.0], "expected": "regular"}]},
        {"name": "heat2-ball", "operator": h2, "domain": _ball([0, 0], 1.0),
         "probes": [{"point": [1.0, 0.0], "expected": "regular"}]},
        {"name": "heat2-punctured-ball", "operator": h2,
         "domain": {"op": "puncture", "children": [_ball([0, 0], 1.0)], "point": [0, 0]},
         "probes": [{"point": [0.0, 0.0], "expected": "irregular"}]},
        {"name": "heat2-halfspace", "operator": h2,
         "domain": {"op": "intersect", "children": [{"op": "halfspace", "normal": [1, 0], "offset": 0.0},
                                                    _ball([0, 0], 1.0)]},
         "probes": [{"point": [0.0, 0.0], "expected": "regular"}]},
        {"name": "heat3-ball", "operator": h3, "domain": _ball([0, 0, 0], 1.0),
         "probes": [{"point": [1.0, 0.0, 0.0], "expected": "regular"}]},
        {"name": "heat3-punctured-ball", "operator": h3,
         "domain": {"op": "puncture", "children": [_ball([0, 0, 0], 1.0)], "point": [0, 0, 0]},
         "probes": [{"point": [0.0, 0.0, 0.0], "expected": "irregular"}]},
        {"name": "kolmogorov-box", "operator": k2, "domain": _box([-1, -1], [1, 1]),
         "probes": [{"point": [1.0, 0.0]}, {"point": [0.5, 1.0]}, {"point": [-0.5, 1.0]}]},
        {"name": "kolmogorov-exterior-cone", "operator": k2,
         "domain": {"op": "intersect", "children": [
             _box([-1, -1], [1, 1]),
             {"op": "complement", "children": [
                 {"op": "cone", "vertex": [0, 0], "axis": [0, 1], "aperture": 1.0, "height": 2.0, "p": [1, 1]}]}]},
         "probes": [{"point": [0.0, 0.0]}]},
        {"name": "p21-box", "operator": p21, "domain": _box([-1, -1, -1], [1, 1, 1]),
         "probes": [{"point": [1.0, 0.0, 0.0]}, {"point": [0.5, 0.0, 1.0]}, {"point": [-0.5, 0.0, 1.0]}]},
    ]
    return [ExperimentSpec.from_dict({**common, **c}) for c in cases]
