"""Explicit strictly ``L0``-subsolution witnesses and the barrier transfers.

For a point ``x0`` and a bounded working set ``Y``

    h(x) = E(lam * u_1) + u_2^2 + ... + u_N^2,   u = x - x0,
    E(s) = exp(sqrt(1 + s^2)) - e,

is convex, vanishes only at ``x0`` and satisfies ``L0 h > 0`` on ``Y`` once
``lam`` is large.  Writing ``phi(s) = sqrt(1 + s^2)`` one has
``E'' = (phi'^2 + phi'') e^phi >= e^phi / (2 sqrt 2)`` and ``|E'| <= e^phi``, so
with ``alpha = inf a_11`` and ``beta = sup_Y sum_j |(Bx)_j|``

    L0 h >= lam (lam alpha / (2 sqrt 2) - 3 beta)

as soon as ``lam >= sup_Y |u|``.  The operator is assumed to have constant
``A``, so divergence and non-divergence forms agree on smooth ``h``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .domain import Cylinder, Domain, contains
from .operator import OUOperator
from .parallel import batch_rng

SQRT2 = math.sqrt(2.0)
E1 = math.e


def select_lambda(alpha_coef: float, beta_coef: float, radius: float = 0.0) -> float:
    """Twice the threshold ``6 sqrt(2) beta / alpha``, or 1 when ``beta = 0``.

    ``radius`` is ``sup_Y |x - x0|``; when the drift is non-zero the
    returned value is raised to at least ``radius`` so that the transverse
    drift terms are dominated as well.

    >>> round(select_lambda(1.0, 1.0), 3)
    16.971
    """
    if not alpha_coef > 0:
        raise ValueError(f"alpha_coef must be positive, got {alpha_coef}")
    if beta_coef < 0:
        raise ValueError(f"beta_coef must be non-negative, got {beta_coef}")
    if beta_coef == 0:
        return 1.0
    return max(2.0 * 6.0 * SQRT2 * beta_coef / alpha_coef, float(radius))


def _E(s):
    return np.exp(np.sqrt(1.0 + s * s)) - E1


def _E1(s):
    phi = np.sqrt(1.0 + s * s)
    return s / phi * np.exp(phi)


def _E2(s):
    phi = np.sqrt(1.0 + s * s)
    d1 = s / phi
    d2 = phi ** -3
    return (d1 * d1 + d2) * np.exp(phi)


@dataclass(frozen=True, eq=False)
class BarrierH:
    x0: np.ndarray
    lam: float
    alpha_coef: float
    beta_coef: float
    Y: Domain

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    def __call__(self, x):
        return eval_h(self, x)


def eval_h(b: BarrierH, x):
    """``h(x)``; a point gives a float, a stack of points an array."""
    u = np.asarray(x, dtype=float) - b.x0
    val = _E(b.lam * u[..., 0]) + np.sum(u[..., 1:] ** 2, axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def grad_h(b: BarrierH, x) -> np.ndarray:
    u = np.asarray(x, dtype=float) - b.x0
    g = 2.0 * u
    g[..., 0] = b.lam * _E1(b.lam * u[..., 0])
    return g


def hess_diag_h(b: BarrierH, x) -> np.ndarray:
    """Diagonal of the Hessian (the off-diagonal part is zero)."""
    u = np.asarray(x, dtype=float) - b.x0
    H = np.full(u.shape, 2.0)
    H[..., 0] = b.lam ** 2 * _E2(b.lam * u[..., 0])
    return H


def L0_h(b: BarrierH, op: OUOperator, x) -> np.ndarray:
    """``sum a_ij d_ij h + <Bx, grad h>`` in closed form."""
    x = np.asarray(x, dtype=float)
    val = hess_diag_h(b, x) @ np.diag(op.A) + np.sum(op.drift(x) * grad_h(b, x), axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def _bounded_box(Y: Domain):
    if not (np.all(np.isfinite(Y.lo)) and np.all(np.isfinite(Y.hi))):
        raise ValueError("the working set must be bounded")
    return Y.lo, Y.hi


def box_vertices(lo, hi) -> np.ndarray:
    return np.array(list(itertools.product(*zip(lo, hi))), dtype=float)


def drift_sup(op: OUOperator, Y: Domain) -> float:
    """``sup_Y sum_j |(Bx)_j|``, attained at a vertex of the bounding box (convex in x)."""
    V = box_vertices(*_bounded_box(Y))
    return float(np.max(np.sum(np.abs(op.drift(V)), axis=1)))


def build_barrier(op: OUOperator, x0, Y: Domain, lam: float | None = None) -> BarrierH:
    """``BarrierH`` at ``x0`` with coefficients read off ``op`` over ``Y``."""
    alpha = float(op.A[0, 0])
    beta = drift_sup(op, Y)
    x0 = np.asarray(x0, dtype=float)
    radius = float(np.max(np.linalg.norm(box_vertices(*_bounded_box(Y)) - x0, axis=1)))
    if lam is None:
        lam = select_lambda(alpha, beta, radius)
    return BarrierH(x0, float(lam), alpha, beta, Y)


@dataclass
class SuperharmonicityReport:
    ok: bool
    min_value: float
    argmin: list
    n_points: int
    n_nonpositive: int
    nonpositive_sample: list
    lam: float
    alpha: float
    beta: float
    grid: dict

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _grid_points(Y: Domain, per_axis: int, random_points: int, seed: int) -> np.ndarray:
    lo, hi = _bounded_box(Y)
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.shape[0])
    rnd = batch_rng(seed, 0).uniform(lo, hi, size=(random_points, lo.shape[0]))
    pts = np.concatenate([grid, rnd])
    return pts[contains(Y, pts)]


def verify_strict_superharmonicity(b: BarrierH, op: OUOperator, per_axis: int = 64,
                                   random_points: int = 10_000, seed: int = 0) -> SuperharmonicityReport:
    """Evaluate ``L0 h`` on a tensor grid and random points of ``Y``.

    Evidence rather than proof: the report lists the smallest value, where
    it occurs and a few of the non-positive samples if there are any.
    """
    pts = _grid_points(b.Y, per_axis, random_points, seed)
    if pts.shape[0] == 0:
        raise ValueError("no sample points fall inside the working set")
    vals = np.concatenate([L0_h(b, op, chunk) for chunk in np.array_split(pts, max(1, pts.shape[0] // 65536))])
    i = int(np.argmin(vals))
    bad = np.flatnonzero(vals <= 0)
    return SuperharmonicityReport(
        ok=bool(bad.size == 0),
        min_value=float(vals[i]),
        argmin=pts[i].tolist(),
        n_points=int(pts.shape[0]),
        n_nonpositive=int(bad.size),
        nonpositive_sample=pts[bad[:10]].tolist(),
        lam=b.lam,
        alpha=b.alpha_coef,
        beta=b.beta_coef,
        grid={"per_axis": per_axis, "random_points": random_points, "seed": seed,
              "lo": b.Y.lo.tolist(), "hi": b.Y.hi.tolist()},
    )


# --------------------------------------------------------------------------
# transfers to the cylinder


def lift_to_cylinder(b0: Callable, c: Cylinder) -> Callable:
    """Time-independent extension ``(x, t) -> b0(x)`` in the ``psi(points, times)`` convention."""
    def lifted(points, times):
        return np.asarray(b0(points), dtype=float) * np.ones(np.shape(times))
    return lifted


def sup_h(b: BarrierH, d: Domain) -> float:
    """Upper bound of ``h`` on the closure of ``d`` (max over its bounding-box vertices)."""
    return float(np.max(eval_h(b, box_vertices(*_bounded_box(d)))))


def monotone_hat_data(b: BarrierH, c: Cylinder, delta: float) -> Callable:
    """``h(x)`` for ``t - t0 > delta`` and ``M = sup h`` on ``t - t0 <= delta``.

    Non-increasing in ``t`` with its maximum on the bottom slice.
    """
    if not 0 < delta < c.T:
        raise ValueError(f"delta must lie in (0, {c.T}), got {delta}")
    M = sup_h(b, c.base)

    def hat(points, times):
        t = np.asarray(times, dtype=float)
        return np.where(t - c.t0 <= delta, M, eval_h(b, points))

    hat.M = M
    return hat
