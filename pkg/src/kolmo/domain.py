"""Open sets given by membership oracles, and space-time cylinders.

A :class:`Domain` wraps a vectorised predicate ``inside(points) -> bool array``
together with a bounding box that contains every inside point (possibly
infinite for halfspaces and complements).  Primitives and combinators keep
the JSON description they were built from so that domains round-trip through
configuration files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, StructureError

BOUNDARY_CLASSES = ("lateral", "bottom", "top", "interior", "exterior")


@dataclass(frozen=True, eq=False)
class Domain:
    oracle: Callable[[np.ndarray], np.ndarray]
    lo: np.ndarray
    hi: np.ndarray
    tag: str
    spec: dict

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def __call__(self, x) -> np.ndarray | bool:
        return contains(self, x)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def default_eps(self) -> float:
        d = self.diameter
        return 1e-6 * d if math.isfinite(d) and d > 0 else 1e-6

    def __repr__(self):
        return f"Domain({self.tag})"


def contains(d: Domain, x) -> np.ndarray | bool:
    """Membership of a point (-> bool) or of a stack of points (-> bool array)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(-1, d.dim)
    out = np.asarray(d.oracle(pts), dtype=bool).reshape(pts.shape[0])
    return bool(out[0]) if single else out.reshape(x.shape[:-1])


def _vec(v, dim=None, name="vector"):
    a = np.asarray(v, dtype=float).reshape(-1)
    if dim is not None and a.shape[0] != dim:
        raise StructureError(f"{name} has length {a.shape[0]}, expected {dim}")
    return a


def _check_box(lo, hi):
    if np.any(~(lo <= hi)) or np.any(lo == hi):
        raise StructureError(f"empty bounding box lo={lo}, hi={hi}")


# --------------------------------------------------------------------------
# primitives


def ball(center, radius: float) -> Domain:
    c = _vec(center)
    r = float(radius)
    if not r > 0:
        raise StructureError(f"ball radius must be positive, got {radius}")
    r2 = r * r

    def oracle(x):
        return np.einsum("ij,ij->i", x - c, x - c) < r2

    return Domain(oracle, c - r, c + r, f"ball(r={r:g})",
                  {"op": "ball", "center": c.tolist(), "radius": r})


def box(lo, hi) -> Domain:
    lo, hi = _vec(lo), _vec(hi)
    if lo.shape != hi.shape:
        raise StructureError("box corners differ in dimension")
    _check_box(lo, hi)

    def oracle(x):
        return np.all((x > lo) & (x < hi), axis=1)

    return Domain(oracle, lo, hi, "box", {"op": "box", "lo": lo.tolist(), "hi": hi.tolist()})


def halfspace(normal, offset: float) -> Domain:
    """``{x : <normal, x> < offset}``."""
    n = _vec(normal)
    if not np.any(n != 0):
        raise StructureError("halfspace normal must be non-zero")
    c = float(offset)
    inf = np.full(n.shape, np.inf)

    def oracle(x):
        return x @ n < c

    return Domain(oracle, -inf, inf.copy(), "halfspace",
                  {"op": "halfspace", "normal": n.tolist(), "offset": c})


def whole(dim: int) -> Domain:
    inf = np.full(int(dim), np.inf)
    return Domain(lambda x: np.ones(x.shape[0], dtype=bool), -inf, inf.copy(), "whole",
                  {"op": "whole", "dim": int(dim)})


def empty(dim: int) -> Domain:
    z = np.zeros(int(dim))
    return Domain(lambda x: np.zeros(x.shape[0], dtype=bool), z, z.copy(), "empty",
                  {"op": "empty", "dim": int(dim)})


def homogeneous_norm(x: np.ndarray, p) -> np.ndarray:
    """``sum_i |x^(i)|^(1/(2i+1))``, homogeneous of degree one under ``D_lam``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    start = 0
    for i, pi in enumerate(p):
        blk = x[..., start:start + pi]
        out = out + np.linalg.norm(blk, axis=-1) ** (1.0 / (2 * i + 1))
        start += pi
    return out


def anisotropic_cone(vertex, axis, aperture: float, height: float, p=None) -> Domain:
    """Dilation-invariant cone with apex ``vertex``.

    Points ``vertex + v`` with ``0 < rho(v) < height`` and
    ``|D_{1/rho(v)} v - a| < aperture``, where ``rho`` is
    :func:`homogeneous_norm` for block signature ``p`` and ``a`` is ``axis``
    normalised to ``rho(a) = 1``.  With ``p = (N,)`` this is the usual
    circular cone around ``axis``.
    """
    v0 = _vec(vertex)
    N = v0.shape[0]
    p = tuple(p) if p is not None else (N,)
    if sum(p) != N:
        raise StructureError(f"block signature {p} does not match dimension {N}")
    w = np.repeat(2 * np.arange(len(p)) + 1, p).astype(float)
    a = _vec(axis, N, "axis")
    ra = float(homogeneous_norm(a, p))
    if not ra > 0:
        raise StructureError("cone axis must be non-zero")
    a = a * (1.0 / ra) ** w
    ap, h = float(aperture), float(height)
    if not (ap > 0 and h > 0):
        raise StructureError("cone aperture and height must be positive")

    def oracle(x):
        v = x - v0
        rho = homogeneous_norm(v, p)
        ok = (rho > 0) & (rho < h)
        safe = np.where(ok, rho, 1.0)
        u = v * (1.0 / safe[:, None]) ** w
        return ok & (np.linalg.norm(u - a, axis=1) < ap)

    # |u| <= |a| + ap on the unit homogeneous sphere, scaled by up to h^w
    ext = (np.abs(a) + ap) * np.maximum(h, 1.0) ** w
    return Domain(oracle, v0 - ext, v0 + ext, "cone",
                  {"op": "cone", "vertex": v0.tolist(), "axis": _vec(axis).tolist(),
                   "aperture": ap, "height": h, "p": list(p)})


# --------------------------------------------------------------------------
# combinators


def complement(d: Domain) -> Domain:
    inf = np.full(d.dim, np.inf)
    return Domain(lambda x: ~d.oracle(x), -inf, inf.copy(), f"complement({d.tag})",
                  {"op": "complement", "children": [d.spec]})


def union(*ds: Domain) -> Domain:
    if not ds:
        raise StructureError("union of nothing")
    _same_dim(ds)

    def oracle(x):
        out = np.zeros(x.shape[0], dtype=bool)
        for d in ds:
            out |= d.oracle(x)
        return out

    lo = np.min([d.lo for d in ds], axis=0)
    hi = np.max([d.hi for d in ds], axis=0)
    return Domain(oracle, lo, hi, "union(" + ",".join(d.tag for d in ds) + ")",
                  {"op": "union", "children": [d.spec for d in ds]})


def intersect(*ds: Domain) -> Domain:
    if not ds:
        raise StructureError("intersection of nothing")
    _same_dim(ds)

    def oracle(x):
        out = np.ones(x.shape[0], dtype=bool)
        for d in ds:
            out &= d.oracle(x)
        return out

    lo = np.max([d.lo for d in ds], axis=0)
    hi = np.min([d.hi for d in ds], axis=0)
    hi = np.maximum(hi, lo)
    return Domain(oracle, lo, hi, "intersect(" + ",".join(d.tag for d in ds) + ")",
                  {"op": "intersect", "children": [d.spec for d in ds]})


def puncture(d: Domain, x0, rho: float = 0.0) -> Domain:
    """Remove the closed ball of radius ``rho`` around ``x0`` (just ``x0`` if ``rho == 0``)."""
    c = _vec(x0, d.dim, "puncture point")
    rho = float(rho)
    if rho < 0:
        raise StructureError("puncture radius must be non-negative")

    def oracle(x):
        if rho == 0.0:
            hole = np.all(x == c, axis=1)
        else:
            hole = np.einsum("ij,ij->i", x - c, x - c) <= rho * rho
        return d.oracle(x) & ~hole

    return Domain(oracle, d.lo, d.hi, f"puncture({d.tag})",
                  {"op": "puncture", "point": c.tolist(), "radius": rho, "children": [d.spec]})


def _same_dim(ds):
    dims = {d.dim for d in ds}
    if len(dims) != 1:
        raise StructureError(f"dimension mismatch among domains: {sorted(dims)}")


def from_spec(spec: dict) -> Domain:
    """Build a domain from its JSON description (see README for the DSL)."""
    try:
        op = spec["op"]
        kids = [from_spec(c) for c in spec.get("children", [])]
        if op == "ball":
            return ball(spec["center"], spec["radius"])
        if op == "box":
            return box(spec["lo"], spec["hi"])
        if op == "halfspace":
            return halfspace(spec["normal"], spec["offset"])
        if op == "cone":
            return anisotropic_cone(spec["vertex"], spec["axis"], spec["aperture"],
                                    spec["height"], spec.get("p"))
        if op == "whole":
            return whole(spec["dim"])
        if op == "empty":
            return empty(spec["dim"])
        if op == "complement":
            (child,) = kids
            return complement(child)
        if op == "union":
            return union(*kids)
        if op == "intersect":
            return intersect(*kids)
        if op == "puncture":
            (child,) = kids
            return puncture(child, spec["point"], spec.get("radius", 0.0))
    except KeyError as exc:
        raise ConfigError(f"domain spec {spec!r} missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, StructureError):
            raise
        raise ConfigError(f"malformed domain spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown domain op {spec.get('op')!r}")


# --------------------------------------------------------------------------
# boundary location


def bisect_crossing(d: Domain, a, b, tol: float = 1e-10, max_iter: int = 200):
    """Locate a boundary crossing on segments ``a -> b`` (``a`` inside, ``b`` outside).

    Returns ``(theta, point)`` where ``point = a + theta (b - a)`` lies outside
    (or on the boundary of) ``d`` and is within ``tol`` of the last inside
    point of the final bracket.  Works on stacks of segments.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    single = a.ndim == 1
    a2, b2 = a.reshape(-1, d.dim), b.reshape(-1, d.dim)
    lo = np.zeros(a2.shape[0])
    hi = np.ones(a2.shape[0])
    length = np.linalg.norm(b2 - a2, axis=1)
    for _ in range(max_iter):
        active = (hi - lo) * length > tol
        if not np.any(active):
            break
        mid = 0.5 * (lo + hi)
        pts = a2 + mid[:, None] * (b2 - a2)
        ins = contains(d, pts)
        lo = np.where(active & ins, mid, lo)
        hi = np.where(active & ~ins, mid, hi)
    pts = a2 + hi[:, None] * (b2 - a2)
    if single:
        return float(hi[0]), pts[0]
    return hi, pts


def near_boundary(d: Domain, x, eps: float) -> np.ndarray | bool:
    """Oracle disagreement between ``x`` and ``x +- eps e_i`` for some axis ``i``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(-1, d.dim)
    base = contains(d, pts)
    out = np.zeros(pts.shape[0], dtype=bool)
    for i in range(d.dim):
        for s in (1.0, -1.0):
            q = pts.copy()
            q[:, i] += s * eps
            out |= contains(d, q) != base
    return bool(out[0]) if single else out


@dataclass(frozen=True)
class Cylinder:
    base: Domain
    t0: float
    t1: float

    def __post_init__(self):
        if not float(self.t0) < float(self.t1):
            raise StructureError(f"cylinder needs t0 < t1, got {self.t0}, {self.t1}")

    @property
    def T(self) -> float:
        return self.t1 - self.t0


@dataclass(frozen=True)
class BoundaryQuery:
    point: object
    classification: str

    @property
    def parabolic(self) -> bool:
        return self.classification in ("lateral", "bottom")


def classify_boundary(c: Cylinder, z, eps: float | None = None) -> BoundaryQuery:
    """Classify ``z = (x, t)`` against ``c``.

    The classes are exhaustive and mutually exclusive; the parabolic
    boundary is ``lateral`` (including the top rim) together with ``bottom``.
    """
    eps = c.base.default_eps() if eps is None else float(eps)
    if not eps > 0:
        raise ValueError("eps must be positive")
    x, t = np.asarray(z[0], dtype=float), float(z[1])
    if t < c.t0 - eps or t > c.t1 + eps:
        cls = "exterior"
    else:
        inside = contains(c.base, x)
        lateral = near_boundary(c.base, x, eps)
        if lateral and t > c.t0 + eps:
            cls = "lateral"
        elif abs(t - c.t0) <= eps and (inside or lateral):
            cls = "bottom"
        elif not inside:
            cls = "exterior"
        elif abs(t - c.t1) <= eps:
            cls = "top"
        else:
            cls = "interior"
    return BoundaryQuery(z, cls)
