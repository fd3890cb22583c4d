"""Boundary data described in JSON.

Every spec builds a function ``f(points, times)`` returning one value per
row of ``points``; stationary callers pass ``times=None``.

``{"type": "constant", "value": c}``
``{"type": "linear", "coef": [...], "offset": c, "t_coef": ct}``
``{"type": "quadratic", "quad": [...], "coef": [...], "offset": c, "t_coef": ct}``  adds ``sum quad_i x_i^2``
``{"type": "log_radius", "center": [...]}``
``{"type": "distance", "point": [...], "scale": s, "t0": t0}``  ``min(1, (|x - p| + |t - t0|^1/2) / s)``
``{"type": "exp_decay", "rate": r, "t0": t0}``  ``exp(-r (t - t0))``
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ConfigError


def _t(points, times):
    if times is None:
        return np.zeros(points.shape[0])
    return np.broadcast_to(np.asarray(times, dtype=float), points.shape[:1])


def boundary_function(spec: dict, dim: int) -> Callable:
    try:
        kind = spec["type"]
        if kind == "constant":
            c = float(spec["value"])
            return lambda p, t=None: np.full(np.shape(p)[0], c)
        if kind in ("linear", "quadratic"):
            coef = np.asarray(spec.get("coef", [0.0] * dim), dtype=float)
            quad = np.asarray(spec.get("quad", [0.0] * dim) if kind == "quadratic" else [0.0] * dim, dtype=float)
            if coef.shape != (dim,) or quad.shape != (dim,):
                raise ConfigError(f"{kind} data needs {dim} coefficients per term")
            off, tc = float(spec.get("offset", 0.0)), float(spec.get("t_coef", 0.0))
            return lambda p, t=None: (p * p) @ quad + p @ coef + off + tc * _t(p, t)
        if kind == "log_radius":
            c = np.asarray(spec.get("center", [0.0] * dim), dtype=float)
            return lambda p, t=None: np.log(np.linalg.norm(p - c, axis=1))
        if kind == "distance":
            q = np.asarray(spec["point"], dtype=float)
            s = float(spec.get("scale", 1.0))
            t0 = spec.get("t0")
            if not s > 0:
                raise ConfigError("distance scale must be positive")

            def f(p, t=None):
                r = np.linalg.norm(p - q, axis=1)
                if t0 is not None and t is not None:
                    r = r + np.sqrt(np.abs(_t(p, t) - float(t0)))
                return np.minimum(1.0, r / s)
            return f
        if kind == "exp_decay":
            rate, t0 = float(spec.get("rate", 1.0)), float(spec.get("t0", 0.0))
            return lambda p, t=None: np.exp(-rate * (_t(p, t) - t0))
    except KeyError as exc:
        raise ConfigError(f"boundary data {spec!r} missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed boundary data {spec!r}: {exc}") from None
    raise ConfigError(f"unknown boundary data type {spec.get('type')!r}")
