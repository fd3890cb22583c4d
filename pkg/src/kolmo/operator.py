"""Constant-coefficient Ornstein-Uhlenbeck operators and their homogeneous group.

An operator ``div(A grad) + <Bx, grad>`` on R^N is described by a block
signature ``p = (p0, ..., pr)``, a ``p0 x p0`` diffusion block ``A0`` and the
blocks ``B_1, ..., B_r`` of the drift.  ``B_j`` is supplied with shape
``p_{j-1} x p_j`` (rank ``p_j``); its transpose occupies the ``j``-th block
subdiagonal of the N x N drift matrix, so that for the Kolmogorov operator
``d^2/dx1^2 + x1 d/dx2`` one passes ``B = [[[1.0]]]`` and gets ``Bx = (0, x1)``.

Every matrix function of ``B`` is evaluated with the terminating power series
(``B`` is nilpotent of order ``r + 1``); nothing here calls ``expm``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, StructureError

#: Log-spaced times at which positivity of C(t) is checked.
VALIDATION_TIMES = np.logspace(-6, 3, 25)


class HomogeneousDimensions(NamedTuple):
    Q: int
    q: int


@dataclass(frozen=True)
class GroupPoint:
    """A space-time point ``(x, t)`` of the group."""

    x: np.ndarray
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        object.__setattr__(self, "t", float(self.t))

    def __iter__(self):
        yield self.x
        yield self.t

    def allclose(self, other: "GroupPoint", atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.x, other.x, rtol=0, atol=atol)) and abs(self.t - other.t) <= atol


@dataclass(frozen=True, eq=False)
class OUOperator:
    """Block Ornstein-Uhlenbeck operator ``div(A grad) + <Bx, grad>``.

    Parameters
    ----------
    p : sequence of int
        Block sizes ``(p0, ..., pr)``.
    A0 : array_like, shape (p0, p0)
        Diffusion block.
    B_blocks : sequence of array_like
        ``B_j`` with shape ``(p_{j-1}, p_j)`` for ``j = 1..r``.

    Shape mismatches raise :class:`StructureError` immediately; the analytic
    requirements (ordering of ``p``, positivity, rank, hypoellipticity) are
    checked by :func:`validate`.
    """

    p: tuple
    A0: np.ndarray
    B_blocks: tuple = ()
    A: np.ndarray = field(init=False, repr=False)
    B: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = tuple(int(v) for v in self.p)
        if not p:
            raise StructureError("block signature must be non-empty")
        if any(v < 1 for v in p):
            raise StructureError(f"block sizes must be positive, got {p}")
        A0 = np.array(self.A0, dtype=float, ndmin=2)
        if A0.shape != (p[0], p[0]):
            raise StructureError(f"A0 has shape {A0.shape}, expected {(p[0], p[0])}")
        blocks = tuple(np.array(b, dtype=float, ndmin=2) for b in self.B_blocks)
        if len(blocks) != len(p) - 1:
            raise StructureError(f"expected {len(p) - 1} drift blocks, got {len(blocks)}")
        for j, Bj in enumerate(blocks, start=1):
            if Bj.shape != (p[j - 1], p[j]):
                raise StructureError(f"B_{j} has shape {Bj.shape}, expected {(p[j - 1], p[j])}")

        N = sum(p)
        offsets = np.concatenate([[0], np.cumsum(p)])
        A = np.zeros((N, N))
        A[: p[0], : p[0]] = A0
        B = np.zeros((N, N))
        for j, Bj in enumerate(blocks, start=1):
            B[offsets[j]: offsets[j + 1], offsets[j - 1]: offsets[j]] = Bj.T
        A0.setflags(write=False)
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "B_blocks", blocks)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def N(self) -> int:
        return sum(self.p)

    @property
    def r(self) -> int:
        return len(self.p) - 1

    @property
    def weights(self) -> np.ndarray:
        """Dilation exponent ``2i + 1`` of every coordinate (block ``i``)."""
        return np.repeat(2 * np.arange(len(self.p)) + 1, self.p).astype(float)

    @property
    def Q(self) -> int:
        return homogeneous_dimension(self).Q

    def drift(self, x: np.ndarray) -> np.ndarray:
        """``Bx`` for a point or a stack of points (last axis = coordinates)."""
        return np.asarray(x, dtype=float) @ self.B.T

    def to_dict(self) -> dict:
        return {
            "p": list(self.p),
            "A0": self.A0.tolist(),
            "B": [b.tolist() for b in self.B_blocks],
        }

    @classmethod
    def from_dict(cls, cfg: dict) -> "OUOperator":
        try:
            return cls(p=cfg["p"], A0=cfg["A0"], B_blocks=cfg.get("B", []))
        except KeyError as exc:
            raise ConfigError(f"operator config missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, StructureError):
                raise
            raise ConfigError(f"malformed operator config: {exc}") from None


def kolmogorov() -> OUOperator:
    """``d^2/dx1^2 + x1 d/dx2`` on R^2."""
    return OUOperator(p=(1, 1), A0=[[1.0]], B_blocks=([[1.0]],))


def heat(N: int) -> OUOperator:
    """Laplacian on R^N (``B = 0``, ``A0 = I``)."""
    return OUOperator(p=(N,), A0=np.eye(N))


def load_operator(path) -> OUOperator:
    """Read an operator JSON file and validate it."""
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read operator config {path}: {exc}") from None
    if "operator" in cfg:
        cfg = cfg["operator"]
    op = OUOperator.from_dict(cfg)
    report = validate(op)
    if not report.ok:
        raise ConfigError(f"invalid operator in {path}: {report.failures()}")
    return op


# --------------------------------------------------------------------------
# matrix functions of B


def _powers(M: np.ndarray, r: int) -> list:
    out = [np.eye(M.shape[0])]
    for _ in range(r):
        out.append(out[-1] @ M)
    return out


def exp_minus_sB(op: OUOperator, s: float) -> np.ndarray:
    """``E(s) = exp(-sB)`` as the finite sum ``sum_{m<=r} (-sB)^m / m!``."""
    N = op.N
    E = np.eye(N)
    term = np.eye(N)
    for m in range(1, op.r + 1):
        term = term @ (-s * op.B) / m
        E = E + term
    return E


def _gramian(op: OUOperator, t: float, sign: float) -> np.ndarray:
    # int_0^t exp(sign*u*B) A exp(sign*u*B)^T du, termwise:
    # sum_{m,n} sign^{m+n} t^{m+n+1} / (m! n! (m+n+1)) B^m A (B^n)^T
    P = _powers(op.B, op.r)
    N = op.N
    G = np.zeros((N, N))
    for m in range(op.r + 1):
        left = P[m] @ op.A
        for n in range(op.r + 1):
            k = m + n
            coef = sign**k * t ** (k + 1) / (math.factorial(m) * math.factorial(n) * (k + 1))
            G += coef * (left @ P[n].T)
    return 0.5 * (G + G.T)


def covariance_C(op: OUOperator, t: float) -> np.ndarray:
    """``C(t) = int_0^t E(s) A E(s)^T ds`` by exact polynomial integration."""
    if not t > 0:
        raise ValueError(f"C(t) requires t > 0, got {t}")
    return _gramian(op, float(t), -1.0)


def drift_gramian(op: OUOperator, t: float, sign: float = 1.0) -> np.ndarray:
    """``int_0^t exp(sign u B) A exp(sign u B^T) du`` (transition covariance / 2)."""
    if not t > 0:
        raise ValueError(f"gramian requires t > 0, got {t}")
    return _gramian(op, float(t), float(sign))


# --------------------------------------------------------------------------
# dilations and group law


def dilation_matrix(op: OUOperator, lam: float) -> np.ndarray:
    return np.diag(float(lam) ** op.weights)


def dilate_space(op: OUOperator, lam: float, x) -> np.ndarray:
    """``D_lam(x)``: block ``i`` scaled by ``lam**(2i+1)``.  Works on stacks of points."""
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    return np.asarray(x, dtype=float) * float(lam) ** op.weights


def dilate(op: OUOperator, lam: float, z: GroupPoint) -> GroupPoint:
    return GroupPoint(dilate_space(op, lam, z.x), lam**2 * z.t)


def compose(op: OUOperator, z: GroupPoint, zp: GroupPoint) -> GroupPoint:
    """``(x, t) o (x', t') = (x' + E(t') x, t + t')``."""
    return GroupPoint(zp.x + exp_minus_sB(op, zp.t) @ z.x, z.t + zp.t)


def invert(op: OUOperator, z: GroupPoint) -> GroupPoint:
    return GroupPoint(-exp_minus_sB(op, -z.t) @ z.x, -z.t)


def homogeneous_dimension(op: OUOperator) -> HomogeneousDimensions:
    Q = sum((2 * i + 1) * pi for i, pi in enumerate(op.p))
    return HomogeneousDimensions(Q, Q + 2)


# --------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    checks: dict
    messages: dict

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list:
        return [f"{k}: {self.messages.get(k, 'failed')}" for k, v in self.checks.items() if not v]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "checks": dict(self.checks), "messages": dict(self.messages)}


def _min_eig_ratio(M: np.ndarray) -> float:
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    tr = float(np.trace(M))
    return float(w[0] / tr) if tr > 0 else -math.inf


def validate(op: OUOperator, times: Sequence[float] = VALIDATION_TIMES) -> ValidationReport:
    """Check the structural and hypoellipticity requirements of ``op``.

    C(t) is tested on ``times`` after normalising by ``D_{1/sqrt t}``; the
    normalised matrix must equal C(1) (dilation covariance), which extends
    the check from the grid to every ``t > 0``.
    """
    checks, msgs = {}, {}
    p = op.p
    checks["ordering"] = all(a >= b for a, b in zip(p, p[1:]))
    if not checks["ordering"]:
        msgs["ordering"] = f"block sizes must be non-increasing, got {p}"

    A0 = op.A0
    checks["A0_symmetric"] = bool(np.allclose(A0, A0.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(A0).max())))
    ratio = _min_eig_ratio(A0)
    checks["A0_positive_definite"] = ratio > 1e-10
    if not checks["A0_positive_definite"]:
        msgs["A0_positive_definite"] = f"min eigenvalue / trace = {ratio:.3e}"

    ranks = [int(np.linalg.matrix_rank(Bj)) for Bj in op.B_blocks]
    checks["B_full_column_rank"] = all(rk == Bj.shape[1] for rk, Bj in zip(ranks, op.B_blocks))
    if not checks["B_full_column_rank"]:
        msgs["B_full_column_rank"] = f"ranks {ranks} vs column counts {[b.shape[1] for b in op.B_blocks]}"

    Bpow = np.linalg.matrix_power(op.B, op.r + 1)
    checks["nilpotent"] = bool(np.all(Bpow == 0.0))

    C1 = covariance_C(op, 1.0)
    worst, worst_t, scale_err = math.inf, None, 0.0
    for t in times:
        Ct = covariance_C(op, float(t))
        Dinv = dilation_matrix(op, 1.0 / math.sqrt(t))
        S = Dinv @ Ct @ Dinv
        denom = max(float(np.abs(C1).max()), 1e-300)
        scale_err = max(scale_err, float(np.abs(S - C1).max() / denom))
        rt = _min_eig_ratio(S)
        if rt < worst:
            worst, worst_t = rt, float(t)
    checks["C_positive_definite"] = worst > 1e-10
    if not checks["C_positive_definite"]:
        msgs["C_positive_definite"] = f"normalised min eigenvalue / trace = {worst:.3e} at t={worst_t:g}"
    checks["C_dilation_covariance"] = scale_err < 1e-10
    msgs.setdefault("C_dilation_covariance", f"max relative deviation {scale_err:.2e}")
    return ValidationReport(checks, msgs)
