"""Wiener-type series criterion for boundary regularity of OU operators.

For a boundary point ``x0`` of ``Omega`` and ``0 < mu < 1`` the k-th term is
built from

    d_k = |{(y, tau) : tau > 0, y in x0 - E(tau)(Omega^c),
                       |D_{1/sqrt tau} y|_C^2 < 2Q log(R_k / tau)}|,
    R_k = (C_Q mu^alpha(k))^(2/Q),   alpha(k) = k log k,

and the series ``sum_k d_k / nu^alpha(k)`` with ``nu = mu^((Q+2)/Q)``; its
divergence is sufficient for regularity.  The measure is estimated by Monte
Carlo after the substitution ``y = D_sqrt(R_k) xi``, ``tau = R_k s``, which
maps every level set onto the same reference region

    {(xi, s) : 0 < s < 1, |D_{1/sqrt s} xi|_C^2 < 2Q log(1/s)}

whose volume has a closed form.  Samples are drawn exactly from the uniform
law on that region (``-log s`` is Gamma distributed), so the estimator is
``volume * R_k^((Q+2)/2) * hit fraction``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .domain import Domain, contains
from .fundamental import GammaContext
from .parallel import batch_rng, batch_sizes, run_batches

VERDICTS = ("diverges-likely", "converges-likely", "inconclusive")
BATCH = 16384


@dataclass(frozen=True)
class CriterionParams:
    mu: float = 0.5
    kmax: int = 20
    samples_per_k: int = 100_000
    seed: int = 0
    slope_tol: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise ValueError(f"mu must lie in (0, 1), got {self.mu}")
        if self.kmax < 1:
            raise ValueError("kmax must be positive")
        if self.samples_per_k < 1:
            raise ValueError("samples_per_k must be positive")


def alpha(k) -> float:
    """``k log k``."""
    k = float(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    return k * math.log(k)


def Rk(ctx: GammaContext, params: CriterionParams, k: int) -> float:
    return (ctx.CQ * params.mu ** alpha(k)) ** (2.0 / ctx.Q)


def nu(ctx: GammaContext, mu: float) -> float:
    return mu ** ((ctx.Q + 2) / ctx.Q)


def superlevel_radius_sq(Q: int, Rk: float, tau: float) -> float:
    """``2Q log(R_k / tau)``; negative when the time slice is empty."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return 2.0 * Q * math.log(Rk / tau)


def reference_volume(ctx: GammaContext) -> float:
    """Lebesgue measure of the reference region (``d_k`` of the empty set at ``R_k = 1``).

    ``omega_N sqrt(det C(1)) (2Q)^(N/2) Gamma(N/2 + 1) / ((Q + 2)/2)^(N/2 + 1)``.
    """
    N, Q = ctx.N, ctx.Q
    omega = math.pi ** (N / 2) / math.gamma(N / 2 + 1)
    return omega * math.sqrt(ctx.detC1) * (2 * Q) ** (N / 2) * math.gamma(N / 2 + 1) / ((Q + 2) / 2) ** (N / 2 + 1)


def full_space_dk(ctx: GammaContext, params: CriterionParams, k: int) -> float:
    """``d_k`` when the whole space is exterior: an upper bound for every domain."""
    return reference_volume(ctx) * Rk(ctx, params, k) ** ((ctx.Q + 2) / 2)


def bound_constant(ctx: GammaContext) -> float:
    """``C*`` with ``d_k <= C* nu^alpha(k)`` for every domain and every ``k``."""
    return reference_volume(ctx) * ctx.CQ ** ((ctx.Q + 2) / ctx.Q)


def sample_reference_region(ctx: GammaContext, n: int, rng: np.random.Generator):
    """Uniform draws ``(xi, s)`` from the reference region."""
    N, Q = ctx.N, ctx.Q
    w = rng.gamma(shape=N / 2 + 1, scale=1.0 / (Q / 2 + 1), size=n)
    s = np.exp(-w)
    g = rng.standard_normal((n, N))
    u = g / np.linalg.norm(g, axis=1, keepdims=True) * rng.random(n)[:, None] ** (1.0 / N)
    L = np.linalg.cholesky(np.linalg.inv(ctx.Cinv1))
    eta = (u @ L.T) * np.sqrt(2.0 * Q * w)[:, None]
    xi = eta * s[:, None] ** (0.5 * ctx.op.weights)
    return xi, s


def exterior_preimage(ctx: GammaContext, x0, y, tau):
    """``E(-tau)(x0 - y)`` row-wise, using the terminating series in ``tau B``."""
    op = ctx.op
    v = np.asarray(x0, dtype=float) - y
    out = v.copy()
    term = v
    for m in range(1, op.r + 1):
        term = (term @ op.B.T) * (tau[:, None] / m)
        out = out + term
    return out


def _count_hits(ctx, d, x0, R, n, rng):
    xi, s = sample_reference_region(ctx, n, rng)
    y = xi * R ** (0.5 * ctx.op.weights)
    x = exterior_preimage(ctx, x0, y, R * s)
    return int(np.count_nonzero(~contains(d, x)))


@dataclass(frozen=True)
class DkEstimate:
    k: int
    value: float
    stderr: float
    ci: tuple
    hits: int
    samples: int
    fraction: float


def dk_estimate(ctx: GammaContext, d: Domain, x0, params: CriterionParams, k: int,
                workers: int | None = None) -> DkEstimate:
    """Monte Carlo estimate of ``d_k`` with a 95% Wilson interval."""
    n = int(params.samples_per_k)
    if n < 1:
        raise ValueError("zero samples")
    x0 = np.asarray(x0, dtype=float)
    R = Rk(ctx, params, k)
    sizes = batch_sizes(n, BATCH)
    tasks = [(b, m) for b, m in enumerate(sizes)]
    hits = sum(run_batches(lambda t: _count_hits(ctx, d, x0, R, t[1], batch_rng(params.seed, k, t[0])),
                           tasks, workers))
    V = full_space_dk(ctx, params, k)
    f = hits / n
    z = 1.959963984540054
    denom = 1 + z * z / n
    centre = (f + z * z / (2 * n)) / denom
    half = z * math.sqrt(f * (1 - f) / n + z * z / (4 * n * n)) / denom
    lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    if hits == 0:
        lo = 0.0
    if hits == n:
        hi = 1.0
    return DkEstimate(k, V * f, V * math.sqrt(f * (1 - f) / n), (V * lo, V * hi), hits, n, f)


@dataclass
class CriterionReport:
    rows: list
    partial_sums: list
    verdict: str
    nu: float
    Q: int
    C_star: float
    params: dict
    x0: list
    domain: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["k", "alpha", "R_k", "d_k", "d_k_stderr", "ci_lo", "ci_hi", "term", "term_stderr", "partial_sum"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row, S in zip(self.rows, self.partial_sums):
            w.writerow({**{c: row[c] for c in cols if c in row}, "partial_sum": S})
        return buf.getvalue()


def series_verdict(terms, term_se, slope_tol: float = 0.05) -> str:
    """Heuristic divergence call from the tail (last half) of the computed terms.

    diverges-likely: terms bounded below / growing -- log-slope >= -slope_tol
    and tail mean above ten standard errors.  converges-likely: tail terms
    all zero or shrinking by more than half at every step.
    """
    terms = np.asarray(terms, dtype=float)
    term_se = np.asarray(term_se, dtype=float)
    n = len(terms)
    tail = slice(n // 2, n)
    t, se = terms[tail], term_se[tail]
    if len(t) == 0:
        return "inconclusive"
    if np.all(t == 0):
        return "converges-likely"
    if len(t) >= 2:
        a, b = t[:-1], t[1:]
        shrink = np.where(a > 0, b < 0.5 * a, b == 0)
        if np.all(shrink):
            return "converges-likely"
        if np.all(t > 0):
            ks = np.arange(len(t), dtype=float)
            slope = np.polyfit(ks, np.log(t), 1)[0]
            mean_se = math.sqrt(float(np.sum(se**2))) / len(t)
            if slope >= -slope_tol and t.mean() > 10 * mean_se:
                return "diverges-likely"
    return "inconclusive"


def evaluate_criterion(ctx: GammaContext, d: Domain, x0, params: CriterionParams,
                       workers: int | None = None) -> CriterionReport:
    C_star = bound_constant(ctx)
    nv = nu(ctx, params.mu)
    rows, sums, S = [], [], 0.0
    for k in range(1, params.kmax + 1):
        est = dk_estimate(ctx, d, x0, params, k, workers)
        # d_k / nu^alpha(k) == C* * fraction exactly; avoids tiny/tiny
        term = C_star * est.fraction
        term_se = C_star * math.sqrt(est.fraction * (1 - est.fraction) / est.samples)
        S += term
        rows.append({
            "k": k, "alpha": alpha(k), "R_k": Rk(ctx, params, k),
            "d_k": est.value, "d_k_stderr": est.stderr, "ci_lo": est.ci[0], "ci_hi": est.ci[1],
            "hits": est.hits, "samples": est.samples, "term": term, "term_stderr": term_se,
        })
        sums.append(S)
    verdict = series_verdict([r["term"] for r in rows], [r["term_stderr"] for r in rows], params.slope_tol)
    return CriterionReport(rows, sums, verdict, nv, ctx.Q, C_star, asdict(params),
                           np.asarray(x0, dtype=float).tolist(), getattr(d, "spec", {}))


def dk_upper_bound_check(ctx: GammaContext, d: Domain, x0, params: CriterionParams,
                         report: CriterionReport | None = None, workers: int | None = None) -> dict:
    """Check ``d_k <= C* nu^alpha(k)`` and the vanishing of ``d_{k+1} / nu^alpha(k)``."""
    if report is None:
        report = evaluate_criterion(ctx, d, x0, params, workers)
    C_star, nv = report.C_star, report.nu
    bound_ok, bound_rows = True, []
    for row in report.rows:
        bound = C_star * nv ** row["alpha"]
        ok = row["d_k"] <= bound * (1 + 1e-12)
        bound_ok &= ok
        bound_rows.append({"k": row["k"], "d_k": row["d_k"], "bound": bound, "ok": ok})
    tail = []
    for a, b in zip(report.rows, report.rows[1:]):
        tail.append(b["d_k"] / nv ** a["alpha"])
    start = 4  # tail ratios from k = 5 on
    seq = tail[start:]
    decreasing = all(y <= x for x, y in zip(seq, seq[1:]))
    return {
        "bound_holds": bool(bound_ok),
        "bound_rows": bound_rows,
        "tail_ratios": tail,
        "tail_decreasing": bool(decreasing),
        "C_star": C_star,
        "nu": nv,
    }


def rejection_dk(ctx: GammaContext, d: Domain, x0, params: CriterionParams, k: int,
                 n: int, rng: np.random.Generator):
    """Reference estimate of ``d_k`` by uniform sampling of a box in (y, tau).

    No change of variables: the box is ``tau in (0, R_k)`` times the
    coordinate extent of the largest level-set slice.  Returns
    ``(estimate, stderr)``.
    """
    R = Rk(ctx, params, k)
    Q, w = ctx.Q, ctx.op.weights
    C1 = np.linalg.inv(ctx.Cinv1)
    # |y_i| <= sqrt(C1_ii * 2Q log(R/tau)) * tau^(w_i/2); maximise over tau in (0, R)
    taus = R * np.exp(-np.linspace(1e-6, 40, 4001))
    ext = np.max(np.sqrt(np.diag(C1))[None, :]
                 * np.sqrt(2 * Q * np.log(R / taus))[:, None] * taus[:, None] ** (0.5 * w), axis=0)
    ext *= 1.01
    y = (2 * rng.random((n, ctx.N)) - 1) * ext
    tau = R * rng.random(n)
    sc = y * tau[:, None] ** (-0.5 * w)
    q = np.einsum("ij,jk,ik->i", sc, ctx.Cinv1, sc)
    in_level = q < 2 * Q * np.log(R / tau)
    x = exterior_preimage(ctx, x0, y, tau)
    hit = in_level & ~contains(d, x)
    vol = R * float(np.prod(2 * ext))
    f = hit.mean()
    return vol * f, vol * math.sqrt(f * (1 - f) / n)
