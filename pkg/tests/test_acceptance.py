"""Acceptance checks, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line with its
measurements and wall time, then asserts.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import dblquad, quad_vec
from scipy.linalg import expm

from kolmo.barrier import build_barrier, verify_strict_superharmonicity
from kolmo.criterion import (
    CriterionParams,
    dk_estimate,
    dk_upper_bound_check,
    evaluate_criterion,
    full_space_dk,
    rejection_dk,
)
from kolmo.dirichlet import SolverConfig, exit_sample, monotone_solution_test, solve_evolution, solve_stationary
from kolmo.domain import Cylinder, ball, box, empty, puncture, whole
from kolmo.fundamental import GammaContext, _scaled_norm_sq, gamma, pde_residual, transition_sample
from kolmo.harness import (
    assert_equivalence,
    equivalence_summary,
    gold_suite,
    run_criterion_sufficiency_check,
    run_equivalence_suite,
    run_suite,
    three_dim_operator,
)
from kolmo.operator import (
    GroupPoint,
    OUOperator,
    compose,
    covariance_C,
    dilate,
    dilation_matrix,
    exp_minus_sB,
    heat,
    invert,
    kolmogorov,
)

OPS = [kolmogorov(), heat(2), heat(3), three_dim_operator(),
       OUOperator(p=(1, 1, 1), A0=[[1.0]], B_blocks=([[1.0]], [[1.0]]))]


@pytest.fixture
def report(capsys):
    def emit(n, ok, elapsed, limit, detail):
        ok = bool(ok) and elapsed < limit
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s < {limit:g}s) {detail}")
        return ok
    return emit


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def test_1_structure_exactness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    worst = 0.0
    for i in range(100):
        op = OPS[i % len(OPS)]
        N = op.N
        s, u = rng.uniform(-2, 2, 2)
        worst = max(worst, rel(exp_minus_sB(op, s) @ exp_minus_sB(op, u), exp_minus_sB(op, s + u)))
        a, b, c = (GroupPoint(rng.normal(size=N), rng.normal()) for _ in range(3))
        lhs, rhs = compose(op, compose(op, a, b), c), compose(op, a, compose(op, b, c))
        worst = max(worst, rel(np.r_[lhs.x, lhs.t], np.r_[rhs.x, rhs.t]))
        e = GroupPoint(np.zeros(N), 0.0)
        for z in (compose(op, a, e), compose(op, e, a)):
            worst = max(worst, rel(np.r_[z.x, z.t], np.r_[a.x, a.t]))
        for z in (compose(op, a, invert(op, a)), compose(op, invert(op, a), a)):
            worst = max(worst, float(np.max(np.abs(np.r_[z.x, z.t]))) / (1 + np.abs(np.r_[a.x, a.t]).max()))
        lam = rng.uniform(0.2, 5)
        worst = max(worst, abs(abs(np.linalg.det(dilation_matrix(op, lam))) / lam ** op.Q - 1))
        t = rng.uniform(0.05, 10)
        D = dilation_matrix(op, math.sqrt(t))
        worst = max(worst, rel(covariance_C(op, t), D @ covariance_C(op, 1.0) @ D))
    elapsed = time.perf_counter() - t0
    ok = report(1, worst <= 1e-10, elapsed, 1.0, f"max relative error {worst:.2e} over 100 inputs")
    assert ok


def test_2_closed_forms(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(200)
    k = kolmogorov()
    worst_c = 0.0
    for t in rng.uniform(0.05, 5, 100):
        ref = np.array([[t, -t**2 / 2], [-t**2 / 2, t**3 / 3]])
        worst_c = max(worst_c, float(np.max(np.abs(covariance_C(k, t) - ref) / np.abs(ref))))
    worst_g = 0.0
    for N in (1, 2, 3):
        ctx = GammaContext.from_operator(heat(N))
        for _ in range(34):
            x, t = rng.normal(size=N), rng.uniform(0.05, 5)
            g = (4 * math.pi * t) ** (-N / 2) * math.exp(-x @ x / (4 * t))
            worst_g = max(worst_g, abs(gamma(ctx, x, t) - g) / g)
    elapsed = time.perf_counter() - t0
    ok = report(2, max(worst_c, worst_g) <= 1e-12, elapsed, 1.0,
                f"Kolmogorov C(t) rel {worst_c:.2e}; heat gamma rel {worst_g:.2e} at 102 points")
    assert ok


def test_3_gamma_correctness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(300)
    worst_h = 0.0
    for i in range(100):
        ctx = GammaContext.from_operator(OPS[i % 4])
        z = GroupPoint(rng.normal(size=ctx.N), rng.uniform(0.2, 2))
        lam = rng.uniform(0.4, 2.5)
        zl = dilate(ctx.op, lam, z)
        worst_h = max(worst_h, abs(gamma(ctx, zl.x, zl.t) / (lam ** -ctx.Q * gamma(ctx, z.x, z.t)) - 1))

    kctx = GammaContext.from_operator(kolmogorov())
    mass_err = 0.0
    for t in (0.25, 1.0, 4.0):
        lim = 12 * np.sqrt(np.diag(2 * np.linalg.inv(kctx.Cinv1))) * t ** (0.5 * kctx.op.weights)
        m = dblquad(lambda x2, x1: gamma(kctx, np.array([x1, x2]), t),
                    -lim[0], lim[0], -lim[1], lim[1], epsabs=1e-10)[0]
        mass_err = max(mass_err, abs(m - 1))

    hs = np.array([8e-3, 4e-3, 2e-3, 1e-3])
    slopes, flipped = [], []
    for ctx in (kctx, GammaContext.from_operator(three_dim_operator())):
        n = 0
        while n < 10:
            x, t = rng.uniform(-1.5, 1.5, ctx.N), rng.uniform(0.5, 2)
            if _scaled_norm_sq(ctx, x, t) < 1:
                continue
            n += 1
            z = GroupPoint(x, t)
            slopes.append(np.polyfit(np.log(hs), np.log([pde_residual(ctx, z, h) for h in hs]), 1)[0])
            flipped.append(np.polyfit(np.log(hs), np.log([pde_residual(ctx, z, h, -ctx.drift_sign) for h in hs]), 1)[0])
    slopes, flipped = np.array(slopes), np.array(flipped)
    elapsed = time.perf_counter() - t0
    ok = (worst_h <= 1e-10 and mass_err <= 1e-3
          and np.all(np.abs(slopes - 2) < 0.2) and np.all(flipped < 1.0))
    ok = report(3, ok, elapsed, 30.0,
                f"homogeneity {worst_h:.1e}; mass error {mass_err:.1e}; residual slopes "
                f"[{slopes.min():.3f}, {slopes.max():.3f}] at 20 points; flipped slopes <= {flipped.max():.3f}")
    assert ok


def _moment_z(xs, mean, cov):
    n = len(xs)
    zm = (xs.mean(0) - mean) / np.sqrt(np.diag(cov) / n)
    emp = np.cov(xs.T)
    zc = (emp - cov) / np.sqrt((cov**2 + np.outer(np.diag(cov), np.diag(cov))) / n)
    return max(np.abs(zm).max(), np.abs(zc).max())


def test_4_sampler_fidelity(report):
    t0 = time.perf_counter()
    worst, worst2 = 0.0, 0.0
    for op in (kolmogorov(), three_dim_operator()):
        ctx = GammaContext.from_operator(op)
        s = ctx.drift_sign
        rng = np.random.default_rng(400)
        x, dt, n = np.linspace(0.5, -0.3, op.N), 0.4, 100_000
        mean = expm(s * dt * op.B) @ x
        M = quad_vec(lambda u: expm(s * u * op.B) @ op.A @ expm(s * u * op.B).T, 0, dt, epsabs=1e-14)[0]
        one = transition_sample(ctx, np.tile(x, (n, 1)), dt, rng)
        worst = max(worst, _moment_z(one, mean, 2 * M))
        two = transition_sample(ctx, transition_sample(ctx, np.tile(x, (n, 1)), dt / 2, rng), dt / 2, rng)
        # two independent samples of the same law: the difference of means has twice the variance
        zm = (two.mean(0) - one.mean(0)) / np.sqrt(2 * np.diag(2 * M) / n)
        C = 2 * M
        se_c = np.sqrt(2 * (C**2 + np.outer(np.diag(C), np.diag(C))) / n)
        zc = (np.cov(two.T) - np.cov(one.T)) / se_c
        worst2 = max(worst2, np.abs(zm).max(), np.abs(zc).max())
    elapsed = time.perf_counter() - t0
    ok = report(4, worst < 3 and worst2 < 3, elapsed, 30.0,
                f"max |z| against exp(dtB)x and 2M(dt): {worst:.2f}; two-step vs one-step: {worst2:.2f}")
    assert ok


def test_5_dk_estimator(report):
    t0 = time.perf_counter()
    notes, ok = [], True
    for name, op in (("kolmogorov", kolmogorov()), ("heat", heat(2))):
        ctx = GammaContext.from_operator(op)
        params = CriterionParams(samples_per_k=100_000, kmax=10, seed=5)
        x0 = np.zeros(ctx.N)
        for k in (1, 3, 5):
            closed = full_space_dk(ctx, params, k)
            est = dk_estimate(ctx, empty(ctx.N), x0, params, k)
            ref, se = rejection_dk(ctx, empty(ctx.N), x0, params, k, 200_000, np.random.default_rng(50 + k))
            good = abs(est.value - closed) <= 3 * est.stderr + 1e-12 * closed and abs(ref - closed) < 3 * se
            ok &= good
            notes.append(f"{name} k={k} z={abs(ref - closed) / se:.2f}")
        rep = evaluate_criterion(ctx, whole(ctx.N), x0, CriterionParams(kmax=10, samples_per_k=100_000))
        zero = all(r["d_k"] == 0.0 for r in rep.rows)
        ok &= zero
        xb = np.eye(ctx.N)[0]
        small, big = ball(np.zeros(ctx.N), 1.0), ball(0.5 * xb, 1.5)
        for k in (1, 3, 5):
            a = dk_estimate(ctx, small, xb, params, k)
            b = dk_estimate(ctx, big, xb, params, k)
            ok &= b.value <= a.ci[1] and b.hits <= a.hits
        d = box([-1, -1], [1, 1]) if name == "kolmogorov" else ball([0, 0], 1.0)
        bound = dk_upper_bound_check(ctx, d, xb, params)
        ok &= bound["bound_holds"] and len(bound["bound_rows"]) == 10
        notes.append(f"{name} whole-space zero={zero} bound={bound['bound_holds']}")
    elapsed = time.perf_counter() - t0
    ok = report(5, ok, elapsed, 300.0, "; ".join(notes))
    assert ok


def test_6_dirichlet_solver(report):
    t0 = time.perf_counter()
    kctx, hctx = GammaContext.from_operator(kolmogorov()), GammaContext.from_operator(heat(2))
    sq, notes = SolverConfig(paths=10_000, seed=6), []
    kbox, hball = box([-1, -1], [1, 1]), ball([0, 0], 1)

    c1 = solve_stationary(kctx, kbox, lambda p: np.full(len(p), 2.5), [0.2, 0.3], sq)
    c2 = solve_evolution(hctx, Cylinder(hball, 0, 1), lambda p, t: np.full(len(p), -1.25), ([0.1, 0.2], 0.5), sq)
    ok = c1.value == 2.5 and c2.value == -1.25 and c1.stderr == 0 == c2.stderr

    def z(est, exact):
        return abs(est.value - exact) / est.stderr

    e1 = solve_stationary(kctx, kbox, lambda p: p[:, 0], [0.3, 0.2], sq)
    e2 = solve_stationary(hctx, hball, lambda p: p[:, 0] ** 2 - p[:, 1] ** 2, [0.4, -0.2], sq)
    e3 = solve_evolution(hctx, Cylinder(hball, 0, 1), lambda p, t: p[:, 0] ** 2 + 2 * np.asarray(t),
                         ([0.3, 0.1], 0.2), sq)
    annulus = puncture(hball, [0, 0], 0.3)
    e4 = solve_stationary(hctx, annulus, lambda p: np.log(np.linalg.norm(p, axis=1)), [0.5, 0.2], sq)
    zs = [z(e1, 0.3), z(e2, 0.12), z(e3, 0.49), z(e4, 0.5 * math.log(0.29))]
    ok &= max(zs) < 3

    phi = lambda p: np.sin(3 * p[:, 0]) * np.cos(2 * p[:, 1])
    pts, _, _ = exit_sample(kctx, kbox, [0.1, -0.4], sq)
    vals = phi(pts)
    est = solve_stationary(kctx, kbox, phi, [0.1, -0.4], sq)
    overshoot = float(np.max(np.abs(pts)) - 1)
    ok &= vals.min() <= est.value <= vals.max() and overshoot < 1e-6 and not np.any(kbox(pts))
    elapsed = time.perf_counter() - t0
    ok = report(6, ok, elapsed, 300.0,
                f"constants exact; oracle |z| = {', '.join(f'{v:.2f}' for v in zs)}; "
                f"max principle estimate {est.value:.3f} in [{vals.min():.3f}, {vals.max():.3f}], exit overshoot {overshoot:.1e}")
    assert ok


def test_7_monotone_in_time(report):
    t0 = time.perf_counter()
    cfg = SolverConfig(paths=4000, seed=7)
    res = []
    for op, base in ((kolmogorov(), box([-1, -1], [1, 1])), (heat(2), box([-1, -1], [1, 1]))):
        ctx = GammaContext.from_operator(op)
        res.append(monotone_solution_test(ctx, Cylinder(base, 0.0, 1.0), cfg, x=[0.2, -0.1], n_times=10))
    ok = all(r["monotone"] and len(r["times"]) == 10 for r in res)
    elapsed = time.perf_counter() - t0
    ok = report(7, ok, elapsed, 600.0,
                "; ".join(f"violations {len(r['violations'])}, K from {r['estimates'][0]:.3f} to {r['estimates'][-1]:.3f}"
                          for r in res))
    assert ok


BARRIER_SUITE = [
    (kolmogorov(), box([-1, -1], [1, 1]), [1.0, 0.0]),
    (heat(2), ball([0, 0], 1), [1.0, 0.0]),
    (heat(3), box([-1, -1, -1], [1, 1, 1]), [0.0, 0.0, 1.0]),
    (three_dim_operator(), box([-1, -1, -1], [1, 1, 1]), [0.5, 0.0, 1.0]),
]


def test_8_barrier(report):
    t0 = time.perf_counter()
    mins = []
    for op, Y, x0 in BARRIER_SUITE:
        r = verify_strict_superharmonicity(build_barrier(op, x0, Y), op)
        mins.append((r.ok, r.min_value))
    op, Y, x0 = BARRIER_SUITE[0]
    neg = verify_strict_superharmonicity(build_barrier(op, x0, Y, lam=1e-3), op)
    ok = all(o and m > 0 for o, m in mins) and not neg.ok
    elapsed = time.perf_counter() - t0
    ok = report(8, ok, elapsed, 60.0,
                f"min grid values {', '.join(f'{m:.3g}' for _, m in mins)}; tiny lambda min {neg.min_value:.3g} "
                f"({neg.n_nonpositive} non-positive points)")
    assert ok


@pytest.fixture(scope="module")
def gold():
    t0 = time.perf_counter()
    specs = gold_suite()
    rows = run_suite(specs, workers=1)
    return specs, rows, time.perf_counter() - t0


def test_9_equivalence(report, gold):
    _, rows, elapsed = gold
    summ = equivalence_summary(rows)
    suff = run_criterion_sufficiency_check(rows)
    ok = summ["ok"] and suff["ok"] and not summ["expected_mismatches"]
    try:
        assert_equivalence(rows)
    except Exception:
        ok = False
    lines = "; ".join(f"{r.case} {r.x0}: {r.stationary}/{r.evolution}/{r.criterion}" for r in rows)
    ok = report(9, ok, elapsed, 1800.0,
                f"{summ['conclusive_pairs']} conclusive pairs of {summ['rows']}, "
                f"{len(summ['disagreements'])} disagreements, {suff['forbidden']} forbidden, "
                f"{len(summ['expected_mismatches'])} label mismatches | {lines}")
    assert ok


def test_10_determinism(report, gold):
    t0 = time.perf_counter()
    checks = {}
    kctx = GammaContext.from_operator(kolmogorov())
    kbox = box([-1, -1], [1, 1])

    params = CriterionParams(samples_per_k=30_000, kmax=6, seed=10)
    a, b = (evaluate_criterion(kctx, kbox, [1.0, 0.0], params, workers=w) for w in (1, 3))
    checks[5] = a.to_json() == b.to_json()

    cfg = SolverConfig(paths=3000, batch_size=512, seed=10)
    a, b = (solve_stationary(kctx, kbox, lambda p: p[:, 0], [0.3, 0.2], cfg, workers=w) for w in (1, 3))
    checks[6] = a.to_dict() == b.to_dict()

    cyl = Cylinder(kbox, 0.0, 1.0)
    cfg7 = SolverConfig(paths=1000, batch_size=256, seed=10)
    a, b = (monotone_solution_test(kctx, cyl, cfg7, n_times=4, workers=w) for w in (1, 3))
    checks[7] = a == b

    op, Y, x0 = BARRIER_SUITE[0]
    a, b = (verify_strict_superharmonicity(build_barrier(op, x0, Y), op).to_json() for _ in range(2))
    checks[8] = a == b

    specs, rows, _ = gold
    spec = next(s for s in specs if s.name == "heat2-ball")
    again = run_equivalence_suite(spec, workers=3)
    first = [r for r in rows if r.case == "heat2-ball"]
    checks[9] = [vars(r) for r in first] == [vars(r) for r in again]

    elapsed = time.perf_counter() - t0
    ok = report(10, all(checks.values()), elapsed, 1800.0,
                "bit-identical for workers 1 vs 3: " + ", ".join(f"criterion {k}={v}" for k, v in checks.items()))
    assert ok
