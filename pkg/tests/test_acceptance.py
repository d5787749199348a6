"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest

from bilevel_huber.bilevel import (
    BilevelConfig,
    UpperObjective,
    corridor,
    localized_residual,
    reduced_derivative_at,
    reduced_objective,
    train,
)
from bilevel_huber.experiments import best_scalar_huber
from bilevel_huber.gamma import TikhonovTrainConfig, gamma_from_weight, train_tikhonov_weight
from bilevel_huber.huber import huber_eval, huber_gradient, lower_energy
from bilevel_huber.images import CORPUS, add_gaussian_noise, piecewise_constant, step_edge, synthetic
from bilevel_huber.lower import NewtonConfig, solve_lower
from bilevel_huber.metrics import psnr
from bilevel_huber.operators import div2, div_backward, grad_forward, hessian, pointwise_norm
from bilevel_huber.projection import h1_kkt_residual, h1_project
from bilevel_huber.tgv import solve_huber_primal_dual

SIGMA2 = 0.01
GAMMA = 1e-3
TIGHT = NewtonConfig(newton_tol=1e-12, max_newton_iters=100)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        return ok

    return emit


@pytest.fixture(scope="module")
def corpus_runs():
    """100-iteration stat-objective TV2 training on each 64x64 corpus image."""
    runs = {}
    for name in CORPUS:
        clean = synthetic(name, 64)
        g = add_gaussian_noise(clean, SIGMA2, 0)
        start = time.perf_counter()
        res = train(g, GAMMA, 2, UpperObjective("stat"), BilevelConfig(), ground_truth=clean, keep_iterates=True)
        runs[name] = (clean, g, res, time.perf_counter() - start)
    return runs


def test_criterion_01_adjointness(report):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for h, w in [(1, 1), (2, 3), (7, 5), (16, 16), (33, 17), (64, 64)]:
        for _ in range(5):
            u = rng.standard_normal((h, w))
            p = rng.standard_normal((2, h, w))
            q = rng.standard_normal((4, h, w))
            lhs1, rhs1 = np.sum(grad_forward(u) * p), -np.sum(u * div_backward(p))
            lhs2, rhs2 = np.sum(hessian(u) * q), np.sum(u * div2(q))
            for a, b in ((lhs1, rhs1), (lhs2, rhs2)):
                worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1e-300))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 1.0
    report(1, ok, f"max relative adjointness error {worst:.2e}, {elapsed:.2f} s")
    assert ok


def test_criterion_02_huber_sandwich_and_seam(report):
    rng = np.random.default_rng(2)
    gam = rng.uniform(1e-6, 2.0, 10_000)
    z = rng.standard_normal((10_000, 2)) * rng.uniform(0, 3, (10_000, 1))
    f = np.array([huber_eval(gi, zi) for gi, zi in zip(gam, z)])
    nz = np.linalg.norm(z, axis=1)
    # the lower bound is an equality on the linear branch; allow a few ulps
    slack = 4 * np.finfo(float).eps * np.maximum(nz, 1.0)
    sandwich = bool(np.all(nz - gam / 2 <= f + slack) and np.all(f <= nz + slack))
    seam = 0.0
    for g0 in rng.uniform(1e-3, 2.0, 200):
        d = rng.standard_normal(2)
        d /= np.linalg.norm(d)
        lo, hi = g0 * (1 - 1e-12) * d, g0 * (1 + 1e-12) * d
        seam = max(
            seam,
            abs(huber_eval(g0, lo) - huber_eval(g0, hi)),
            np.linalg.norm(huber_gradient(g0, lo) - huber_gradient(g0, hi)),
        )
    ok = sandwich and seam <= 1e-9
    report(2, ok, f"sandwich holds on 1e4 samples: {sandwich}; max seam jump {seam:.1e}")
    assert ok


def test_criterion_03_lower_solver_certificate(report):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst_res, worst_gap = 0.0, 0.0
    for order in (1, 2):
        for k in range(20):
            g = add_gaussian_noise(piecewise_constant(16), SIGMA2, 100 + k) if k % 2 else rng.random((16, 16))
            alpha = rng.uniform(0.02, 0.3, (16, 16)) / order
            gamma = rng.uniform(1e-3, 1e-2)
            st = solve_lower(g, alpha, gamma, order)
            u_cp, _ = solve_huber_primal_dual(g, alpha, gamma, order, iters=20000)
            e, e_cp = lower_energy(st.u, g, alpha, gamma, order), lower_energy(u_cp, g, alpha, gamma, order)
            worst_res = max(worst_res, st.residual_primal, st.residual_dual)
            worst_gap = max(worst_gap, abs(e - e_cp) / e_cp)
    elapsed = time.perf_counter() - start
    ok = worst_res < 1e-4 and worst_gap <= 1e-3 and elapsed < 60
    report(3, ok, f"max residual {worst_res:.1e}, max energy gap to oracle {worst_gap:.1e}, {elapsed:.1f} s")
    assert ok


def test_criterion_04_quadratic_branch(report):
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    from bilevel_huber.operators import grad_matrix

    rng = np.random.default_rng(4)
    start = time.perf_counter()
    g = add_gaussian_noise(piecewise_constant(32), SIGMA2, 4)
    alpha = rng.uniform(0.1, 0.5, g.shape)
    gamma = 10 * pointwise_norm(grad_forward(g)).max()
    u = solve_lower(g, alpha, gamma, 1, NewtonConfig(newton_tol=1e-12)).u
    gm = grad_matrix(g.shape)
    a = sp.identity(g.size) + gm.T @ sp.diags(np.tile((alpha / gamma).ravel(), 2)) @ gm
    u_lin = spla.spsolve(a.tocsc(), g.ravel()).reshape(g.shape)
    rel = np.linalg.norm(u - u_lin) / np.linalg.norm(u_lin)
    elapsed = time.perf_counter() - start
    ok = rel <= 1e-6 and elapsed < 5
    report(4, ok, f"relative difference to linear solve {rel:.1e}, {elapsed:.2f} s")
    assert ok


def test_criterion_05_adjoint_gradient(report):
    rng = np.random.default_rng(5)
    start = time.perf_counter()
    clean = piecewise_constant(12)
    g = add_gaussian_noise(clean, SIGMA2, 5)
    config = BilevelConfig()
    worst = 0.0
    for order in (1, 2):
        alpha = (0.15 if order == 1 else 0.06) * rng.uniform(0.5, 1.5, g.shape)
        for kind in ("stat", "psnr"):
            obj = UpperObjective(kind, clean if kind == "psnr" else None)
            _, st = reduced_objective(g, alpha, GAMMA, order, obj, config, TIGHT)
            d = reduced_derivative_at(g, alpha, GAMMA, order, obj, config, st, TIGHT)
            for _ in range(5):
                v = rng.standard_normal(g.shape)
                h = 1e-6
                fp, _ = reduced_objective(g, alpha + h * v, GAMMA, order, obj, config, TIGHT)
                fm, _ = reduced_objective(g, alpha - h * v, GAMMA, order, obj, config, TIGHT)
                fd = (fp - fm) / (2 * h)
                worst = max(worst, abs(np.sum(d * v) - fd) / abs(fd))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-3 and elapsed < 300
    report(5, ok, f"max relative error over 20 directional derivatives {worst:.1e}, {elapsed:.1f} s")
    assert ok


def test_criterion_06_training_ledger(report, corpus_runs):
    _, _, res, elapsed = corpus_runs["piecewise_affine"]
    config = BilevelConfig()
    objs = [r.objective for r in res.records]
    nonincreasing = all(b <= a for a, b in zip(objs, objs[1:]))
    feasible = all(a.min() >= config.alpha_lo and a.max() <= config.alpha_hi for a in res.alphas)
    armijo = all(
        r.objective <= r.previous_objective + config.armijo_c * r.directional for r in res.records[1:] if r.accepted
    )
    accepted = sum(r.accepted for r in res.records[1:])
    ok = nonincreasing and feasible and armijo and len(res.records) == 101 and elapsed < 1800
    report(
        6,
        ok,
        f"F: {objs[0]:.4e} -> {objs[-1]:.4e}, nonincreasing={nonincreasing}, box={feasible}, "
        f"armijo={armijo}, accepted {accepted}/100, {elapsed:.0f} s",
    )
    assert ok


def _corridor_fraction(u, g):
    lo, hi = corridor(SIGMA2, 7)
    ru = localized_residual(u, g, 7)
    return float(np.mean((ru >= lo) & (ru <= hi)))


def test_criterion_07_corridor(report, corpus_runs):
    parts, ok = [], True
    for name, (_, g, res, _) in corpus_runs.items():
        before = _corridor_fraction(solve_lower(g, 1.0, GAMMA, 2).u, g)
        after = _corridor_fraction(res.u, g)
        ok &= after >= before
        parts.append(f"{name} {before:.3f} -> {after:.3f}")
    report(7, ok, "corridor fraction at alpha_init -> trained: " + ", ".join(parts))
    assert ok


def test_criterion_08_trend(report, corpus_runs):
    grid = np.geomspace(0.01, 1.0, 25)
    margins, parts = [], []
    detail_ok = True
    for name, (clean, g, res, _) in corpus_runs.items():
        a_best, _, p_best = best_scalar_huber(g, clean, 2, GAMMA, grid)
        p_bilevel = psnr(res.u, clean)
        margins.append(p_bilevel - p_best)
        detail = pointwise_norm(hessian(clean)) > 0.02
        flat = ~_dilate(detail, 3)
        m_detail, m_flat = res.alpha[detail].mean(), res.alpha[flat].mean()
        detail_ok &= m_detail < m_flat
        parts.append(
            f"{name}: bilevel {p_bilevel:.2f} dB vs scalar {p_best:.2f} dB (alpha={a_best:.3g}); "
            f"alpha mean detail {m_detail:.3f} / flat {m_flat:.3f}"
        )
    trend_ok = all(m >= -0.05 for m in margins) and sum(m > 0 for m in margins) >= len(margins) / 2
    ok = trend_ok and detail_ok
    report(8, ok, f"(a) {'pass' if trend_ok else 'fail'}, (b) {'pass' if detail_ok else 'fail'} | " + "; ".join(parts))
    assert ok


def _dilate(mask, r):
    from scipy.ndimage import binary_dilation

    return binary_dilation(mask, iterations=r)


def test_criterion_09_gamma_strategy(report):
    n = 32
    g = add_gaussian_noise(step_edge(n), SIGMA2, 0)
    config = TikhonovTrainConfig()
    a = train_tikhonov_weight(g, config).alpha
    band = a[:, n // 2 - 1 : n // 2 + 1].mean()
    cols = np.abs(np.arange(n) - (n // 2 - 0.5))
    flat = a[:, cols >= 4].mean()
    gamma = gamma_from_weight(a, config.s)
    identity = np.max(np.abs(gamma * a - config.s))
    ok = band < 0.5 * flat and identity <= 1e-15
    report(9, ok, f"edge band mean {band:.3f}, flat mean {flat:.3f}, ratio {band / flat:.3f}; max|gamma*alpha - s| {identity:.1e}")
    assert ok


def test_criterion_10_h1_projection(report):
    rng = np.random.default_rng(10)
    worst = 0.0
    for k in range(100):
        h, w = rng.integers(4, 24, 2)
        beta = rng.normal(0.5, 1.0, (h, w))
        lo, hi = sorted(rng.uniform(-0.5, 1.5, 2))
        x = h1_project(beta, lo, hi)
        assert x.min() >= lo and x.max() <= hi
        worst = max(worst, h1_kkt_residual(x, beta, lo, hi))
    const = all(
        np.array_equal(h1_project(np.full((6, 7), c), 1e-8, 5.0), np.clip(np.full((6, 7), c), 1e-8, 5.0))
        for c in (-3.0, 0.0, 2.5, 9.0)
    )
    ok = worst <= 1e-8 and const
    report(10, ok, f"max KKT residual {worst:.1e} over 100 instances; constants clip exactly: {const}")
    assert ok
