"""End-to-end acceptance checks, one test per criterion, at the stated tolerances.

Each test prints (and the terminal summary repeats) one PASS/FAIL line.
Criteria 6, 7, 8 and 10 run full estimations and take minutes each.
"""

import math
import time

import numpy as np
import pytest
from scipy import integrate as spi

from distdelay import cli
from distdelay.ddesim import DdeSimConfig, dde_convergence_order, simulate_dde
from distdelay.estimator import EstimationProblem, solve
from distdelay.estimator import objective
from distdelay.ivp import IntegratorConfig
from distdelay.kernels import ErlangMixture, memory_horizon, tijms_weights
from distdelay.lct import AugmentedSystem, build_matrices, steady_state_Z0
from distdelay.model import MeasurementSeries
from distdelay.models import DAYS_PER_MONTH, LOGISTIC_KERNEL, REACTOR_KERNEL, LogisticModel, ReactorModel
from distdelay.sensitivities import simulate_augmented

pytestmark = pytest.mark.slow


def _mass(mix: ErlangMixture) -> float:
    """Adaptive quadrature of the density over [0, 40 (M+1)/a], split into 40 panels."""
    width = (mix.M + 1) / mix.a
    return math.fsum(spi.quad(mix.pdf, k * width, (k + 1) * width, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
                     for k in range(40))


def test_c01_kernel_normalization(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        M = int(rng.integers(0, 101))
        a = float(rng.uniform(0.1, 50.0))
        worst = max(worst, abs(_mass(ErlangMixture(a, rng.dirichlet(np.ones(M + 1)))) - 1.0))
    ok = record_criterion(1, "kernel normalization", worst <= 1e-8, f"max |mass - 1| = {worst:.2e} (tol 1e-8)",
                          time.perf_counter() - t0, 10)
    assert ok


def test_c02_tijms_convergence(record_criterion):
    t0 = time.perf_counter()
    grid = np.linspace(0.0, 2.0, 20001)
    beta = LOGISTIC_KERNEL.cdf(grid)
    errs = []
    for dt in (0.2, 0.1, 0.05):
        mix = tijms_weights(LOGISTIC_KERNEL.cdf, dt, math.ceil(2.0 / dt))
        errs.append(float(np.max(np.abs(mix.cdf(grid) - beta))))
    decreasing = errs[0] > errs[1] > errs[2]
    halved = errs[2] * 2 <= errs[0]
    ok = record_criterion(2, "Tijms convergence", decreasing and halved,
                          f"sup errors {errs[0]:.5f}, {errs[1]:.5f}, {errs[2]:.5f}; strictly decreasing: {decreasing}; "
                          f"first/last = {errs[0] / errs[2]:.4f} (need >= 2)", time.perf_counter() - t0, 5)
    assert ok


def test_c03_lct_matches_reference_simulator(record_criterion):
    t0 = time.perf_counter()
    m = LogisticModel()
    rng = np.random.default_rng(0)
    mix = ErlangMixture(10.0, rng.dirichlet(np.ones(6)))
    dt = 1.0 / 3000
    horizon = math.ceil(memory_horizon(mix, 1e-12) / dt) * dt
    ref = simulate_dde(m, mix, [0.9], [4.0], 0.0, 6.0, DdeSimConfig(dt, horizon))
    times = ref.t[::30]
    sys_, th = AugmentedSystem.from_mixture(m, mix, [4.0], [0.9])
    lct = simulate_augmented(sys_, th, times, IntegratorConfig(atol=1e-10, rtol=1e-10))
    rel = float(np.max(np.abs(lct.y[:, 0] - ref.x[::30, 0]) / np.abs(ref.x[::30, 0])))
    ok = record_criterion(3, "LCT vs reference simulator", rel <= 1e-3, f"max relative difference {rel:.2e} (tol 1e-3)",
                          time.perf_counter() - t0, 30)
    assert ok


def _logistic_ddesim_data(days, kernel=LOGISTIC_KERNEL):
    dt = 1.0 / (150 * DAYS_PER_MONTH)
    horizon = math.ceil(memory_horizon(LOGISTIC_KERNEL, 1e-12) / dt) * dt
    res = simulate_dde(LogisticModel(), kernel, [0.9], [4.0], 0.0, days * 150 * dt, DdeSimConfig(dt, horizon),
                       sample_times=np.arange(days + 1) * 150 * dt)
    return res.measurements


def test_c04_gradient_matches_finite_differences(record_criterion):
    t0 = time.perf_counter()
    M = 5
    data = _logistic_ddesim_data(int(round(3 * DAYS_PER_MONTH)))
    prob = cli.build_problem(cli.resolve_config({"estimate": {"window": None}}), data, M)
    L = prob.layout
    rng = np.random.default_rng(4)
    worst, n_bad = 0.0, 0
    for _ in range(10):
        th = np.empty(L.size)
        th[L.p] = rng.uniform(2.0, 6.0)
        th[L.c] = rng.dirichlet(np.ones(M + 1))
        th[L.a] = rng.uniform(5.0, 30.0)
        th[L.x0] = rng.uniform(0.6, 1.2)
        base = objective(prob, th)
        mesh = base.trajectory.mesh
        for j in range(th.size):
            h = 1e-6 * max(1.0, abs(th[j]))
            e = np.zeros_like(th)
            e[j] = h
            fd = (objective(prob, th + e, False, mesh).psi - objective(prob, th - e, False, mesh).psi) / (2 * h)
            err = abs(base.grad[j] - fd)
            n_bad += err > 1e-4 * abs(fd) + 1e-8
            worst = max(worst, err / max(abs(fd), 1e-8))
    ok = record_criterion(4, "gradient exactness", n_bad == 0,
                          f"{n_bad} of {10 * L.size} components off; worst relative error {worst:.2e} (tol 1e-4)",
                          time.perf_counter() - t0, 120)
    assert ok


def test_c05_reference_simulator_order(record_criterion):
    t0 = time.perf_counter()
    dt = 0.01
    horizon = math.ceil(memory_horizon(LOGISTIC_KERNEL, 1e-12) / dt) * dt
    est = dde_convergence_order(LogisticModel(), LOGISTIC_KERNEL, [0.9], [4.0], 0.0, 2.0, dt, horizon)
    ok = record_criterion(5, "reference simulator order", 0.8 <= est.order <= 1.2,
                          f"observed order {est.order:.3f} from dt = {dt}, {dt / 2}, {dt / 4} (need [0.8, 1.2])",
                          time.perf_counter() - t0, 30)
    assert ok


def _inverse_crime_problem(scale=1e6):
    """Truth fixed in advance: a = 10, c ~ Dirichlet(1) (seed 0), kappa = 4, N0 = 0.9, 90 daily samples."""
    M = 5
    m = LogisticModel()
    c = np.random.default_rng(0).dirichlet(np.ones(M + 1))
    sys_, truth = AugmentedSystem.from_mixture(m, ErlangMixture(10.0, c), [4.0], [0.9])
    times = np.arange(91) / DAYS_PER_MONTH
    tr = simulate_augmented(sys_, truth, times, IntegratorConfig(atol=1e-12, rtol=1e-12))
    data = MeasurementSeries(times, tr.y[:, :1])
    cfg = cli.resolve_config({"estimate": {"window": None, "scale": scale}})
    return cli.build_problem(cfg, data, M), truth


@pytest.fixture(scope="module")
def inverse_crime_run():
    prob, truth = _inverse_crime_problem()
    seen = []
    t0 = time.perf_counter()
    res = solve(prob, callback=lambda rec, th: seen.append(th.copy()))
    return prob, truth, res, seen, time.perf_counter() - t0


def test_c06_inverse_crime_recovery(record_criterion, inverse_crime_run):
    prob, truth, res, _, elapsed = inverse_crime_run
    rel = np.abs(res.theta - truth) / np.abs(truth)
    names = prob.layout.names(prob.model)
    worst = int(np.argmax(rel))
    ok = record_criterion(6, "inverse-crime recovery", rel.max() <= 1e-3,
                          f"max relative error {rel.max():.2e} in {names[worst]} (tol 1e-3); psi = {res.psi:.3e}, "
                          f"{res.message}", elapsed, 300)
    assert ok


def test_c07_desk_logistic_identification(record_criterion):
    t0 = time.perf_counter()
    # M = 0 from the single published guess; M = 20 adds two higher rate
    # guesses (uniform c) and keeps the lowest psi, since a = 20 alone stalls
    cfgs = {0: cli.resolve_config({}),
            20: cli.resolve_config({"estimate": {"guess": {"a": [20.0, 40.0, 60.0]}}})}
    data = _logistic_ddesim_data(365)
    grid = np.linspace(0.0, 2.0, 401)
    out = {}
    for M in (0, 20):
        res = cli.solve_configured(cfgs[M], data, M)
        out[M] = res, float(np.max(np.abs(res.mixture.pdf(grid) - LOGISTIC_KERNEL.pdf(grid))))
    res20 = out[20][0]
    e_n0 = abs(res20.x0[0] - 0.9) / 0.9
    e_k = abs(res20.p[0] - 4.0) / 4.0
    better = out[20][1] < out[0][1]
    ok = record_criterion(7, "desk logistic identification", e_n0 <= 0.05 and e_k <= 0.05 and better,
                          f"M=20: N0 = {res20.x0[0]:.4f} ({e_n0:.1%}), kappa = {res20.p[0]:.4f} ({e_k:.1%}) (tol 5%); "
                          f"kernel max error M=0 {out[0][1]:.3f}, M=20 {out[20][1]:.3f}",
                          time.perf_counter() - t0, 1200)
    assert ok


def test_c08_absolute_delay_mean(record_criterion):
    t0 = time.perf_counter()
    from distdelay.kernels import PointDelay

    cfg = cli.resolve_config({"kernel": {"type": "point", "tau": 0.35}, "estimate": {"M": [20]}})
    data = _logistic_ddesim_data(365, PointDelay(0.35))
    res = solve(cli.build_problem(cfg, data, 20))
    tau_hat = res.mixture.mean()
    ok = record_criterion(8, "absolute-delay mean", abs(tau_hat - 0.35) <= 0.05,
                          f"tau_hat = {tau_hat:.4f} mo, |tau_hat - 0.35| = {abs(tau_hat - 0.35):.4f} (tol 0.05)",
                          time.perf_counter() - t0, 1200)
    assert ok


def test_c09_reactor_sanity(record_criterion):
    t0 = time.perf_counter()
    m = ReactorModel()
    x0 = np.r_[np.ones(7), 1.5 * m.beta]
    dt = 1e-3
    res = simulate_dde(m, REACTOR_KERNEL, x0, m.default_p(), 0.0, 25.0, DdeSimConfig(dt, 25.0),
                       sample_times=np.arange(2501) * 0.01)
    stable = bool(np.all(np.isfinite(res.x)) and np.all(res.x[:, :7] > 0)) and len(res.measurements) == 2501
    # steady chain under constant r: A Z0 + B r = 0
    worst = 0.0
    for M in (0, 10, 70):
        q = np.r_[np.full(M + 1, 1.0 / (M + 1)), 25.0]
        A, B, _ = build_matrices(q, m.n_z)
        Z0 = steady_state_Z0(m, x0, m.default_p(), M)
        r = m.h(0.0, x0, m.default_p())
        worst = max(worst, float(np.max(np.abs(A @ Z0 + B @ r))))
    ok = record_criterion(9, "reactor sanity", stable and worst <= 1e-12,
                          f"25 s run finite and positive: {stable}; max |A Z0 + B r| = {worst:.1e} (tol 1e-12)",
                          time.perf_counter() - t0, 120)
    assert ok


def test_c10_solver_invariants(record_criterion, inverse_crime_run):
    prob, _, res, seen, elapsed = inverse_crime_run
    t0 = time.perf_counter()
    psis = [h["psi"] for h in res.history]
    monotone = all(b <= a for a, b in zip(psis, psis[1:]))
    L = prob.layout
    feas = max(abs(th[L.c].sum() - 1.0) for th in seen + [res.theta])
    inside = all(np.all(th >= prob.bounds.lower) and np.all(th <= prob.bounds.upper) for th in seen)
    prob10, _ = _inverse_crime_problem(scale=1e7)
    res10 = solve(prob10)
    shift = float(np.max(np.abs(res10.theta - res.theta)))
    ok = record_criterion(10, "solver invariants",
                          monotone and inside and feas <= 1e-10 and shift <= 10 * prob.opt_tol,
                          f"monotone psi: {monotone}; max |sum(c) - 1| = {feas:.1e}; in bounds: {inside}; "
                          f"argmin shift under 10x scale {shift:.2e} (tol {10 * prob.opt_tol:.0e})",
                          elapsed + time.perf_counter() - t0, 300)
    assert ok
