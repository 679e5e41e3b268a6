import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy import integrate as spi

from distdelay.ivp import IntegratorConfig
from distdelay.kernels import ErlangMixture
from distdelay.lct import AugmentedSystem, build_matrices, steady_state_Z0
from distdelay.models import LinearModel, LogisticModel, ReactorModel
from distdelay.sensitivities import simulate_augmented


def test_matrices_m1():
    A, B, C = build_matrices([0.3, 0.7, 3.0], 1)
    assert sp.issparse(A) and sp.issparse(B) and sp.issparse(C)
    np.testing.assert_array_equal(A.toarray(), [[-3, 0], [3, -3]])
    np.testing.assert_array_equal(B.toarray(), [[3], [0]])
    np.testing.assert_array_equal(C.toarray(), [[0.3, 0.7]])


def test_matrices_m0():
    A, B, C = build_matrices([1.0, 2.5], 1)
    np.testing.assert_array_equal(A.toarray(), [[-2.5]])
    np.testing.assert_array_equal(B.toarray(), [[2.5]])
    np.testing.assert_array_equal(C.toarray(), [[1.0]])


def test_matrices_block_structure():
    A, B, C = build_matrices([0.4, 0.6, 2.0], 2)
    I = np.eye(2)
    np.testing.assert_array_equal(A.toarray(), np.block([[-2 * I, 0 * I], [2 * I, -2 * I]]))
    np.testing.assert_array_equal(B.toarray(), np.vstack([2 * I, 0 * I]))
    np.testing.assert_array_equal(C.toarray(), np.hstack([0.4 * I, 0.6 * I]))


def test_matrices_reject_bad_rate():
    with pytest.raises(ValueError):
        build_matrices([1.0, 0.0], 1)


@settings(max_examples=30, deadline=None)
@given(M=st.integers(0, 8), n_z=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_matrices_linear_in_q(M, n_z, seed):
    rng = np.random.default_rng(seed)
    q1, q2 = rng.uniform(0.1, 2, M + 2), rng.uniform(0.1, 2, M + 2)
    s = rng.uniform(0.1, 1)
    m1, m2, m12 = build_matrices(q1, n_z), build_matrices(q2, n_z), build_matrices(s * q1 + (1 - s) * q2, n_z)
    for x, y, xy in zip(m1, m2, m12):
        np.testing.assert_allclose(xy.toarray(), s * x.toarray() + (1 - s) * y.toarray(), atol=1e-13)


def test_steady_state_logistic():
    np.testing.assert_array_equal(steady_state_Z0(LogisticModel(), [0.9], [4.0], 4), np.full(5, 0.9))


def test_steady_state_reactor():
    m = ReactorModel()
    Z0 = steady_state_Z0(m, np.r_[np.ones(7), 0.01], m.default_p(), 2)
    np.testing.assert_array_equal(Z0, np.ones(18))


@settings(max_examples=30, deadline=None)
@given(M=st.integers(0, 30), a=st.floats(0.1, 100.0), r=st.floats(-5, 5))
def test_steady_state_annihilates_chain(M, a, r):
    A, B, _ = build_matrices(np.r_[np.full(M + 1, 1.0 / (M + 1)), a], 1)
    Z0 = steady_state_Z0(LinearModel(), [r], [1.0], M)
    assert np.max(np.abs(A @ Z0 + B @ np.array([r]))) <= 1e-12 * max(1.0, abs(a * r))


def test_augmented_rhs_logistic_steady_start():
    m = LogisticModel(A1=0.0, A2=0.0)
    sys, th = AugmentedSystem.from_mixture(m, ErlangMixture(7.0, [0.2, 0.3, 0.5]), [4.0], [0.9])
    d = sys.rhs(0.0, sys.initial_state(th), th)
    assert d[0] == pytest.approx(0.36, rel=1e-14)
    np.testing.assert_array_equal(d[1:], 0.0)


def test_augmented_rhs_zero_state_linear():
    sys, th = AugmentedSystem.from_mixture(LinearModel(), ErlangMixture(2.0, [0.5, 0.5]), [1.0], [0.0])
    np.testing.assert_array_equal(sys.rhs(0.0, np.zeros(sys.n), th), 0.0)


def test_single_exponential_chain():
    sys, th = AugmentedSystem.from_mixture(LinearModel(), ErlangMixture(3.0, [1.0]), [1.0], [0.0])
    y = np.array([0.7, 0.2])
    np.testing.assert_allclose(sys.rhs(0.0, y, th), [-0.7 + 0.2, 3.0 * (0.7 - 0.2)])


def _fd_jac(fun, y, h=1e-7):
    cols = []
    for i in range(y.size):
        e = np.zeros_like(y)
        e[i] = h * max(1.0, abs(y[i]))
        cols.append((fun(y + e) - fun(y - e)) / (2 * e[i]))
    return np.column_stack(cols)


def test_jacobian_matches_fd_logistic_m3():
    rng = np.random.default_rng(2)
    m = LogisticModel()
    sys, th = AugmentedSystem.from_mixture(m, ErlangMixture(6.0, rng.dirichlet(np.ones(4))), [4.0], [0.8])
    y = rng.uniform(0.7, 1.1, sys.n)
    J = sys.jacobian(0.4, y, th).toarray()
    Jfd = _fd_jac(lambda v: sys.rhs(0.4, v, th), y)
    assert np.max(np.abs(J - Jfd)) / max(1.0, np.max(np.abs(Jfd))) <= 1e-5
    np.testing.assert_array_equal(J, sys.jacobian_dense(0.4, y, th))


def test_jacobian_matches_fd_reactor():
    rng = np.random.default_rng(5)
    m = ReactorModel()
    sys, th = AugmentedSystem.from_mixture(m, ErlangMixture(8.0, rng.dirichlet(np.ones(3))), m.default_p(),
                                           np.r_[np.ones(7), 0.0097])
    y = np.r_[rng.uniform(0.5, 1.5, 7), 0.0097, rng.uniform(0.5, 1.5, sys.n - 8)]
    J = sys.jacobian(0.0, y, th).toarray()
    Jfd = _fd_jac(lambda v: sys.rhs(0.0, v, th), y)
    assert np.max(np.abs(J - Jfd)) / max(1.0, np.max(np.abs(Jfd))) <= 1e-5


def test_linear_model_jacobian_constant():
    sys, th = AugmentedSystem.from_mixture(LinearModel(), ErlangMixture(2.0, [0.5, 0.5]), [1.0], [0.0])
    J1 = sys.jacobian(0.0, np.zeros(sys.n), th).toarray()
    J2 = sys.jacobian(3.0, np.arange(sys.n, dtype=float), th).toarray()
    np.testing.assert_array_equal(J1, J2)


@pytest.mark.parametrize("model,M", [(LogisticModel(), 5), (ReactorModel(), 4)])
def test_jacobian_sparsity_bound(model, M):
    c = np.full(M + 1, 1.0 / (M + 1))
    x0 = np.r_[np.ones(7), 0.0097] if model.n_x == 8 else [0.9]
    sys, th = AugmentedSystem.from_mixture(model, ErlangMixture(5.0, c), model.default_p(), x0)
    J = sys.jacobian(0.0, sys.initial_state(th) * 1.1, th)
    nx, nz = model.n_x, model.n_z
    assert J.nnz <= nx * nx + nx * nz * (M + 1) + nz * nx + (2 * M + 1) * nz


def test_param_jacobian_matches_fd():
    rng = np.random.default_rng(8)
    m = LogisticModel()
    sys, th = AugmentedSystem.from_mixture(m, ErlangMixture(6.0, rng.dirichlet(np.ones(3))), [4.0], [0.8])
    y = rng.uniform(0.7, 1.1, sys.n)
    F = sys.param_jacobian(0.2, y, th)
    Ffd = _fd_jac(lambda v: sys.rhs(0.2, y, v), th)
    np.testing.assert_allclose(F, Ffd, atol=1e-6)


def test_chain_relaxes_to_constant_input():
    """From Z = 0 under constant r, block m lags r by exactly r * Q(m + 1, a t)."""
    from scipy.special import gammaincc

    a, r = 4.0, 0.63
    A, B, _ = build_matrices(np.r_[np.full(4, 0.25), a], 1)
    A, b = A.toarray(), B.toarray()[:, 0] * r
    t_end = 20 / a
    Z = spi.solve_ivp(lambda t, z: A @ z + b, (0, t_end), np.zeros(4),
                      rtol=1e-12, atol=1e-14, method="LSODA").y[:, -1]
    np.testing.assert_allclose(r - Z, r * gammaincc(np.arange(1, 5), a * t_end), atol=1e-10)
    assert abs(Z[0] - r) <= 1e-8


def test_lct_equals_convolution_on_trajectory():
    """z = C Z from the chain equals the Erlang convolution of the computed r."""
    m = LogisticModel()
    mix = ErlangMixture(5.0, [0.1, 0.3, 0.4, 0.2])
    sys, th = AugmentedSystem.from_mixture(m, mix, [4.0], [0.85])
    times = np.linspace(0, 3, 601)
    tr = simulate_augmented(sys, th, times, IntegratorConfig(atol=1e-11, rtol=1e-11))
    N = tr.y[:, 0]
    z_lct = sys.zhat(th, tr.y)[:, 0]
    for k in (150, 300, 600):
        t = times[k]
        # history before 0 is the constant N(0); its contribution is N0 * (1 - cdf(t))
        past = N[0] * (1.0 - mix.cdf(t))
        inner = spi.simpson(mix.pdf(t - times[:k + 1]) * N[:k + 1], x=times[:k + 1])
        assert z_lct[k] == pytest.approx(past + inner, rel=1e-4)
