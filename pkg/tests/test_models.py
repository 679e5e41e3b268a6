import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distdelay.ivp import IntegratorConfig, integrate
from distdelay.model import check_jacobians
from distdelay.models import LinearModel, LogisticModel, ReactorModel, make_model


def test_logistic_extinction_fixed_point():
    assert LogisticModel().rhs(3.7, 0.0, 0.5, 4.0) == 0.0


def test_logistic_carrying_capacity_equilibrium():
    m = LogisticModel(A1=0.0, A2=0.0)
    assert m.rhs(1.3, 1.0, 1.0, 4.0) == 0.0


def test_logistic_value_at_origin():
    assert LogisticModel().rhs(0.0, 0.9, 0.9, 4.0) == pytest.approx(0.36, rel=1e-14)


def test_logistic_capacity_positive():
    t = np.linspace(0, 48, 5001)
    assert np.all(LogisticModel().K(t) > 0)


def test_logistic_undelayed_matches_closed_form():
    m = LogisticModel(A1=0.0, A2=0.0)

    def rhs(t, y):
        return m.f(t, y, y, [1.0])

    def jac(t, y):
        return m.f_x(t, y, y, [1.0]) + m.f_z(t, y, y, [1.0])

    ts = np.linspace(0, 5, 11)
    cfg = IntegratorConfig(atol=1e-10, rtol=1e-10)
    tr = integrate(rhs, jac, [0.5], 0.0, 5.0, ts, cfg)
    exact = 1.0 / (1.0 + np.exp(-ts))
    np.testing.assert_allclose(tr.y[:, 0], exact, atol=1e-8)


def test_reactor_trivial_fixed_point():
    m = ReactorModel()
    x = np.zeros(8)
    x[7] = 0.3
    np.testing.assert_array_equal(m.f(0.0, x, np.zeros(6), m.default_p()), np.zeros(8))


def test_reactor_rhs_at_initial_condition():
    m = ReactorModel()
    x = np.r_[np.ones(7), 1.5 * m.beta]
    d = m.f(0.0, x, np.ones(6), m.default_p())
    # oracle: hand expansion with the table constants, 30-digit arithmetic
    expected_C = [4.1026566042673969017, 27.967000664979641141, 24.645146443759767779,
                  49.396430215719142251, 11.708317337099286879, 0.40005507289869956336]
    np.testing.assert_allclose(d[:6], expected_C, rtol=1e-13)
    assert d[6] == pytest.approx(69.584899999999999884, rel=1e-13)
    assert d[7] == pytest.approx(-2.5e-6, rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(cn=st.floats(1e-6, 1e3), rho=st.floats(-0.01, 0.01))
def test_reactor_negative_feedback(cn, rho):
    m = ReactorModel()
    x = np.r_[np.ones(6), cn, rho]
    assert m.f(0.0, x, np.ones(6), m.default_p())[7] < 0


def test_reactor_measurement():
    m = ReactorModel()
    x = np.r_[np.ones(7), 0.01]
    np.testing.assert_array_equal(m.g(0, x, m.default_p()), np.zeros(7))
    x = np.r_[np.full(7, math.e), 0.01]
    np.testing.assert_allclose(m.g(0, x, m.default_p()), np.ones(7))
    with pytest.raises(ValueError):
        m.g(0, np.r_[np.ones(6), 0.0, 0.0], m.default_p())


def test_reactor_measurement_jacobian_shape():
    m = ReactorModel()
    x = np.r_[np.linspace(0.5, 2, 7), 0.01]
    gx = m.g_x(0, x, m.default_p())
    assert gx.shape == (7, 8)
    np.testing.assert_array_equal(gx[:, 7], 0.0)
    np.testing.assert_allclose(np.diag(gx[:, :7]), 1.0 / x[:7])


@pytest.mark.parametrize("model,x,z", [
    (LogisticModel(), [0.9], [0.9]),
    (LogisticModel(), [1.2], [0.7]),
    (ReactorModel(), np.r_[np.linspace(0.5, 2.0, 7), 0.0097], np.linspace(0.8, 1.3, 6)),
    (LinearModel(), [0.4], [0.2]),
])
def test_model_jacobians(model, x, z):
    rep = check_jacobians(model, 0.37, x, z, model.default_p(), tol=1e-5)
    assert rep.passed, rep.errors


def test_point_kinetics_conserves_total():
    """Zero delay, no flow, rho = 0: d(sum C)/dt = rho C_n / Lambda = 0.

    Exact only when beta equals the sum of the group fractions (the tabulated
    group fractions add up to 0.00645, not 0.0065).
    """
    m = ReactorModel(beta=sum(ReactorModel().beta_i))
    A = m.point_kinetics_matrix(0.0)
    np.testing.assert_allclose(A.sum(axis=0)[:6], 0.0, atol=1e-15)
    y0 = np.r_[np.ones(6), 2.0]
    tr = integrate(lambda t, y: A @ y, lambda t, y: A, y0, 0.0, 1.0, [0.0, 1.0],
                   IntegratorConfig(atol=1e-10, rtol=1e-10))
    assert tr.y[-1].sum() == pytest.approx(y0.sum(), abs=1e-8)


def test_make_model():
    m = make_model("logistic", kappa=2.0)
    assert isinstance(m, LogisticModel) and m.kappa == 2.0
    r = make_model("reactor", lam=[1, 2, 3, 4, 5, 6])
    assert r.lam == (1, 2, 3, 4, 5, 6)
    with pytest.raises(ValueError):
        make_model("nope")
