"""Built-in delay systems.

``LogisticModel``
    Delayed logistic growth with a seasonally varying carrying capacity,
    time in months.
``ReactorModel``
    Point reactor kinetics of a circulating-fuel (molten salt) reactor with
    six delayed neutron precursor groups; the precursors re-entering the
    core are delayed by the external loop. Time in seconds.
``LinearModel``
    ``dx/dt = -k x + z``, ``r = x``: small linear test system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import FoldedNormalMixture
from .model import DelayModel

DAYS_PER_MONTH = 365.25 / 12.0

LOGISTIC_KERNEL = FoldedNormalMixture(((0.5, 0.35, 0.06), (0.5, 0.45, 0.12)))
REACTOR_KERNEL = FoldedNormalMixture(((0.6, 2.5, 0.5), (0.4, 5.0, 1.0)))


def days_to_months(days, days_per_month: float = DAYS_PER_MONTH):
    return np.asarray(days, dtype=float) / days_per_month


@dataclass(frozen=True)
class LogisticModel(DelayModel):
    """``dN/dt = kappa N (1 - Ntilde / K(t))``, estimated parameter ``p = [kappa]``.

    ``K(t) = (1 + A1 sin(2 pi w1 t) + A2 sin(2 pi w2 t)) * K_bar``.
    """

    A1: float = 0.01
    A2: float = 0.005
    omega1: float = 1.0 / 12.0
    omega2: float = 1.0
    K_bar: float = 1.0
    kappa: float = 4.0

    n_x = 1
    n_z = 1
    n_y = 1
    n_p = 1
    param_names = ("kappa",)
    param_units = ("1/mo",)
    state_names = ("N",)

    def default_p(self):
        return np.array([self.kappa])

    def K(self, t):
        return (1.0 + self.A1 * np.sin(2 * np.pi * self.omega1 * t)
                + self.A2 * np.sin(2 * np.pi * self.omega2 * t)) * self.K_bar

    def rhs(self, t, N, Ntilde, kappa):
        return kappa * N * (1.0 - Ntilde / self.K(t))

    def f(self, t, x, z, p):
        return np.array([p[0] * x[0] * (1.0 - z[0] / self.K(t))])

    def f_x(self, t, x, z, p):
        return np.array([[p[0] * (1.0 - z[0] / self.K(t))]])

    def f_z(self, t, x, z, p):
        return np.array([[-p[0] * x[0] / self.K(t)]])

    def f_p(self, t, x, z, p):
        return np.array([[x[0] * (1.0 - z[0] / self.K(t))]])

    def h(self, t, x, p):
        return np.array([x[0]])

    def h_x(self, t, x, p):
        return np.ones((1, 1))

    def h_p(self, t, x, p):
        return np.zeros((1, 1))

    def g(self, t, x, p):
        return np.array([x[0]])

    def g_x(self, t, x, p):
        return np.ones((1, 1))

    def g_p(self, t, x, p):
        return np.zeros((1, 1))


_LAMBDA = (0.0124, 0.0305, 0.1110, 0.3010, 1.1300, 3.0000)
_BETA = (0.00021, 0.00141, 0.00127, 0.00255, 0.00074, 0.00027)


@dataclass(frozen=True)
class ReactorModel(DelayModel):
    """Circulating-fuel point kinetics with temperature feedback.

    States ``x = [C_1..C_6, C_n, rho]``; delayed quantity ``r = [C_1..C_6]``;
    measurements ``y = log([C_1..C_6, C_n])``. Estimated parameter
    ``p = [kappa]`` (reactivity feedback coefficient, 1/K).

    The precursor balance is

        dC_i/dt = (delta_i Ctilde_i - C_i) / tau_c + beta_i C_n / Lambda - lambda_i C_i

    with ``delta_i = exp(-lambda_i tau_l)``.
    """

    lam: tuple = _LAMBDA
    beta_i: tuple = _BETA
    beta: float = 0.0065
    Lambda: float = 5e-5
    kappa: float = 5e-5
    H: float = 0.05
    tau_c: float = 0.5
    tau_l: float = 3.5

    n_x = 8
    n_z = 6
    n_y = 7
    n_p = 1
    param_names = ("kappa",)
    param_units = ("1/K",)
    state_names = ("C1", "C2", "C3", "C4", "C5", "C6", "Cn", "rho")

    def default_p(self):
        return np.array([self.kappa])

    @property
    def _lam(self):
        return np.asarray(self.lam, dtype=float)

    @property
    def _bi(self):
        return np.asarray(self.beta_i, dtype=float)

    @property
    def delta(self) -> np.ndarray:
        return np.exp(-self._lam * self.tau_l)

    @property
    def D(self) -> float:
        return 1.0 / self.tau_c

    def f(self, t, x, z, p):
        lam, bi = self._lam, self._bi
        C, Cn, rho = x[:6], x[6], x[7]
        out = np.empty(8)
        out[:6] = (self.delta * z - C) * self.D + bi * Cn / self.Lambda - lam * C
        out[6] = lam @ C + (rho - self.beta) * Cn / self.Lambda
        out[7] = -p[0] * self.H * Cn
        return out

    def f_x(self, t, x, z, p):
        lam, bi = self._lam, self._bi
        J = np.zeros((8, 8))
        J[np.arange(6), np.arange(6)] = -self.D - lam
        J[:6, 6] = bi / self.Lambda
        J[6, :6] = lam
        J[6, 6] = (x[7] - self.beta) / self.Lambda
        J[6, 7] = x[6] / self.Lambda
        J[7, 6] = -p[0] * self.H
        return J

    def f_z(self, t, x, z, p):
        J = np.zeros((8, 6))
        J[np.arange(6), np.arange(6)] = self.delta * self.D
        return J

    def f_p(self, t, x, z, p):
        J = np.zeros((8, 1))
        J[7, 0] = -self.H * x[6]
        return J

    def h(self, t, x, p):
        return np.array(x[:6], dtype=float)

    def h_x(self, t, x, p):
        return np.eye(6, 8)

    def h_p(self, t, x, p):
        return np.zeros((6, 1))

    def g(self, t, x, p):
        C = np.asarray(x[:7], dtype=float)
        if np.any(C <= 0):
            raise ValueError("log measurement needs positive concentrations")
        return np.log(C)

    def g_x(self, t, x, p):
        C = np.asarray(x[:7], dtype=float)
        if np.any(C <= 0):
            raise ValueError("log measurement needs positive concentrations")
        return np.hstack([np.diag(1.0 / C), np.zeros((7, 1))])

    def g_p(self, t, x, p):
        return np.zeros((7, 1))

    def point_kinetics_matrix(self, rho: float = 0.0) -> np.ndarray:
        """Generator of the closed point-kinetics system on ``[C_1..C_6, C_n]``."""
        lam, bi = self._lam, self._bi
        A = np.zeros((7, 7))
        A[np.arange(6), np.arange(6)] = -lam
        A[:6, 6] = bi / self.Lambda
        A[6, :6] = lam
        A[6, 6] = (rho - self.beta) / self.Lambda
        return A


@dataclass(frozen=True)
class LinearModel(DelayModel):
    """``dx/dt = -k x + z``, ``r = x``, ``y = x``; parameter ``p = [k]``."""

    k: float = 1.0

    n_x = 1
    n_z = 1
    n_y = 1
    n_p = 1
    param_names = ("k",)
    state_names = ("x",)

    def default_p(self):
        return np.array([self.k])

    def f(self, t, x, z, p):
        return -p[0] * x + z

    def f_x(self, t, x, z, p):
        return np.array([[-p[0]]])

    def f_z(self, t, x, z, p):
        return np.ones((1, 1))

    def f_p(self, t, x, z, p):
        return np.array([[-x[0]]])

    def h(self, t, x, p):
        return np.array(x, dtype=float)

    def h_x(self, t, x, p):
        return np.ones((1, 1))

    def h_p(self, t, x, p):
        return np.zeros((1, 1))

    def g(self, t, x, p):
        return np.array(x, dtype=float)

    def g_x(self, t, x, p):
        return np.ones((1, 1))

    def g_p(self, t, x, p):
        return np.zeros((1, 1))


MODELS = {"logistic": LogisticModel, "reactor": ReactorModel, "linear": LinearModel}


def make_model(name: str, **params) -> DelayModel:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    if "lam" in params:
        params["lam"] = tuple(params["lam"])
    if "beta_i" in params:
        params["beta_i"] = tuple(params["beta_i"])
    return cls(**params)
