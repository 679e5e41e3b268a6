"""Forward sensitivities of the augmented system and the objective gradient.

For ``theta = [p; q; x0]`` the sensitivities ``S = d[x; Z]/dtheta`` obey

    dS/dt = J(t) S + F_theta(t),

where ``J`` is the Jacobian of the augmented right-hand side and ``F_theta``
its explicit parameter derivative (see ``AugmentedSystem.param_jacobian``).
The initial sensitivities follow from ``x(t0) = x0`` and the steady-state
chain ``Z(t0) = [h(x0, p), ..., h(x0, p)]``.
"""

from __future__ import annotations

import numpy as np

from .ivp import IntegratorConfig, Trajectory, integrate
from .lct import AugmentedSystem
from .model import DelayModel, ThetaLayout

__all__ = [
    "sensitivity_init",
    "sensitivity_rhs",
    "measurement_sensitivity",
    "objective_gradient",
    "simulate_augmented",
]

DENSE_LIMIT = 150


def sensitivity_init(sys: AugmentedSystem, theta, t0: float = 0.0) -> np.ndarray:
    """``S(t0)``: identity on the ``x0`` block, ``h_x``/``h_p`` stacked on each chain block."""
    theta = np.asarray(theta, dtype=float)
    m, L = sys.model, sys.layout
    p, _, _, x0 = sys.split(theta)
    S = np.zeros((sys.n, L.size))
    S[:sys.n_x, L.x0] = np.eye(sys.n_x)
    hx = np.asarray(m.h_x(t0, x0, p))
    hp = np.asarray(m.h_p(t0, x0, p))
    S[sys.n_x:, L.x0] = np.tile(hx, (sys.M + 1, 1))
    S[sys.n_x:, L.p] = np.tile(hp, (sys.M + 1, 1))
    return S


def sensitivity_rhs(sys: AugmentedSystem, t, y, S, theta) -> np.ndarray:
    return sys.jacobian_dense(t, y, theta) @ S + sys.param_jacobian(t, y, theta)


def measurement_sensitivity(model: DelayModel, t, x, Sx, theta, layout: ThetaLayout) -> np.ndarray:
    """``S_y = g_x S_x + dg/dtheta``; only the ``p`` block has a direct term."""
    p = np.asarray(theta)[layout.p]
    Sy = np.asarray(model.g_x(t, x, p)) @ Sx
    Sy[:, layout.p] += np.asarray(model.g_p(t, x, p))
    return Sy


def objective_gradient(residuals, Sy, scale: float = 1.0) -> np.ndarray:
    """Gradient of ``scale * 0.5 * sum_k |y_k - yhat_k|^2``.

    ``residuals`` has shape (K, n_y) (``y - yhat``) and ``Sy`` shape
    (K, n_y, n_theta).
    """
    residuals = np.asarray(residuals, dtype=float)
    Sy = np.asarray(Sy, dtype=float)
    if residuals.ndim == 1:
        residuals = residuals[:, None]
    if Sy.shape[:2] != residuals.shape:
        raise ValueError(f"residual grid {residuals.shape} does not match sensitivities {Sy.shape[:2]}")
    return -scale * np.einsum("ki,kij->j", residuals, Sy)


def simulate_augmented(sys: AugmentedSystem, theta, times, config: IntegratorConfig | None = None,
                       sensitivities: bool = False, t0: float | None = None,
                       mesh=None) -> Trajectory:
    """Integrate the augmented system (optionally with sensitivities) to ``times``.

    Starts at ``t0`` (default ``times[0]``) from the steady-state chain.
    ``mesh`` replays a previous run's step sequence (see :func:`integrate`).
    """
    theta = np.asarray(theta, dtype=float)
    times = np.asarray(times, dtype=float)
    t0 = float(times[0]) if t0 is None else t0
    y0 = sys.initial_state(theta, t0)
    dense = sys.n <= DENSE_LIMIT
    jac = (lambda t, y: sys.jacobian_dense(t, y, theta)) if dense else (lambda t, y: sys.jacobian(t, y, theta))
    kw = {}
    if sensitivities:
        kw = dict(sens0=sensitivity_init(sys, theta, t0),
                  param_jac=lambda t, y: sys.param_jacobian(t, y, theta))
    return integrate(lambda t, y: sys.rhs(t, y, theta), jac, y0, t0, float(times[-1]), times,
                     config, mesh=mesh, **kw)
