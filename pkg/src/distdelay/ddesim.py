"""Fixed-step reference simulator for distributed (and absolute) delay systems.

The convolution is truncated to a memory horizon ``N_h * dt`` and evaluated
with the right rectangle rule,

    z_{n+1} = sum_{j=0}^{N_h-1} alpha(j dt) r_{n+1-j} dt,

while the state equation is advanced by implicit Euler. The ``j = 0`` term
couples ``z_{n+1}`` to ``x_{n+1}``; Newton's method on the residual
``x_{n+1} - x_n - dt f(x_{n+1}, z_{n+1})`` carries that term in its Jacobian.
Before ``t0`` the state is constant, ``x = x0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate as spi

from .kernels import PointDelay
from .model import DelayModel, MeasurementSeries

__all__ = [
    "DdeSimConfig",
    "HistoryBuffer",
    "DdeResult",
    "NewtonFailure",
    "OrderEstimate",
    "dde_convergence_order",
    "dde_step",
    "simulate_dde",
]


class NewtonFailure(RuntimeError):
    def __init__(self, step, residual):
        super().__init__(f"Newton iteration did not converge at step {step} (|R| = {residual:.3e})")
        self.step = step


@dataclass
class DdeSimConfig:
    """``dt`` step, ``horizon`` memory length (a multiple of ``dt``), Newton tolerance."""

    dt: float
    horizon: float
    tol: float = 1e-12
    max_newton: int = 50

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ValueError(f"horizon/dt = {n} is not an integer")

    @property
    def n_hist(self) -> int:
        return int(round(self.horizon / self.dt))


class HistoryBuffer:
    """Last ``length`` values of ``r`` in a doubled ring buffer.

    :meth:`window` returns them oldest first as one contiguous view.
    """

    def __init__(self, length: int, r0):
        r0 = np.asarray(r0, dtype=float)
        self.length = length
        self._buf = np.tile(r0, (2 * max(length, 1), 1))
        self._pos = 0

    def push(self, r):
        if self.length == 0:
            return
        self._pos = (self._pos + 1) % self.length
        self._buf[self._pos] = r
        self._buf[self._pos + self.length] = r

    def window(self) -> np.ndarray:
        return self._buf[self._pos + 1:self._pos + 1 + self.length]

    def lag(self, k: int) -> np.ndarray:
        """``r`` from ``k`` pushes ago (``k = 1`` is the newest)."""
        return self._buf[self._pos + self.length - k + 1]


def _rectangle_weights(kernel, dt: float, n_hist: int) -> np.ndarray:
    w = kernel.pdf(dt * np.arange(n_hist)) * dt
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if not np.isfinite(w[0]):
        # singular at zero: replace the first cell by its average
        w[0] = spi.quad(kernel.pdf, 0.0, dt)[0]
    return w


def dde_step(model: DelayModel, t_next: float, x_n, z_known, w0: float, p, dt: float,
             tol: float = 1e-12, max_newton: int = 50, step: int = 0):
    """One implicit Euler step with ``z_{n+1} = z_known + w0 * h(x_{n+1})``.

    ``z_known`` holds the already-known part of the convolution. Returns
    ``(x_{n+1}, z_{n+1})``. The Newton start is the explicit Euler predictor.
    Convergence is ``max|R| <= tol``, where ``tol`` is raised to a few ulps
    of the largest term in ``R`` when the states are large.
    """
    x_n = np.asarray(x_n, dtype=float)
    z_n = z_known + w0 * model.h(t_next, x_n, p)
    x = x_n + dt * model.f(t_next, x_n, z_n, p)
    I = np.eye(x.size)
    for _ in range(max_newton):
        z = z_known + w0 * model.h(t_next, x, p)
        step_f = dt * model.f(t_next, x, z, p)
        R = x - x_n - step_f
        res = float(np.max(np.abs(R)))
        if res <= _floor(tol, x, x_n, step_f):
            return x, z
        Jz = model.f_z(t_next, x, z, p)
        Jr = I - dt * (model.f_x(t_next, x, z, p) + w0 * (Jz @ model.h_x(t_next, x, p)))
        x = x - np.linalg.solve(Jr, R)
        if not np.all(np.isfinite(x)):
            break
    z = z_known + w0 * model.h(t_next, x, p)
    step_f = dt * model.f(t_next, x, z, p)
    R = x - x_n - step_f
    res = float(np.max(np.abs(R)))
    if res <= _floor(tol, x, x_n, step_f):
        return x, z
    raise NewtonFailure(step, res)


def _floor(tol, *terms):
    """``tol``, raised to the rounding level of the terms that make up the residual."""
    big = max(float(np.max(np.abs(t))) for t in terms)
    return max(tol, 8 * np.finfo(float).eps * big)


@dataclass
class DdeResult:
    t: np.ndarray
    x: np.ndarray
    z: np.ndarray
    measurements: MeasurementSeries | None

    def at(self, times) -> np.ndarray:
        idx = np.searchsorted(self.t, np.asarray(times) - 1e-9 * (self.t[1] - self.t[0]))
        return self.x[idx]


def simulate_dde(model: DelayModel, kernel, x0, p, t0: float, tf: float,
                 config: DdeSimConfig, sample_times=None) -> DdeResult:
    """Simulate from constant history ``x0`` on ``(-inf, t0]`` to ``tf``.

    ``kernel`` is any object with ``pdf`` (folded normal or Erlang mixture),
    or a :class:`PointDelay`, whose lag is snapped to ``round(tau/dt)``
    steps. ``sample_times`` (on the step grid) produce a
    :class:`MeasurementSeries` via ``g``.
    """
    dt = config.dt
    n_steps = int(round((tf - t0) / dt))
    if n_steps <= 0:
        raise ValueError("empty simulation window")
    if abs(t0 + n_steps * dt - tf) > 1e-9 * max(1.0, abs(tf)):
        raise ValueError("tf - t0 is not a multiple of dt")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    r0 = np.asarray(model.h(t0, x0, p), dtype=float)

    if isinstance(kernel, PointDelay):
        lag = int(round(kernel.tau / dt))
        buf = HistoryBuffer(lag, r0)
        w0 = 1.0 if lag == 0 else 0.0

        def known():
            return np.zeros_like(r0) if lag == 0 else buf.lag(lag).copy()
    else:
        nh = config.n_hist
        w = _rectangle_weights(kernel, dt, nh)
        w0 = float(w[0])
        wrev = w[1:][::-1].copy()
        buf = HistoryBuffer(nh - 1, r0)

        def known():
            return wrev @ buf.window() if nh > 1 else np.zeros_like(r0)

    ts = t0 + dt * np.arange(n_steps + 1)
    xs = np.empty((n_steps + 1, x0.size))
    zs = np.empty((n_steps + 1, r0.size))
    xs[0] = x0
    zs[0] = r0  # the steady history gives z(t0) = h(x0) for a normalized kernel
    x = x0
    for n in range(n_steps):
        x, z = dde_step(model, ts[n + 1], x, known(), w0, p, dt, config.tol, config.max_newton, n + 1)
        buf.push(model.h(ts[n + 1], x, p))
        xs[n + 1] = x
        zs[n + 1] = z

    meas = None
    if sample_times is not None:
        st = np.asarray(sample_times, dtype=float)
        k = np.rint((st - t0) / dt).astype(int)
        if np.any(np.abs(t0 + k * dt - st) > 1e-6 * dt) or np.any(k < 0) or np.any(k > n_steps):
            raise ValueError("sample times must lie on the step grid within the window")
        vals = np.array([model.g(ts[i], xs[i], p) for i in k])
        meas = MeasurementSeries(st, vals)
    return DdeResult(ts, xs, zs, meas)


@dataclass
class OrderEstimate:
    dts: tuple
    differences: tuple
    order: float


def dde_convergence_order(model: DelayModel, kernel, x0, p, t0: float, tf: float, dt: float,
                          horizon: float, levels: int = 3) -> OrderEstimate:
    """Observed order from runs at ``dt, dt/2, ..., dt/2^(levels-1)``.

    Successive differences of the end state (max norm) are compared,
    ``order = log2(|x_dt - x_dt/2| / |x_dt/2 - x_dt/4|)``, so no reference
    solution is needed. ``horizon`` must be a multiple of every step.
    """
    if levels < 3:
        raise ValueError("need at least three levels")
    ends, dts = [], []
    for i in range(levels):
        h = dt / 2 ** i
        res = simulate_dde(model, kernel, x0, p, t0, tf, DdeSimConfig(h, horizon))
        ends.append(res.x[-1])
        dts.append(h)
    diffs = [float(np.max(np.abs(a - b))) for a, b in zip(ends, ends[1:])]
    order = float(np.log2(diffs[-2] / diffs[-1])) if diffs[-1] > 0 else float("inf")
    return OrderEstimate(tuple(dts), tuple(diffs), order)
