"""Delay-system contract, measurement series and decision-vector layout.

A delay system is

    dx/dt = f(t, x, z, p),   z(t) = int_{-inf}^t alpha(t - s) r(s) ds,
    r = h(t, x, p),          y(t_k) = g(t_k, x(t_k), p).

Subclasses of :class:`DelayModel` supply ``f``, ``h``, ``g`` and their
Jacobians. The time argument is explicit so that non-autonomous models (the
logistic carrying capacity) fit the same interface.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DelayModel",
    "MeasurementSeries",
    "ThetaLayout",
    "JacobianReport",
    "check_jacobians",
    "pack_theta",
    "unpack_theta",
]


class DelayModel:
    """Base class for delay systems.

    Subclasses set the dimensions ``n_x, n_z, n_y, n_p`` and implement the
    evaluators. Evaluators must be pure functions of their arguments.
    """

    n_x: int
    n_z: int
    n_y: int
    n_p: int
    param_names: tuple = ()
    param_units: tuple = ()
    state_names: tuple = ()

    def f(self, t, x, z, p):
        raise NotImplementedError

    def h(self, t, x, p):
        raise NotImplementedError

    def g(self, t, x, p):
        raise NotImplementedError

    def f_x(self, t, x, z, p):
        raise NotImplementedError

    def f_z(self, t, x, z, p):
        raise NotImplementedError

    def f_p(self, t, x, z, p):
        raise NotImplementedError

    def h_x(self, t, x, p):
        raise NotImplementedError

    def h_p(self, t, x, p):
        raise NotImplementedError

    def g_x(self, t, x, p):
        raise NotImplementedError

    def g_p(self, t, x, p):
        raise NotImplementedError

    def default_p(self) -> np.ndarray:
        raise NotImplementedError

    def layout(self, M: int) -> "ThetaLayout":
        return ThetaLayout(self.n_p, M, self.n_x)


@dataclass
class MeasurementSeries:
    """Measurement times ``t_0 < ... < t_N`` and values ``y`` of shape (N+1, n_y)."""

    times: np.ndarray
    values: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self.values = values
        if self.values.shape[0] != self.times.size:
            raise ValueError(f"{self.times.size} times but {self.values.shape[0]} measurement rows")
        if self.times.size == 0:
            raise ValueError("empty measurement series")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("measurement times must be strictly increasing")

    def __len__(self):
        return self.times.size

    @property
    def n_y(self) -> int:
        return self.values.shape[1]

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def tf(self) -> float:
        return float(self.times[-1])

    def window(self, t_end: float) -> "MeasurementSeries":
        keep = self.times <= t_end + 1e-12
        return MeasurementSeries(self.times[keep], self.values[keep], self.names)

    def to_csv(self, path):
        names = self.names or tuple(f"y_{i + 1}" for i in range(self.n_y))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(("t",) + tuple(names))
            for t, row in zip(self.times, self.values):
                w.writerow([_fmt(t)] + [_fmt(v) for v in row])

    @classmethod
    def from_csv(cls, path) -> "MeasurementSeries":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], [r for r in rows[1:] if r]
        data = np.array(body, dtype=float)
        return cls(data[:, 0], data[:, 1:], tuple(header[1:]))


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


@dataclass(frozen=True)
class ThetaLayout:
    """Positions of ``p``, ``q = [c_0..c_M, a]`` and ``x0`` inside ``theta``."""

    n_p: int
    M: int
    n_x: int

    @property
    def n_q(self) -> int:
        return self.M + 2

    @property
    def size(self) -> int:
        return self.n_p + self.n_q + self.n_x

    @property
    def p(self) -> slice:
        return slice(0, self.n_p)

    @property
    def q(self) -> slice:
        return slice(self.n_p, self.n_p + self.n_q)

    @property
    def c(self) -> slice:
        return slice(self.n_p, self.n_p + self.M + 1)

    @property
    def a(self) -> int:
        return self.n_p + self.M + 1

    @property
    def x0(self) -> slice:
        return slice(self.n_p + self.n_q, self.size)

    @property
    def w(self) -> np.ndarray:
        """Simplex constraint vector: ``w @ theta == sum(c)``."""
        w = np.zeros(self.size)
        w[self.c] = 1.0
        return w

    def names(self, model: DelayModel | None = None) -> list[str]:
        p_names = list(model.param_names) if model is not None and model.param_names else [
            f"p{i}" for i in range(self.n_p)]
        x_names = list(model.state_names) if model is not None and model.state_names else [
            f"x{i}" for i in range(self.n_x)]
        return (p_names + [f"c{m}" for m in range(self.M + 1)] + ["a"]
                + [f"{n}_0" for n in x_names])


def pack_theta(p, q, x0, layout: ThetaLayout) -> np.ndarray:
    p, q, x0 = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (p, q, x0))
    if (p.size, q.size, x0.size) != (layout.n_p, layout.n_q, layout.n_x):
        raise ValueError(f"block sizes {(p.size, q.size, x0.size)} do not match layout "
                         f"{(layout.n_p, layout.n_q, layout.n_x)}")
    return np.concatenate([p, q, x0])


def unpack_theta(theta, layout: ThetaLayout):
    theta = np.asarray(theta, dtype=float)
    if theta.size != layout.size:
        raise ValueError(f"theta has length {theta.size}, layout expects {layout.size}")
    return theta[layout.p].copy(), theta[layout.q].copy(), theta[layout.x0].copy()


@dataclass
class JacobianReport:
    errors: dict = field(default_factory=dict)
    tol: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, e in self.errors.items() if e > self.tol]


def _fd(fun, v, step):
    v = np.asarray(v, dtype=float)
    cols = []
    for i in range(v.size):
        hi = max(step, step * abs(v[i]))
        e = np.zeros_like(v)
        e[i] = hi
        cols.append((np.asarray(fun(v + e)) - np.asarray(fun(v - e))) / (2 * hi))
    return np.column_stack(cols) if cols else np.zeros((np.size(fun(v)), 0))


def _rel_err(analytic, fd):
    analytic = np.atleast_2d(np.asarray(analytic, dtype=float))
    fd = np.atleast_2d(fd)
    if analytic.shape != fd.shape:
        return np.inf
    scale = max(1.0, np.max(np.abs(fd), initial=0.0))
    return float(np.max(np.abs(analytic - fd), initial=0.0) / scale)


def check_jacobians(model: DelayModel, t, x, z, p, tol: float = 1e-5,
                    step: float = 1e-6) -> JacobianReport:
    """Compare every analytic Jacobian of ``model`` with central differences.

    The error is the max absolute deviation scaled by ``max(1, max|J_fd|)``.
    """
    x, z, p = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, z, p))
    rep = JacobianReport(tol=tol)
    rep.errors["f_x"] = _rel_err(model.f_x(t, x, z, p), _fd(lambda v: model.f(t, v, z, p), x, step))
    rep.errors["f_z"] = _rel_err(model.f_z(t, x, z, p), _fd(lambda v: model.f(t, x, v, p), z, step))
    rep.errors["f_p"] = _rel_err(model.f_p(t, x, z, p), _fd(lambda v: model.f(t, x, z, v), p, step))
    rep.errors["h_x"] = _rel_err(model.h_x(t, x, p), _fd(lambda v: model.h(t, v, p), x, step))
    rep.errors["h_p"] = _rel_err(model.h_p(t, x, p), _fd(lambda v: model.h(t, x, v), p, step))
    rep.errors["g_x"] = _rel_err(model.g_x(t, x, p), _fd(lambda v: model.g(t, v, p), x, step))
    rep.errors["g_p"] = _rel_err(model.g_p(t, x, p), _fd(lambda v: model.g(t, x, v), p, step))
    return rep
