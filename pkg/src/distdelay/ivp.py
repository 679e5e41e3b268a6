"""Stiff initial value problems: adaptive TR-BDF2 with forward sensitivities.

One TR-BDF2 step of size ``h`` is a trapezoidal stage to ``t + gamma h``
followed by a BDF2 stage to ``t + h``, ``gamma = 2 - sqrt(2)``. Both stages
share the iteration matrix ``I - (gamma/2) h J``. The local error is
estimated from the three stage derivatives and filtered through that matrix.

Sensitivities ``S = dy/dtheta`` are propagated by applying the same two
stages to ``dS/dt = J S + F_theta``. Each stage is linear in ``S`` and is
solved with the Jacobian evaluated at the converged stage value, which makes
``S`` the exact derivative of the discrete solution for the accepted step
sequence. Sensitivities do not take part in step-size control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "IntegrationError",
    "integrate",
    "integrate_fixed",
    "convergence_order",
]

GAMMA = 2.0 - math.sqrt(2.0)
D = GAMMA / 2.0
W1 = 1.0 / (GAMMA * (2.0 - GAMMA))
ERR_C = (-3.0 * GAMMA ** 2 + 4.0 * GAMMA - 2.0) / (6.0 * (2.0 - GAMMA))


class IntegrationError(RuntimeError):
    """Step-size underflow, Newton failure or step budget exhausted."""

    def __init__(self, msg, t_last):
        super().__init__(f"{msg} (last good t = {t_last:.10g})")
        self.t_last = t_last


@dataclass
class IntegratorConfig:
    atol: float = 1e-8
    rtol: float = 1e-8
    max_step: float = math.inf
    first_step: Optional[float] = None
    newton_tol: float = 1e-4
    max_newton: int = 8
    max_steps: int = 1_000_000
    refactor_ratio: float = 0.0

    def __post_init__(self):
        if not (self.atol > 0 and self.rtol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    sens: Optional[np.ndarray] = None
    stats: dict = field(default_factory=dict)
    mesh: Optional[np.ndarray] = None

    def to_csv(self, path, names=None):
        import csv

        names = names or [f"y{i}" for i in range(self.y.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["t"] + list(names))
            for t, row in zip(self.t, self.y):
                w.writerow([format(t, ".17g")] + [format(v, ".17g") for v in row])


class _LU:
    def __init__(self, J, dh):
        if sp.issparse(J):
            n = J.shape[0]
            self._splu = spla.splu((sp.identity(n, format="csc") - dh * J).tocsc())
            self._dense = None
        else:
            self._dense = la.lu_factor(np.eye(J.shape[0]) - dh * J, check_finite=False)

    def solve(self, b):
        if self._dense is not None:
            return la.lu_solve(self._dense, b, check_finite=False)
        return self._splu.solve(np.asarray(b))


def _matmul(J, S):
    return J @ S


def _rms(v):
    return math.sqrt(float(np.dot(v, v)) / v.size)


def _newton(G, u, lu, scale, tol, max_iter):
    """Simplified Newton for ``G(u) = 0``; returns (u, iterations, converged, slow).

    Stops when the estimated remaining error ``rate/(1-rate) * |du|`` (scaled
    norm) drops below ``tol``.
    """
    prev = None
    rate = None
    for k in range(1, max_iter + 1):
        du = lu.solve(-G(u))
        u = u + du
        nrm = _rms(du / scale(u))
        if not np.isfinite(nrm):
            return u, k, False, True
        if prev is not None:
            rate = nrm / prev if prev > 0 else 0.0
            if rate >= 0.9:
                return u, k, False, True
        if nrm <= tol or (rate is not None and rate / (1.0 - rate) * nrm <= tol):
            return u, k, True, rate is not None and rate > 0.3
        prev = nrm
    return u, max_iter, False, True


def integrate(rhs: Callable, jac: Callable, y0, t0: float, tf: float, output_times,
              config: IntegratorConfig | None = None, sens0=None,
              param_jac: Callable | None = None, mesh=None) -> Trajectory:
    """Integrate ``dy/dt = rhs(t, y)`` from ``t0`` to ``tf`` with TR-BDF2.

    Steps land exactly on every entry of ``output_times`` (which must lie in
    ``[t0, tf]`` and increase). ``jac(t, y)`` returns the dense or sparse
    Jacobian. If ``sens0`` (n x n_theta) and ``param_jac(t, y)`` are given,
    forward sensitivities are returned in ``Trajectory.sens``.

    The accepted step end points are returned in ``Trajectory.mesh``. Passing
    such a ``mesh`` back replays exactly that step sequence without error
    control, which makes the result a smooth function of the inputs (used for
    finite-difference checks of the sensitivities).
    """
    cfg = config or IntegratorConfig()
    y = np.array(y0, dtype=float)
    n = y.size
    outs = np.asarray(output_times, dtype=float).ravel()
    if outs.size and (outs[0] < t0 - 1e-12 * max(1.0, abs(t0)) or outs[-1] > tf * (1 + 1e-14) + 1e-14
                      or np.any(np.diff(outs) <= 0)):
        raise ValueError("output times must increase within [t0, tf]")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite initial state")
    with_sens = sens0 is not None
    if with_sens and param_jac is None:
        raise ValueError("param_jac is required with sens0")

    targets = list(outs[outs > t0])
    is_out = [True] * len(targets)
    if not targets or targets[-1] < tf:
        targets.append(tf)
        is_out.append(False)
    ys, ss, ts = [], [], []
    accepted = [float(t0)]
    replay = None
    if mesh is not None:
        replay = np.asarray(mesh, dtype=float)
        if replay[0] != t0 or replay[-1] != targets[-1] or not set(targets) <= set(replay.tolist()):
            raise ValueError("mesh does not match the integration window and output times")
        mi = 1

    S = np.array(sens0, dtype=float) if with_sens else None

    def record(t_rec):
        ts.append(t_rec)
        ys.append(y.copy())
        if with_sens:
            ss.append(S.copy())

    if outs.size and outs[0] <= t0 + 1e-14 * max(1.0, abs(t0)):
        record(t0)
    stats = dict(steps=0, rejected=0, newton=0, jac=0, lu=0, rhs=0)

    def scale(u):
        return cfg.atol + cfg.rtol * np.abs(u)

    t = float(t0)
    f_n = rhs(t, y)
    stats["rhs"] += 1
    J = jac(t, y)
    stats["jac"] += 1
    J_fresh = True
    if with_sens:
        Fp = param_jac(t, y)
        Sdot = _matmul(J, S) + Fp

    if cfg.first_step is not None:
        h = cfg.first_step
    else:
        d0 = _rms(y / scale(y))
        d1 = _rms(f_n / scale(y))
        h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6
        h = min(h, abs(tf - t0))
        h = max(h, 1e-10 * max(1.0, abs(tf - t0)))
    h = min(h, cfg.max_step)

    lu, h_lu = None, None
    ti = 0
    h_free = 0.0
    err_prev = None
    rejected_last = False
    while ti < len(targets):
        target = targets[ti]
        if stats["steps"] + stats["rejected"] >= cfg.max_steps:
            raise IntegrationError("step budget exhausted", t)
        h = min(h, cfg.max_step)
        clipped = False
        if replay is not None:
            h = replay[mi] - t
            clipped = replay[mi] == target
        elif t + 1.1 * h >= target:
            h_free = h
            h = target - t
            clipped = True
        if h <= 16 * np.finfo(float).eps * max(1.0, abs(t)):
            raise IntegrationError("step size underflow", t)

        dh = D * h
        if with_sens or lu is None or abs(h / h_lu - 1.0) > cfg.refactor_ratio:
            lu = _LU(J, dh)
            h_lu = h
            stats["lu"] += 1
        t_g = t + GAMMA * h
        t_1 = t + h

        # stage 1: trapezoidal rule to t + gamma h
        base1 = y + dh * f_n

        def G1(u):
            stats["rhs"] += 1
            return u - base1 - dh * rhs(t_g, u)

        # lu may have been built for a nearby h; Newton still solves G1 = 0
        lu1 = lu
        y_g, it1, ok1, slow1 = _newton(G1, y + GAMMA * h * f_n, lu1, scale,
                                       cfg.newton_tol, cfg.max_newton)
        stats["newton"] += it1
        ok = ok1
        if ok and with_sens:
            J_g = jac(t_g, y_g)
            stats["jac"] += 1
            lu2 = _LU(J_g, dh)
            stats["lu"] += 1
        else:
            lu2 = lu1
        if ok:
            base2 = y + W1 * (y_g - y)

            def G2(u):
                stats["rhs"] += 1
                return u - base2 - dh * rhs(t_1, u)

            y_1, it2, ok2, slow2 = _newton(G2, y + (y_g - y) / GAMMA, lu2, scale,
                                           cfg.newton_tol, cfg.max_newton)
            stats["newton"] += it2
            ok = ok2
        if not ok and replay is not None:
            if J_fresh and h_lu == h:
                raise IntegrationError("Newton failure on a replayed mesh", t)
            J, J_fresh, lu = jac(t, y), True, None
            stats["jac"] += 1
            continue
        if not ok:
            stats["rejected"] += 1
            # retry order: exact-h matrix, fresh Jacobian, then halve the step
            if h_lu == h:
                if not J_fresh:
                    J = jac(t, y)
                    stats["jac"] += 1
                    J_fresh = True
                else:
                    h *= 0.5
            lu = None
            continue

        f_g = (y_g - y) / dh - f_n
        f_1 = (y_1 - base2) / dh
        est = ERR_C * h * (f_n / GAMMA - f_g / (GAMMA * (1.0 - GAMMA)) + f_1 / (1.0 - GAMMA))
        err_vec = lu2.solve(est)
        err = _rms(err_vec / (cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_1))))
        if replay is None and (not np.isfinite(err) or err > 1.0):
            stats["rejected"] += 1
            fac = 0.2 if not np.isfinite(err) else max(0.2, 0.9 * err ** (-1.0 / 3.0))
            h *= fac
            rejected_last = True
            continue

        if with_sens:
            Fp_g = param_jac(t_g, y_g)
            S_g = lu2.solve(S + dh * (Sdot + Fp_g))
            J_1 = jac(t_1, y_1)
            stats["jac"] += 1
            Fp_1 = param_jac(t_1, y_1)
            lu3 = _LU(J_1, dh)
            stats["lu"] += 1
            S = lu3.solve(S + W1 * (S_g - S) + dh * Fp_1)
            Sdot = _matmul(J_1, S) + Fp_1
            J = J_1
            J_fresh = True
        else:
            J_fresh = False
            if slow1 or slow2:
                J = jac(t_1, y_1)
                stats["jac"] += 1
                J_fresh = True
                lu = None

        stats["steps"] += 1
        t, y, f_n = t_1, y_1, f_1
        if replay is not None:
            mi += 1
        # PI step-size controller; no growth right after a rejection
        e = max(err, 1e-10)
        fac = 0.9 * e ** (-0.7 / 3.0)
        if err_prev is not None:
            fac *= err_prev ** (0.4 / 3.0)
        fac = min(5.0, max(0.2, fac))
        if rejected_last:
            fac = min(fac, 1.0)
        err_prev = e
        rejected_last = False
        h_new = h * fac
        if clipped:
            t = target
            if is_out[ti]:
                record(target)
            ti += 1
            h_new = max(h_new, h_free)
        accepted.append(t)
        h = h_new

    traj = Trajectory(np.array(ts), np.array(ys).reshape(len(ts), n),
                      np.array(ss) if with_sens else None, stats, np.array(accepted))
    return traj


def integrate_fixed(rhs: Callable, jac: Callable, y0, t0: float, tf: float, n_steps: int,
                    method: str = "trbdf2", newton_tol: float = 1e-12, max_newton: int = 50):
    """Fixed-step integration (``"trbdf2"`` or ``"euler"`` = implicit Euler).

    Returns the times and states at every step. Newton is run to an absolute
    tolerance ``newton_tol`` with a fresh Jacobian at every stage.
    """
    if method not in ("trbdf2", "euler"):
        raise ValueError(f"unknown method {method!r}")
    h = (tf - t0) / n_steps
    y = np.array(y0, dtype=float)
    ts = t0 + h * np.arange(n_steps + 1)
    out = np.empty((n_steps + 1, y.size))
    out[0] = y

    def solve(G, u, t_eval, coef):
        for _ in range(max_newton):
            J = jac(t_eval, u)
            J = J.toarray() if sp.issparse(J) else np.asarray(J)
            du = np.linalg.solve(np.eye(u.size) - coef * J, -G(u))
            u = u + du
            if np.max(np.abs(du), initial=0.0) <= newton_tol:
                return u
        raise IntegrationError("Newton did not converge in fixed-step mode", t_eval)

    for k in range(n_steps):
        t = ts[k]
        if method == "euler":
            y = solve(lambda u: u - y - h * rhs(t + h, u), y, t + h, h)
        else:
            dh = D * h
            f_n = rhs(t, y)
            b1 = y + dh * f_n
            y_g = solve(lambda u: u - b1 - dh * rhs(t + GAMMA * h, u), y, t + GAMMA * h, dh)
            b2 = y + W1 * (y_g - y)
            y = solve(lambda u: u - b2 - dh * rhs(t + h, u), y_g, t + h, dh)
        out[k + 1] = y
    return ts, out


@dataclass
class OrderEstimate:
    steps: tuple
    errors: tuple

    @property
    def orders(self) -> tuple:
        e = self.errors
        return tuple(math.log2(e[i] / e[i + 1]) if e[i] > 0 and e[i + 1] > 0 else math.nan
                     for i in range(len(e) - 1))

    @property
    def order(self) -> float:
        return self.orders[-1]


def convergence_order(rhs, jac, y0, exact: Callable, t_span, dt: float,
                      method: str = "trbdf2") -> OrderEstimate:
    """Observed order from fixed-step runs at ``dt``, ``dt/2``, ``dt/4``.

    ``exact(t)`` returns the true solution; the error is the max-norm
    deviation at the final time.
    """
    t0, tf = t_span
    n0 = int(round((tf - t0) / dt))
    errs, steps = [], []
    for k in range(3):
        n = n0 * 2 ** k
        ts, ys = integrate_fixed(rhs, jac, y0, t0, tf, n, method)
        errs.append(float(np.max(np.abs(ys[-1] - np.asarray(exact(tf))))))
        steps.append((tf - t0) / n)
    return OrderEstimate(tuple(steps), tuple(errs))
