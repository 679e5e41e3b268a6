"""Single-shooting least-squares estimation of model, kernel and initial state.

The decision vector is ``theta = [p; c_0..c_M; a; x0]``. For each trial
``theta`` the augmented LCT system is integrated together with its forward
sensitivities, giving the objective

    psi(theta) = scale * 0.5 * sum_k |y_k - g(x(t_k), p)|^2

and its exact gradient. The feasible set is a box intersected with the
simplex ``sum(c) = 1``; :func:`solve` runs a projected quasi-Newton method on
it.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .ivp import IntegrationError, IntegratorConfig, Trajectory
from .kernels import ErlangMixture, PointDelay
from .lct import AugmentedSystem
from .model import DelayModel, MeasurementSeries, ThetaLayout
from .sensitivities import measurement_sensitivity, objective_gradient, simulate_augmented

__all__ = [
    "Bounds",
    "EstimationProblem",
    "EstimationResult",
    "ObjectiveValue",
    "objective",
    "project_feasible",
    "project_simplex_box",
    "solve",
    "kernel_error_report",
]

log = logging.getLogger(__name__)


@dataclass
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def build(cls, layout: ThetaLayout, p_min, p_max, a_min, a_max=np.inf,
              x_min=-np.inf, x_max=np.inf, c_min=0.0, c_max=np.inf) -> "Bounds":
        lo = np.empty(layout.size)
        hi = np.empty(layout.size)
        lo[layout.p], hi[layout.p] = p_min, p_max
        lo[layout.c], hi[layout.c] = c_min, c_max
        lo[layout.a], hi[layout.a] = a_min, a_max
        lo[layout.x0], hi[layout.x0] = x_min, x_max
        return cls(lo, hi)


@dataclass
class EstimationProblem:
    model: DelayModel
    M: int
    data: MeasurementSeries
    bounds: Bounds
    theta0: np.ndarray
    scale: float = 1.0
    opt_tol: float = 1e-3
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    max_iter: int = 500
    memory: int = 10
    hessian: str = "bfgs"

    def __post_init__(self):
        self.system = AugmentedSystem(self.model, self.M)
        self.layout = self.system.layout
        n = self.layout.size
        self.theta0 = np.asarray(self.theta0, dtype=float)
        for name, v in (("theta0", self.theta0), ("lower", self.bounds.lower), ("upper", self.bounds.upper)):
            if np.size(v) != n:
                raise ValueError(f"{name} has length {np.size(v)}, layout expects {n}")
        if self.hessian not in ("bfgs", "gauss-newton"):
            raise ValueError(f"unknown hessian model {self.hessian!r}")
        if self.data.n_y != self.model.n_y:
            raise ValueError(f"data has {self.data.n_y} channels, model measures {self.model.n_y}")


@dataclass
class ObjectiveValue:
    psi: float
    residuals: Optional[np.ndarray]
    trajectory: Optional[Trajectory]
    grad: Optional[np.ndarray] = None
    ok: bool = True
    message: str = ""
    sy: Optional[np.ndarray] = None


def objective(problem: EstimationProblem, theta, gradient: bool = True, mesh=None) -> ObjectiveValue:
    """Integrate at ``theta`` and return the scaled least-squares objective.

    Failed integrations come back as ``psi = inf`` with ``ok = False``.
    ``mesh`` fixes the integrator's step sequence (for finite-difference checks).
    """
    theta = np.asarray(theta, dtype=float)
    sys, L, m = problem.system, problem.layout, problem.model
    data = problem.data
    try:
        traj = simulate_augmented(sys, theta, data.times, problem.integrator,
                                  sensitivities=gradient, mesh=mesh)
        p = theta[L.p]
        xs = traj.y[:, :sys.n_x]
        yhat = np.array([m.g(t, x, p) for t, x in zip(traj.t, xs)])
    except (IntegrationError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return ObjectiveValue(math.inf, None, None, None, False, str(exc))
    res = data.values - yhat
    psi = problem.scale * 0.5 * float(np.sum(res * res))
    if not np.isfinite(psi):
        return ObjectiveValue(math.inf, None, None, None, False, "non-finite objective")
    grad = None
    if gradient:
        Sy = np.array([measurement_sensitivity(m, t, x, S[:sys.n_x], theta, L)
                       for t, x, S in zip(traj.t, xs, traj.sens)])
        grad = objective_gradient(res, Sy, problem.scale)
        return ObjectiveValue(psi, res, traj, grad, sy=Sy)
    return ObjectiveValue(psi, res, traj, grad)


def project_simplex_box(v, lower, upper, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{lower <= c <= upper, sum(c) = total}``.

    The multiplier ``lam`` with ``sum(clip(v - lam, lower, upper)) = total``
    is bracketed by bisection over the sorted breakpoints of this piecewise
    linear function, then solved exactly on the final segment.
    """
    v = np.asarray(v, dtype=float)
    lo = np.asarray(np.broadcast_to(lower, v.shape), dtype=float)
    hi = np.asarray(np.broadcast_to(upper, v.shape), dtype=float)
    if lo.sum() > total + 1e-12 or hi.sum() < total - 1e-12:
        raise ValueError("infeasible simplex bounds")

    def phi(lam):
        return np.clip(v - lam, lo, hi).sum()

    bps = np.concatenate([v - hi, v - lo])
    bps = np.unique(bps[np.isfinite(bps)])
    # phi is non-increasing in lam; bracket the root between breakpoints
    if phi(bps[0]) < total:
        probe = bps[0] - 1.0
    elif phi(bps[-1]) > total:
        probe = bps[-1] + 1.0
    else:
        i_lo, i_hi = 0, bps.size - 1
        while i_hi - i_lo > 1:
            mid = (i_lo + i_hi) // 2
            if phi(bps[mid]) >= total:
                i_lo = mid
            else:
                i_hi = mid
        probe = 0.5 * (bps[i_lo] + bps[i_hi])
    # the active set is constant inside the bracket, so solve for lam exactly
    w = v - probe
    free = (w > lo) & (w < hi)
    if not np.any(free):
        return np.clip(w, lo, hi)
    fixed = np.where(w <= lo, lo, hi)
    lam = (v[free].sum() + fixed[~free].sum() - total) / free.sum()
    return np.clip(v - lam, lo, hi)


def project_feasible(theta, bounds: Bounds, layout: ThetaLayout) -> np.ndarray:
    """Clamp to the box and project the ``c`` block onto the bounded simplex."""
    theta = np.asarray(theta, dtype=float)
    out = np.clip(theta, bounds.lower, bounds.upper)
    c = layout.c
    out[c] = project_simplex_box(theta[c], np.maximum(bounds.lower[c], 0.0), bounds.upper[c])
    return out


@dataclass
class EstimationResult:
    theta: np.ndarray
    layout: ThetaLayout
    psi: float
    pg_norm: float
    iterations: int
    n_evals: int
    converged: bool
    message: str
    history: list
    trajectory: Optional[Trajectory] = None
    elapsed: float = 0.0

    @property
    def p(self) -> np.ndarray:
        return self.theta[self.layout.p]

    @property
    def x0(self) -> np.ndarray:
        return self.theta[self.layout.x0]

    @property
    def mixture(self) -> ErlangMixture:
        return ErlangMixture.from_q(self.theta[self.layout.q])

    def summary(self) -> dict:
        return {
            "M": self.layout.M,
            "theta": self.theta.tolist(),
            "p": self.p.tolist(),
            "a": float(self.theta[self.layout.a]),
            "c": self.theta[self.layout.c].tolist(),
            "x0": self.x0.tolist(),
            "tau_hat": self.mixture.mean(),
            "psi": self.psi,
            "pg_norm": self.pg_norm,
            "iterations": self.iterations,
            "n_evals": self.n_evals,
            "converged": self.converged,
            "message": self.message,
            "elapsed_s": self.elapsed,
        }


def _pg_norm(theta, g, bounds, layout):
    return float(np.max(np.abs(project_feasible(theta - g, bounds, layout) - theta)))


def _bfgs_matrix(n, pairs, sigma):
    B = sigma * np.eye(n)
    for s, y in pairs:
        Bs = B @ s
        B += np.outer(y, y) / (y @ s) - np.outer(Bs, Bs) / (s @ Bs)
    return B


def _gauss_newton_matrix(Sy, scale):
    """``scale * sum_k Sy_k' Sy_k`` with a tiny diagonal shift for solvability."""
    J = Sy.reshape(-1, Sy.shape[-1])
    H = scale * (J.T @ J)
    d = np.diag(H)
    return H + np.diag(1e-10 * np.maximum(d, np.max(d, initial=0.0) * 1e-8) + 1e-300)


def _solve_subproblem(theta, g, B, bounds, layout, max_iter=None):
    """Minimize ``g.s + 0.5 s'Bs`` over ``theta + s`` feasible by a primal active-set method.

    ``theta`` must be feasible. Variables held at a bound form the working
    set; the free ones solve an equality-constrained KKT system (``sum(c)``
    stays fixed). Blocking bounds are added, bounds with a wrong-signed
    multiplier are released one at a time.
    """
    n = theta.size
    lo, hi = bounds.lower, bounds.upper
    lo_c = lo.copy()
    lo_c[layout.c] = np.maximum(lo[layout.c], 0.0)
    w = layout.w
    x = theta.copy()
    span = np.maximum(1.0, np.abs(theta))
    at_lo = x <= lo_c + 1e-14 * span
    at_hi = (x >= hi - 1e-14 * span) & ~at_lo
    max_iter = 10 * n + 20 if max_iter is None else max_iter
    for _ in range(max_iter):
        q = g + B @ (x - theta)
        free = ~(at_lo | at_hi)
        F = np.flatnonzero(free)
        wF = w[F]
        has_eq = bool(wF.any())
        k = F.size + int(has_eq)
        K = np.zeros((k, k))
        K[:F.size, :F.size] = B[np.ix_(F, F)]
        rhs = np.zeros(k)
        rhs[:F.size] = -q[F]
        if has_eq:
            K[:F.size, -1] = wF
            K[-1, :F.size] = wF
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        p = np.zeros(n)
        p[F] = sol[:F.size]
        nu = float(sol[-1]) if has_eq else 0.0
        if np.max(np.abs(p), initial=0.0) <= 1e-15 * np.max(span):
            mu = q + nu * w
            viol = np.where(at_lo, -mu, 0.0) + np.where(at_hi, mu, 0.0)
            j = int(np.argmax(viol))
            if viol[j] <= 1e-14 * max(1.0, np.max(np.abs(q))):
                break
            at_lo[j] = at_hi[j] = False
            continue
        # ratio test against the inactive bounds
        alpha, block, to_lo = 1.0, -1, False
        neg, pos = (p < 0) & free, (p > 0) & free
        if neg.any():
            r = (lo_c[neg] - x[neg]) / p[neg]
            i = int(np.argmin(r))
            if r[i] < alpha:
                alpha, block, to_lo = max(r[i], 0.0), int(np.flatnonzero(neg)[i]), True
        if pos.any():
            r = (hi[pos] - x[pos]) / p[pos]
            i = int(np.argmin(r))
            if r[i] < alpha:
                alpha, block, to_lo = max(r[i], 0.0), int(np.flatnonzero(pos)[i]), False
        x = x + alpha * p
        if block >= 0:
            x[block] = lo_c[block] if to_lo else hi[block]
            (at_lo if to_lo else at_hi)[block] = True
    # guard against round-off drift off the feasible set
    return project_feasible(x, bounds, layout)


def solve(problem: EstimationProblem, callback: Callable | None = None,
          armijo: float = 1e-4, max_backtrack: int = 30,
          min_step: float = 1e-10) -> EstimationResult:
    """Projected limited-memory quasi-Newton descent.

    Each iteration builds the BFGS matrix from the last ``memory`` secant
    pairs, minimizes the quadratic model over the feasible set, and
    backtracks (Armijo) along the segment to that minimizer. Stops when the
    projected-gradient infinity norm is at most ``opt_tol``, or when
    backtracking shrinks the step below ``min_step * max(1, |theta|_inf)``
    without sufficient decrease ("line search failed").

    With ``problem.hessian == "gauss-newton"`` the model matrix is instead
    ``scale * sum_k Sy_k' Sy_k`` from the measurement sensitivities.
    """
    t_start = time.perf_counter()
    L, bounds = problem.layout, problem.bounds
    theta = project_feasible(problem.theta0, bounds, L)
    cur = objective(problem, theta)
    n_evals = 1
    if not cur.ok:
        raise RuntimeError(f"objective failed at the initial guess: {cur.message}")
    pairs: list = []
    history = []
    sigma = None
    converged, message = False, "iteration limit reached"
    it = 0
    pg = _pg_norm(theta, cur.grad, bounds, L)
    history.append(dict(iter=0, psi=cur.psi, pg_norm=pg, step=0.0, alpha=0.0, evals=n_evals))
    while True:
        if pg <= problem.opt_tol:
            converged, message = True, "projected gradient below tolerance"
            break
        if it >= problem.max_iter:
            break
        it += 1
        g = cur.grad
        if sigma is None:
            sigma = max(np.max(np.abs(g)) / (0.1 * max(1.0, np.max(np.abs(theta)))), 1e-12)
        if problem.hessian == "gauss-newton":
            B = _gauss_newton_matrix(cur.sy, problem.scale)
        else:
            B = _bfgs_matrix(L.size, pairs, sigma)
        target = _solve_subproblem(theta, g, B, bounds, L)
        d = target - theta
        slope = float(g @ d)
        if slope >= 0 and pairs:
            pairs.clear()
            B = _bfgs_matrix(L.size, pairs, sigma)
            target = _solve_subproblem(theta, g, B, bounds, L)
            d = target - theta
            slope = float(g @ d)
        alpha, new = 1.0, None
        # steps this small change psi by less than the integration error
        floor = min_step * max(1.0, float(np.max(np.abs(theta))))
        for _ in range(max_backtrack):
            trial = project_feasible(theta + alpha * d, bounds, L)
            if np.max(np.abs(trial - theta)) <= floor:
                break
            val = objective(problem, trial)
            n_evals += 1
            if val.ok and val.psi <= cur.psi + armijo * alpha * slope:
                new = (trial, val)
                break
            alpha *= 0.5
        if new is None:
            if pairs:
                pairs.clear()
                sigma = None
                it -= 1
                continue
            message = "line search failed"
            break
        trial, val = new
        s = trial - theta
        y = val.grad - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y))
            if len(pairs) > problem.memory:
                pairs.pop(0)
            sigma = float(y @ y) / sy
        theta, cur = trial, val
        pg = _pg_norm(theta, cur.grad, bounds, L)
        rec = dict(iter=it, psi=cur.psi, pg_norm=pg, step=float(np.max(np.abs(s))), alpha=alpha,
                   evals=n_evals)
        history.append(rec)
        log.debug("iter %d psi=%.6e pg=%.3e step=%.3e", it, cur.psi, pg, rec["step"])
        if callback is not None:
            callback(rec, theta)
        if rec["step"] == 0.0:
            message = "no progress"
            break
    return EstimationResult(theta, L, cur.psi, pg, it, n_evals, converged, message, history,
                            cur.trajectory, time.perf_counter() - t_start)


def kernel_error_report(estimated: ErlangMixture, true_kernel, grid) -> dict:
    """Absolute pdf errors on ``grid`` and the mean-delay error.

    For a :class:`PointDelay` only the mean error ``|tau_hat - tau|`` is
    reported (the pdf is a Dirac mass).
    """
    grid = np.asarray(grid, dtype=float)
    out = {"mean_estimated": estimated.mean(), "mean_true": float(true_kernel.mean())}
    out["mean_error"] = abs(out["mean_estimated"] - out["mean_true"])
    if not isinstance(true_kernel, PointDelay):
        err = np.abs(estimated.pdf(grid) - true_kernel.pdf(grid))
        out["max_abs_error"] = float(err.max())
        out["l2_error"] = float(np.sqrt(np.trapezoid(err ** 2, grid)))
    return out
