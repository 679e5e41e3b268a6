"""Delay kernels: folded-normal mixtures, point delays and mixed Erlang densities.

All kernels here are normalized memory functions on ``[0, inf)``. The mixed
Erlang family

    alpha_M(t) = sum_m c_m * b_m * t**m * exp(-a*t),   b_m = a**(m+1) / m!

is the one the linear chain trick can turn into ODEs; the other two are the
"true" kernels used to synthesize data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, gammainc, gammaln, xlogy

__all__ = [
    "ErlangMixture",
    "FoldedNormalMixture",
    "PointDelay",
    "erlang_pdf",
    "erlang_cdf",
    "mixture_pdf",
    "mixture_cdf",
    "mixture_mean",
    "tijms_weights",
    "cdf_of",
    "memory_horizon",
    "kernel_from_dict",
    "write_kernel_csv",
]

SUM_TOL = 1e-12


def _check_rate_time(a, t):
    if not a > 0:
        raise ValueError(f"rate must be positive, got {a}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    return t


def erlang_pdf(m, a, t):
    """Density of the Erlang distribution of order ``m + 1`` with rate ``a``.

    Evaluated in log space so that ``b_m = a**(m+1)/m!`` never overflows;
    orders in the hundreds are fine.

    Parameters
    ----------
    m : int or array of int
        Erlang index (``m = 0`` is the exponential density).
    a : float
        Rate, ``> 0``.
    t : float or ndarray
        Elapsed time(s), ``>= 0``. ``m`` and ``t`` broadcast.
    """
    t = _check_rate_time(a, t)
    m = np.asarray(m)
    if np.any(m < 0):
        raise ValueError("Erlang index must be >= 0")
    log_b = (m + 1) * math.log(a) - gammaln(m + 1)
    out = np.exp(log_b + xlogy(m, t) - a * t)
    return out if out.ndim else float(out)


def erlang_cdf(m, a, t):
    """CDF of the order ``m + 1`` Erlang distribution.

    Equal to ``1 - (1/a) * sum_{n<=m} erlang_pdf(n, a, t)``; evaluated as the
    regularized lower incomplete gamma function ``P(m + 1, a t)``, which avoids
    the cancellation in ``1 - sum`` near ``t = 0``.
    """
    t = _check_rate_time(a, t)
    if np.any(np.asarray(m) < 0):
        raise ValueError("Erlang index must be >= 0")
    out = np.clip(gammainc(np.asarray(m) + 1.0, a * t), 0.0, 1.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ErlangMixture:
    """Mixed Erlang kernel with common rate ``a`` and weights ``c[0..M]``.

    Weights must sum to one unless ``strict=False`` (raw, truncated weights).
    """

    a: float
    c: np.ndarray
    strict: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        c = np.array(self.c, dtype=float).ravel()
        if c.size == 0:
            raise ValueError("need at least one weight")
        if not self.a > 0:
            raise ValueError(f"rate must be positive, got {self.a}")
        if np.any(c < 0):
            raise ValueError("mixture weights must be non-negative")
        if self.strict and abs(c.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"mixture weights sum to {c.sum()!r}, expected 1")
        c.flags.writeable = False
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "a", float(self.a))

    @classmethod
    def normalized(cls, a, c):
        c = np.asarray(c, dtype=float)
        total = c.sum()
        if total <= 0:
            raise ValueError("weights sum to zero")
        return cls(a, c / total)

    @classmethod
    def from_q(cls, q):
        """Build from the estimator's ``q = [c_0, ..., c_M, a]`` block."""
        q = np.asarray(q, dtype=float)
        return cls(q[-1], np.maximum(q[:-1], 0.0))

    @property
    def M(self) -> int:
        return self.c.size - 1

    @property
    def q(self) -> np.ndarray:
        return np.append(self.c, self.a)

    def pdf(self, t):
        return mixture_pdf(self, t)

    def cdf(self, t):
        return mixture_cdf(self, t)

    def mean(self) -> float:
        return mixture_mean(self)

    def scan_range(self):
        # mean + 12 standard deviations of the highest-order component
        hi = (self.M + 1 + 12.0 * math.sqrt(self.M + 1)) / self.a
        return 0.1 / self.a, hi + 10.0 / self.a

    def to_dict(self):
        return {"type": "erlang_mixture", "a": self.a, "c": self.c.tolist()}


def mixture_pdf(k: ErlangMixture, t):
    """``sum_m c_m * erlang_pdf(m, a, t)``."""
    t = _check_rate_time(k.a, t)
    m = np.arange(k.M + 1).reshape((-1,) + (1,) * t.ndim)
    c = k.c.reshape(m.shape)
    out = np.sum(c * erlang_pdf(m, k.a, t[None, ...]), axis=0)
    return out if out.ndim else float(out)


def mixture_cdf(k: ErlangMixture, t):
    """``sum_m c_m * erlang_cdf(m, a, t)``."""
    t = _check_rate_time(k.a, t)
    m = np.arange(k.M + 1).reshape((-1,) + (1,) * t.ndim)
    c = k.c.reshape(m.shape)
    out = np.clip(np.sum(c * gammainc(m + 1.0, k.a * t[None, ...]), axis=0), 0.0, 1.0)
    return out if out.ndim else float(out)


def mixture_mean(k: ErlangMixture) -> float:
    """Mean delay ``(1/a) * sum_m c_m (m + 1)``."""
    return float(np.dot(k.c, np.arange(1, k.M + 2)) / k.a)


def tijms_weights(beta: Callable[[np.ndarray], np.ndarray], dt: float, M: int,
                  renormalize: bool = True) -> ErlangMixture:
    """Erlang mixture with ``a = 1/dt`` and ``c_m = beta((m+1) dt) - beta(m dt)``.

    ``beta`` is the cumulative kernel. The raw increments only add up to
    ``beta((M+1) dt)``; by default they are rescaled to sum to one.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if M < 0:
        raise ValueError("M must be >= 0")
    grid = dt * np.arange(M + 2)
    b = np.asarray(beta(grid), dtype=float)
    c = np.diff(b)
    if np.any(c < -1e-14):
        raise ValueError("cumulative kernel is decreasing on the sampled grid")
    c = np.maximum(c, 0.0)
    if renormalize:
        return ErlangMixture.normalized(1.0 / dt, c)
    return ErlangMixture(1.0 / dt, c, strict=False)


def _folded_normal_pdf(t, mu, sigma):
    return (np.exp(-0.5 * ((t - mu) / sigma) ** 2)
            + np.exp(-0.5 * ((t + mu) / sigma) ** 2)) / (math.sqrt(2 * math.pi) * sigma)


def _folded_normal_cdf(t, mu, sigma):
    s = sigma * math.sqrt(2.0)
    return 0.5 * (erf((t - mu) / s) + erf((t + mu) / s))


@dataclass(frozen=True)
class FoldedNormalMixture:
    """Convex combination of folded normal densities.

    ``terms`` is a sequence of ``(weight, location, scale)`` triples.
    """

    terms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        terms = tuple((float(g), float(mu), float(s)) for g, mu, s in self.terms)
        if not terms:
            raise ValueError("need at least one term")
        w = np.array([g for g, _, _ in terms])
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        if any(s <= 0 for _, _, s in terms):
            raise ValueError("scales must be positive")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def from_arrays(cls, weights: Sequence[float], mu: Sequence[float], sigma: Sequence[float]):
        return cls(tuple(zip(weights, mu, sigma)))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        out = sum(g * _folded_normal_pdf(t, mu, s) for g, mu, s in self.terms)
        return out if np.ndim(out) else float(out)

    def cdf(self, t):
        return cdf_of(self, t)

    def mean(self) -> float:
        total = 0.0
        for g, mu, s in self.terms:
            m = (s * math.sqrt(2 / math.pi) * math.exp(-mu * mu / (2 * s * s))
                 + mu * math.erf(mu / (s * math.sqrt(2))))
            total += g * m
        return total

    def scan_range(self):
        s_min = min(s for _, _, s in self.terms)
        hi = max(abs(mu) for _, mu, _ in self.terms) + 12.0 * max(s for _, _, s in self.terms)
        return s_min / 10.0, hi

    def to_dict(self):
        return {"type": "folded_normal",
                "terms": [list(term) for term in self.terms]}


def cdf_of(kernel: FoldedNormalMixture, t):
    """Closed-form CDF of a folded-normal mixture (error functions)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    out = sum(g * _folded_normal_cdf(t, mu, s) for g, mu, s in kernel.terms)
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PointDelay:
    """Absolute delay ``z(t) = r(t - tau)`` (a Dirac kernel)."""

    tau: float

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError("tau must be >= 0")

    def mean(self) -> float:
        return self.tau

    def cdf(self, t):
        return np.where(np.asarray(t) >= self.tau, 1.0, 0.0)

    def to_dict(self):
        return {"type": "point", "tau": self.tau}


def kernel_from_dict(d: dict):
    kind = d["type"]
    if kind == "folded_normal":
        return FoldedNormalMixture(tuple(tuple(x) for x in d["terms"]))
    if kind == "point":
        return PointDelay(float(d["tau"]))
    if kind == "erlang_mixture":
        return ErlangMixture(float(d["a"]), np.asarray(d["c"], dtype=float))
    raise ValueError(f"unknown kernel type {kind!r}")


def memory_horizon(kernel, eps: float) -> float:
    """Smallest scanned time after which the kernel density stays below ``eps``.

    The density is scanned on a uniform grid (step: one tenth of the smallest
    scale for folded normals) and the returned horizon is the first grid
    point past the last sample with ``pdf >= eps``. The tail beyond it must
    be monotonically decreasing on the scanned range.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    step, hi = kernel.scan_range()
    n = int(math.ceil(hi / step)) + 1
    grid = step * np.arange(n + 1)
    vals = kernel.pdf(grid)
    if vals[-1] >= eps:
        raise ValueError(f"density still >= {eps} at t={grid[-1]:.6g}; eps too small for the scan range")
    above = np.nonzero(vals >= eps)[0]
    if above.size == 0:
        return float(grid[1])
    idx = above[-1] + 1
    if np.any(np.diff(vals[idx:]) > 0):
        raise ValueError("kernel tail is not monotonically decreasing past the horizon")
    return float(grid[idx])


def write_kernel_csv(path, kernel, grid) -> None:
    """Two-column ``t,pdf`` CSV of ``kernel`` on ``grid`` (17 significant digits)."""
    import csv

    grid = np.asarray(grid, dtype=float)
    vals = np.asarray(kernel.pdf(grid), dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["t", "pdf"])
        for t, v in zip(grid, vals):
            w.writerow([format(t, ".17g"), format(v, ".17g")])
