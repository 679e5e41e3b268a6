"""Linear chain trick: mixed Erlang delay -> augmented ODE system.

With ``zhat_m = int alpha_m(t - s) r(s) ds`` the Erlang derivative identities
give the chain

    d zhat_0/dt = a (r - zhat_0),    d zhat_m/dt = a (zhat_{m-1} - zhat_m),

and ``z = sum_m c_m zhat_m``. The augmented state is ``[x | zhat_0 | ... | zhat_M]``
so that ``dZ/dt = A Z + B r`` and ``z = C Z`` with block-bidiagonal ``A``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .kernels import ErlangMixture
from .model import DelayModel, ThetaLayout

__all__ = ["AugmentedSystem", "build_matrices", "steady_state_Z0"]


def build_matrices(q, n_z: int):
    """Sparse ``(A, B, C)`` for ``q = [c_0, ..., c_M, a]``."""
    q = np.asarray(q, dtype=float)
    c, a = q[:-1], q[-1]
    if not a > 0:
        raise ValueError(f"rate must be positive, got {a}")
    M1 = c.size
    I = sp.identity(n_z, format="csr")
    chain = sp.diags([-np.ones(M1), np.ones(M1 - 1)], [0, -1], shape=(M1, M1)) if M1 > 1 \
        else sp.diags([-np.ones(1)], [0], shape=(1, 1))
    A = (a * sp.kron(chain, I)).tocsr()
    e0 = sp.csr_matrix(([1.0], ([0], [0])), shape=(M1, 1))
    B = (a * sp.kron(e0, I)).tocsr()
    C = sp.kron(sp.csr_matrix(c[None, :]), I).tocsr()
    return A, B, C


def steady_state_Z0(model: DelayModel, x0, p, M: int, t0: float = 0.0) -> np.ndarray:
    """Chain states consistent with ``x = x0`` on ``(-inf, t0]``: every block is ``h(x0, p)``."""
    r0 = np.asarray(model.h(t0, np.asarray(x0, dtype=float), np.asarray(p, dtype=float)))
    return np.tile(r0, M + 1)


class AugmentedSystem:
    """ODE system for ``(xhat, Zhat)`` given a model and the Erlang order ``M``.

    The chain rate and weights are read from ``theta`` at each call, so one
    instance serves the whole optimization.
    """

    def __init__(self, model: DelayModel, M: int):
        if M < 0:
            raise ValueError("M must be >= 0")
        self.model = model
        self.M = M
        self.layout: ThetaLayout = model.layout(M)
        self.n_x = model.n_x
        self.n_z = model.n_z
        self.n = model.n_x + (M + 1) * model.n_z

    @classmethod
    def from_mixture(cls, model: DelayModel, mixture: ErlangMixture, p, x0):
        """System plus the matching ``theta`` for a fixed kernel."""
        sys = cls(model, mixture.M)
        theta = np.concatenate([np.atleast_1d(p), mixture.q, np.atleast_1d(x0)])
        return sys, theta

    def split(self, theta):
        L = self.layout
        return theta[L.p], theta[L.c], theta[L.a], theta[L.x0]

    def matrices(self, theta):
        return build_matrices(np.asarray(theta)[self.layout.q], self.n_z)

    def initial_state(self, theta, t0: float = 0.0) -> np.ndarray:
        p, _, _, x0 = self.split(np.asarray(theta, dtype=float))
        return np.concatenate([x0, steady_state_Z0(self.model, x0, p, self.M, t0)])

    def unpack_state(self, y):
        y = np.asarray(y)
        return y[..., :self.n_x], y[..., self.n_x:].reshape(y.shape[:-1] + (self.M + 1, self.n_z))

    def zhat(self, theta, y):
        """Delayed quantity ``z = C Z`` (works on a stacked trajectory too)."""
        _, c, _, _ = self.split(np.asarray(theta))
        _, Z = self.unpack_state(y)
        return np.einsum("m,...mj->...j", c, Z)

    def rhs(self, t, y, theta):
        m = self.model
        p, c, a, _ = self.split(theta)
        x = y[:self.n_x]
        Z = y[self.n_x:].reshape(self.M + 1, self.n_z)
        z = c @ Z
        r = m.h(t, x, p)
        dZ = np.empty_like(Z)
        dZ[0] = a * (r - Z[0])
        dZ[1:] = a * (Z[:-1] - Z[1:])
        return np.concatenate([m.f(t, x, z, p), dZ.ravel()])

    def jacobian_dense(self, t, y, theta):
        m = self.model
        p, c, a, _ = self.split(theta)
        nx, nz, M1 = self.n_x, self.n_z, self.M + 1
        x = y[:nx]
        Z = y[nx:].reshape(M1, nz)
        z = c @ Z
        J = np.zeros((self.n, self.n))
        J[:nx, :nx] = m.f_x(t, x, z, p)
        fz = m.f_z(t, x, z, p)
        J[:nx, nx:] = np.kron(c[None, :], fz)
        J[nx:nx + nz, :nx] = a * m.h_x(t, x, p)
        idx = np.arange(nx, self.n)
        J[idx, idx] = -a
        J[idx[nz:], idx[:-nz]] = a
        return J

    def jacobian(self, t, y, theta):
        """Analytic Jacobian of :meth:`rhs` as a CSC matrix."""
        m = self.model
        p, c, a, _ = self.split(theta)
        nx, nz, M1 = self.n_x, self.n_z, self.M + 1
        x = y[:nx]
        Z = y[nx:].reshape(M1, nz)
        z = c @ Z
        fx = sp.coo_matrix(m.f_x(t, x, z, p))
        top = sp.kron(sp.csr_matrix(c[None, :]), sp.csr_matrix(m.f_z(t, x, z, p)))
        hx = sp.csr_matrix(a * m.h_x(t, x, p))
        A, _, _ = build_matrices(np.append(c, a), nz)
        left = sp.vstack([hx, sp.csr_matrix((nz * (M1 - 1), nx))])
        return sp.bmat([[fx, top], [left, A]], format="csc")

    def param_jacobian(self, t, y, theta):
        """Explicit derivative of :meth:`rhs` with respect to ``theta`` (n x n_theta).

        Columns for ``c_m`` carry ``f_z zhat_m``; the ``a`` column is
        ``(A Z + B r) / a`` because ``A`` and ``B`` are linear in ``a``;
        ``x0`` columns are zero.
        """
        m = self.model
        L = self.layout
        p, c, a, _ = self.split(theta)
        nx, nz = self.n_x, self.n_z
        x = y[:nx]
        Z = y[nx:].reshape(self.M + 1, nz)
        z = c @ Z
        r = m.h(t, x, p)
        F = np.zeros((self.n, L.size))
        F[:nx, L.p] = m.f_p(t, x, z, p)
        F[nx:nx + nz, L.p] = a * m.h_p(t, x, p)
        F[:nx, L.c] = m.f_z(t, x, z, p) @ Z.T
        dZ = np.empty_like(Z)
        dZ[0] = r - Z[0]
        dZ[1:] = Z[:-1] - Z[1:]
        F[nx:, L.a] = dZ.ravel()
        return F
