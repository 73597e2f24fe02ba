"""Closed-form reference solutions.

* Lognormal assets: S0 = (kappa/2) mu^T C^{-1} mu (T - t), all corrections vanish.
* Ornstein-Uhlenbeck assets: the characteristics solve a linear system
  ``d/ds (x; p) = A (x; p) + m``; S0 is a quadratic in x obtained by
  integrating the action along the affine characteristic.
* CARA utility (kappa = -1): positions are frozen, giving polynomial-in-time
  expressions for S0, S1, S2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy import integrate

from .errors import NotPositiveDefinite, SingularA
from .leapfrog import PhasePoint
from .model import ModelSpec, _cholesky

__all__ = [
    "lognormal_s0",
    "lognormal_policy",
    "OUOracle",
    "cara_closed_forms",
]


def lognormal_s0(mu, C, kappa: float, t: float, T: float) -> float:
    mu = np.asarray(mu, dtype=float)
    chol = _cholesky(np.atleast_2d(np.asarray(C, dtype=float)))
    return 0.5 * kappa * float(mu @ sla.cho_solve((chol, True), mu)) * (T - t)


def lognormal_policy(mu, C, ara: float, x) -> np.ndarray:
    """``phi_i = (C^{-1} mu)_i / (A_U x^i)``."""
    mu = np.asarray(mu, dtype=float)
    chol = _cholesky(np.atleast_2d(np.asarray(C, dtype=float)))
    return sla.cho_solve((chol, True), mu) / (ara * np.asarray(x, dtype=float))


@dataclass
class OUOracle:
    """Exact characteristics and value of the multivariate OU model."""

    Lambda: np.ndarray
    mu_bar: np.ndarray
    C: np.ndarray
    kappa: float

    def __post_init__(self):
        self.Lambda = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        if self.Lambda.shape[0] != self.Lambda.shape[1]:
            self.Lambda = np.diag(self.Lambda.ravel())
        self.mu_bar = np.asarray(self.mu_bar, dtype=float)
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        try:
            self._chol = np.linalg.cholesky(self.C)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("OU covariance is not positive definite") from exc
        n = self.n
        inv_mass = self.kappa + 1.0
        lam = self.Lambda
        self.K = lam @ sla.cho_solve((self._chol, True), lam)
        self.A = np.block([[-inv_mass * lam, inv_mass * self.C], [-self.kappa * self.K, inv_mass * lam]])
        self.m = np.concatenate([inv_mass * lam @ self.mu_bar, self.kappa * self.K @ self.mu_bar])
        # augmented generator of w = (x, p, 1)
        self.A_aug = np.zeros((2 * n + 1, 2 * n + 1))
        self.A_aug[: 2 * n, : 2 * n] = self.A
        self.A_aug[: 2 * n, 2 * n] = self.m
        # L(x, p) = w^T Qw w
        q = np.zeros((2 * n + 1, 2 * n + 1))
        half_k = 0.5 * self.kappa * self.K
        q[:n, :n] = -half_k
        q[:n, 2 * n] = q[2 * n, :n] = half_k @ self.mu_bar
        q[2 * n, 2 * n] = -float(self.mu_bar @ half_k @ self.mu_bar)
        q[n : 2 * n, n : 2 * n] = 0.5 * inv_mass * self.C
        self.Q_aug = q

    @classmethod
    def from_model(cls, model: ModelSpec, kappa: float) -> "OUOracle":
        if model.kind != "ou":
            raise ValueError("OU oracle needs a model built by ornstein_uhlenbeck()")
        par = model.params
        return cls(np.diag(par["lambda"]), par["mu_bar"], model.covariance(np.zeros(model.n)), kappa)

    @property
    def n(self) -> int:
        return self.mu_bar.size

    @property
    def A_invertible(self) -> bool:
        return np.linalg.cond(self.A) < 1e12

    # -- characteristics ----------------------------------------------------

    def _propagator(self, tau: float) -> np.ndarray:
        """``exp(-tau A_aug)``: maps the terminal ``(y, 0, 1)`` to the state a time ``tau`` earlier."""
        return sla.expm(-tau * self.A_aug)

    def characteristic(self, y, s: float, T: float, use_inverse: bool | None = None) -> PhasePoint:
        """Exact phase point at time ``s`` on the characteristic ending at ``(y, 0)``.

        With ``use_inverse`` the closed form ``e^{-(T-s)A}((y;0) + A^{-1}m) - A^{-1}m``
        is used (raises :class:`SingularA` when A is singular); otherwise, and
        by default when A is singular, the augmented exponential.
        """
        n = self.n
        y = np.asarray(y, dtype=float)
        tau = T - s
        if use_inverse is None:
            use_inverse = self.A_invertible
        if use_inverse:
            if not self.A_invertible:
                raise SingularA("OU system matrix is singular")
            shift = np.linalg.solve(self.A, self.m)
            z = sla.expm(-tau * self.A) @ (np.concatenate([y, np.zeros(n)]) + shift) - shift
        else:
            z = (self._propagator(tau) @ np.concatenate([y, np.zeros(n), [1.0]]))[: 2 * n]
        return PhasePoint(z[:n], z[n:])

    def _affine_flow(self, t: float, T: float):
        n = self.n
        e = self._propagator(T - t)
        # x = Ex y + cx,  p = Ep y + cp
        return e[:n, :n], e[:n, 2 * n], e[n : 2 * n, :n], e[n : 2 * n, 2 * n]

    def inverse_flow(self, t: float, T: float, x) -> np.ndarray:
        ex, cx, _, _ = self._affine_flow(t, T)
        return np.linalg.solve(ex, np.asarray(x, dtype=float) - cx)

    # -- value --------------------------------------------------------------

    def _action_gram(self, tau: float) -> np.ndarray:
        """``int_0^tau exp(-u A_aug)^T Q exp(-u A_aug) du`` by Van Loan's block exponential."""
        d = 2 * self.n + 1
        b = -self.A_aug
        blk = np.zeros((2 * d, 2 * d))
        blk[:d, :d] = -b.T
        blk[:d, d:] = self.Q_aug
        blk[d:, d:] = b
        e = sla.expm(tau * blk)
        gram = e[d:, d:].T @ e[:d, d:]
        return 0.5 * (gram + gram.T)

    def s0(self, t: float, T: float, x) -> float:
        if t == T:
            return 0.0
        y = self.inverse_flow(t, T, x)
        w = np.concatenate([y, np.zeros(self.n), [1.0]])
        return -float(w @ self._action_gram(T - t) @ w)

    def grad_s0(self, t: float, T: float, x) -> np.ndarray:
        """``p(t) = Psi_t(Phi_t^{-1}(x))``."""
        if t == T:
            return np.zeros(self.n)
        y = self.inverse_flow(t, T, x)
        _, _, ep, cp = self._affine_flow(t, T)
        return ep @ y + cp

    def hessian_s0(self, s: float, T: float) -> np.ndarray:
        """``grad_x p(s, .)``, constant in x."""
        if s == T:
            return np.zeros((self.n, self.n))
        ex, _, ep, _ = self._affine_flow(s, T)
        return np.linalg.solve(ex.T, ep.T).T

    def s1(self, t: float, T: float) -> float:
        """``1/2 int_t^T tr(C grad p(s)) ds`` by adaptive quadrature."""
        val, _ = integrate.quad(
            lambda s: 0.5 * float(np.trace(self.C @ self.hessian_s0(s, T))), t, T, epsabs=1e-13, epsrel=1e-12
        )
        return val

    def policy(self, t: float, T: float, x, ara: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        myopic = sla.cho_solve((self._chol, True), self.Lambda @ (self.mu_bar - x))
        return (myopic + self.grad_s0(t, T, x)) / ara


def _trace_c_hessian_op(model: ModelSpec, kappa: float, c: np.ndarray, x: np.ndarray) -> float:
    return float(np.sum(c * model.potential_hessian(x, kappa)))


def cara_closed_forms(model: ModelSpec, t: float, T: float, x, fd_step: float = 1e-3) -> dict[str, float]:
    """S0, S1, S2 for CARA utility at ``(t, x)``.

    ``S2`` applies ``tr(C(x) Hess)`` twice to V with C frozen at x; the outer
    application is a central second difference of the inner one.
    """
    kappa = -1.0
    x = model.check_domain(np.array(x, dtype=float))
    tau = T - t
    c = model.covariance(x)
    v = model.potential(x, kappa)
    tr1 = _trace_c_hessian_op(model, kappa, c, x)
    n = x.size
    hess_g = np.empty((n, n))
    g0 = tr1
    steps = fd_step * (1.0 + np.abs(x))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = steps[i]
            ej[j] = steps[j]
            if i == j:
                val = (
                    _trace_c_hessian_op(model, kappa, c, x + ei) - 2 * g0 + _trace_c_hessian_op(model, kappa, c, x - ei)
                ) / steps[i] ** 2
            else:
                val = (
                    _trace_c_hessian_op(model, kappa, c, x + ei + ej)
                    - _trace_c_hessian_op(model, kappa, c, x + ei - ej)
                    - _trace_c_hessian_op(model, kappa, c, x - ei + ej)
                    + _trace_c_hessian_op(model, kappa, c, x - ei - ej)
                ) / (4 * steps[i] * steps[j])
            hess_g[i, j] = hess_g[j, i] = val
    tr2 = float(np.sum(c * hess_g))
    return {
        "S0": v * tau,
        "S1": 0.25 * tr1 * tau**2,
        "S2": tr2 * tau**3 / 24.0,
    }
