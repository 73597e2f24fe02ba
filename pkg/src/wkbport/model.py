"""Controlled price diffusions ``dX = a(X) dt + b(X) dZ``.

A model supplies the drift ``a``, the diffusion ``b`` (n x p), the covariance
``C = b b^T`` and the first derivatives of ``a`` and ``C``.  From these it
derives the potential ``V(x) = (kappa/2) a^T C^{-1} a`` and its gradient and
Hessian, which drive the characteristic system.

Two concrete families are provided: :class:`DiffusionModel` wraps arbitrary
callables, :class:`SeparableModel` covers per-asset drift/volatility functions
tied together by a constant correlation matrix (lognormal and OU are built on
it).
"""

from __future__ import annotations

from typing import Any, Callable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, NotPositiveDefinite, OutOfDomain
from .utility import UtilitySpec

__all__ = [
    "ModelSpec",
    "DiffusionModel",
    "SeparableModel",
    "lognormal",
    "ornstein_uhlenbeck",
    "model_from_config",
    "covariance",
    "potential",
    "potential_gradient",
    "potential_hessian",
]

ArrayFn = Callable[[np.ndarray], np.ndarray]

FD_REL_STEP = 1e-5


def _cholesky(mat: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc
    piv = np.abs(np.diagonal(chol, axis1=-2, axis2=-1))
    if not np.all(piv > 1e-7 * max(piv.max(initial=0.0), 1e-300)):
        raise NotPositiveDefinite("matrix is numerically singular (Cholesky pivot ratio below 1e-7)")
    return chol


class ModelSpec:
    """Base class for models.

    Subclasses must implement :meth:`drift`, :meth:`drift_jacobian`,
    :meth:`diffusion` and :meth:`covariance_derivatives`.  Everything else has
    a generic implementation that subclasses may specialize for speed.
    """

    kind: str = "custom"

    def __init__(self, n: int, lower=None, upper=None):
        if n < 1:
            raise ValueError("model needs at least one asset")
        self.n = int(n)
        self.lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, float).reshape(n)
        self.upper = np.full(n, np.inf) if upper is None else np.asarray(upper, float).reshape(n)
        self.params: dict[str, Any] = {}

    # -- domain -------------------------------------------------------------

    def in_domain(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.isfinite(x)) and np.all(x > self.lower) and np.all(x < self.upper))

    def check_domain(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected a state of shape ({self.n},), got {x.shape}")
        if not self.in_domain(x):
            raise OutOfDomain(f"state {x} outside the model domain")
        return x

    # -- primitives ---------------------------------------------------------

    def drift(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def drift_jacobian(self, x: np.ndarray) -> np.ndarray:
        """``J[i, j] = d a_i / d x_j``."""
        raise NotImplementedError

    def diffusion(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def covariance_derivatives(self, x: np.ndarray) -> np.ndarray:
        """Array ``dC`` of shape (n, n, n) with ``dC[i] = dC/dx^i``."""
        raise NotImplementedError

    def covariance(self, x: np.ndarray) -> np.ndarray:
        b = self.diffusion(x)
        c = b @ b.T
        return 0.5 * (c + c.T)

    def dC_dot(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        """``D[i, j] = (dC/dx^i @ p)_j``."""
        return self.covariance_derivatives(x) @ p

    def solve_covariance(self, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        chol = _cholesky(self.covariance(x))
        return sla.cho_solve((chol, True), rhs)

    def myopic_direction(self, x) -> np.ndarray:
        """``C(x)^{-1} a(x)``."""
        x = self.check_domain(x)
        return self.solve_covariance(x, self.drift(x))

    # -- potential ----------------------------------------------------------

    def potential(self, x, kappa: float) -> float:
        x = self.check_domain(x)
        a = self.drift(x)
        return 0.5 * kappa * float(a @ self.solve_covariance(x, a))

    def potential_gradient(self, x, kappa: float) -> np.ndarray:
        x = self.check_domain(x)
        a = self.drift(x)
        w = self.solve_covariance(x, a)
        return kappa * (self.drift_jacobian(x).T @ w) - 0.5 * kappa * (self.dC_dot(x, w) @ w)

    def potential_hessian(self, x, kappa: float) -> np.ndarray:
        """Central differences of the analytic gradient, step 1e-5 (1 + |x_i|)."""
        x = self.check_domain(x)
        hess = np.empty((self.n, self.n))
        for i in range(self.n):
            step = FD_REL_STEP * (1.0 + abs(x[i]))
            xp, xm = x.copy(), x.copy()
            xp[i] += step
            xm[i] -= step
            hess[:, i] = (self.potential_gradient(xp, kappa) - self.potential_gradient(xm, kappa)) / (2 * step)
        return 0.5 * (hess + hess.T)

    # -- batched evaluation -------------------------------------------------
    # ``xs`` has shape (B, n).  The defaults loop over rows; subclasses
    # vectorize them.

    def drift_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.stack([self.drift(x) for x in xs])

    def diffusion_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.stack([self.diffusion(x) for x in xs])

    def covariance_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.stack([self.covariance(x) for x in xs])

    def drift_jacobian_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.stack([self.drift_jacobian(x) for x in xs])

    def dC_dot_batch(self, xs: np.ndarray, ps: np.ndarray, cov: np.ndarray | None = None) -> np.ndarray:
        return np.stack([self.dC_dot(x, p) for x, p in zip(xs, ps)])

    def potential_batch(self, xs: np.ndarray, kappa: float) -> np.ndarray:
        return np.array([self.potential(x, kappa) for x in xs])

    def potential_gradient_batch(self, xs: np.ndarray, kappa: float) -> np.ndarray:
        return np.stack([self.potential_gradient(x, kappa) for x in xs])

    def myopic_direction_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.stack([self.myopic_direction(x) for x in xs])

    def in_domain_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.all(np.isfinite(xs) & (xs > self.lower) & (xs < self.upper), axis=-1)


def _fd_jacobian(fn: ArrayFn, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    cols = []
    for i in range(x.size):
        step = rel_step * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        cols.append((np.asarray(fn(xp)) - np.asarray(fn(xm))) / (2 * step))
    return np.stack(cols, axis=-1)


class DiffusionModel(ModelSpec):
    """Model built from user callables.

    ``drift(x) -> (n,)`` and ``diffusion(x) -> (n, p)`` are required.  When the
    derivative callbacks are omitted they are replaced by central finite
    differences, which is adequate for experimentation but slower.
    """

    def __init__(
        self,
        n: int,
        drift: ArrayFn,
        diffusion: ArrayFn,
        drift_jacobian: ArrayFn | None = None,
        covariance_derivatives: ArrayFn | None = None,
        lower=None,
        upper=None,
    ):
        super().__init__(n, lower, upper)
        self._drift = drift
        self._diffusion = diffusion
        self._drift_jac = drift_jacobian
        self._dcov = covariance_derivatives

    def drift(self, x):
        return np.asarray(self._drift(x), dtype=float)

    def diffusion(self, x):
        return np.atleast_2d(np.asarray(self._diffusion(x), dtype=float))

    def drift_jacobian(self, x):
        if self._drift_jac is not None:
            return np.asarray(self._drift_jac(x), dtype=float)
        return _fd_jacobian(self.drift, x)

    def covariance_derivatives(self, x):
        if self._dcov is not None:
            return np.asarray(self._dcov(x), dtype=float)
        # _fd_jacobian stacks d/dx^i along the last axis
        return np.moveaxis(_fd_jacobian(self.covariance, x), -1, 0)


class SeparableModel(ModelSpec):
    """Per-asset dynamics ``dX^i = mu^i(X^i) dt + sigma^i(X^i) dB_i``.

    The per-asset functions are vectorized: each takes the full state vector
    (or a batch of them) and returns the elementwise values.  Second
    derivatives ``d2mu``/``d2sigma`` are optional; when given, the Hessian of
    the potential is analytic instead of finite-differenced.
    """

    kind = "separable-custom"

    def __init__(
        self,
        mu: ArrayFn,
        dmu: ArrayFn,
        sigma: ArrayFn,
        dsigma: ArrayFn,
        rho,
        d2mu: ArrayFn | None = None,
        d2sigma: ArrayFn | None = None,
        lower=None,
        upper=None,
    ):
        rho = np.atleast_2d(np.asarray(rho, dtype=float))
        n = rho.shape[0]
        if rho.shape != (n, n) or not np.allclose(rho, rho.T, atol=1e-14, rtol=0):
            raise ValueError("correlation matrix must be square and symmetric")
        if not np.allclose(np.diag(rho), 1.0, atol=1e-14, rtol=0):
            raise ValueError("correlation matrix must have unit diagonal")
        super().__init__(n, lower, upper)
        self.rho = rho
        self.rho_chol = _cholesky(rho)
        self._mu, self._dmu = mu, dmu
        self._sigma, self._dsigma = sigma, dsigma
        self._d2mu, self._d2sigma = d2mu, d2sigma

    def _vec(self, fn: ArrayFn, x):
        return np.broadcast_to(np.asarray(fn(x), dtype=float), np.shape(x))

    def mu(self, x):
        return self._vec(self._mu, x)

    def sigma(self, x):
        return self._vec(self._sigma, x)

    def drift(self, x):
        return np.array(self.mu(x))

    def drift_jacobian(self, x):
        return np.diag(self._vec(self._dmu, x))

    def diffusion(self, x):
        return self.sigma(x)[:, None] * self.rho_chol

    def covariance(self, x):
        s = self.sigma(x)
        return self.rho * np.outer(s, s)

    def _log_sigma_slope(self, x):
        return self._vec(self._dsigma, x) / self.sigma(x)

    def covariance_derivatives(self, x):
        c = self.covariance(x)
        ell = self._log_sigma_slope(x)
        n = self.n
        dc = np.zeros((n, n, n))
        for i in range(n):
            dc[i, i, :] += ell[i] * c[i, :]
            dc[i, :, i] += ell[i] * c[:, i]
        return dc

    def dC_dot(self, x, p):
        c = self.covariance(x)
        ell = self._log_sigma_slope(x)
        out = (ell * p)[:, None] * c
        out[np.diag_indices(self.n)] += ell * (c @ p)
        return out

    def _nu(self, x):
        s = self.sigma(x)
        if np.any(s == 0):
            raise NotPositiveDefinite(f"zero volatility at {x}")
        return self.mu(x) / s

    def solve_covariance(self, x, rhs):
        s = self.sigma(x)
        if np.any(s == 0):
            raise NotPositiveDefinite(f"zero volatility at {x}")
        rhs = np.asarray(rhs, dtype=float)
        scale = s if rhs.ndim == 1 else s[:, None]
        return sla.cho_solve((self.rho_chol, True), rhs / scale) / scale

    def potential(self, x, kappa):
        x = self.check_domain(x)
        nu = self._nu(x)
        return 0.5 * kappa * float(nu @ sla.cho_solve((self.rho_chol, True), nu))

    def _nu_slopes(self, x):
        s = self.sigma(x)
        mu = self.mu(x)
        ds = self._vec(self._dsigma, x)
        dmu = self._vec(self._dmu, x)
        d1 = dmu / s - mu * ds / s**2
        return s, mu, ds, dmu, d1

    def potential_gradient(self, x, kappa):
        x = self.check_domain(x)
        s, mu, _, _, d1 = self._nu_slopes(x)
        w = sla.cho_solve((self.rho_chol, True), mu / s)
        return kappa * w * d1

    def potential_hessian(self, x, kappa):
        if self._d2mu is None or self._d2sigma is None:
            return super().potential_hessian(x, kappa)
        x = self.check_domain(x)
        s, mu, ds, dmu, d1 = self._nu_slopes(x)
        d2s = self._vec(self._d2sigma, x)
        d2mu = self._vec(self._d2mu, x)
        d2 = d2mu / s - 2 * dmu * ds / s**2 - mu * d2s / s**2 + 2 * mu * ds**2 / s**3
        rho_inv = sla.cho_solve((self.rho_chol, True), np.eye(self.n))
        w = rho_inv @ (mu / s)
        hess = rho_inv * np.outer(d1, d1)
        hess[np.diag_indices(self.n)] += w * d2
        return kappa * hess

    def drift_batch(self, xs):
        return np.array(self.mu(xs))

    def diffusion_batch(self, xs):
        return self.sigma(xs)[..., :, None] * self.rho_chol

    def covariance_batch(self, xs):
        s = self.sigma(xs)
        return self.rho * (s[:, :, None] * s[:, None, :])

    def drift_jacobian_batch(self, xs):
        return np.eye(self.n) * self._vec(self._dmu, xs)[:, None, :]

    def dC_dot_batch(self, xs, ps, cov=None):
        c = self.covariance_batch(xs) if cov is None else cov
        ell = self._log_sigma_slope(xs)
        out = (ell * ps)[:, :, None] * c
        idx = np.arange(self.n)
        out[:, idx, idx] += ell * np.einsum("bij,bj->bi", c, ps)
        return out

    def _rho_solve_rows(self, rows):
        return sla.cho_solve((self.rho_chol, True), rows.T).T

    def potential_batch(self, xs, kappa):
        s = self.sigma(xs)
        if np.any(s == 0):
            raise NotPositiveDefinite("zero volatility")
        nu = self.mu(xs) / s
        return 0.5 * kappa * np.einsum("bi,bi->b", nu, self._rho_solve_rows(nu))

    def potential_gradient_batch(self, xs, kappa):
        s, mu, _, _, d1 = self._nu_slopes(xs)
        return kappa * self._rho_solve_rows(mu / s) * d1

    def myopic_direction_batch(self, xs):
        s = self.sigma(xs)
        if np.any(s == 0):
            raise NotPositiveDefinite("zero volatility")
        return self._rho_solve_rows(self.mu(xs) / s) / s


def _corr(rho, n: int) -> np.ndarray:
    if rho is None:
        return np.eye(n)
    rho = np.asarray(rho, dtype=float)
    if rho.ndim == 0:
        if n != 2:
            raise ValueError("a scalar correlation is only meaningful for two assets")
        return np.array([[1.0, float(rho)], [float(rho), 1.0]])
    return rho


def lognormal(mu: Sequence[float], sigma: Sequence[float], rho=None) -> SeparableModel:
    """Multivariate geometric Brownian motion on the positive orthant."""
    mu = np.asarray(mu, dtype=float)
    sig = np.asarray(sigma, dtype=float)
    n = mu.size
    zeros = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
    m = SeparableModel(
        mu=lambda x: mu * x,
        dmu=lambda x: mu + zeros(x),
        sigma=lambda x: sig * x,
        dsigma=lambda x: sig + zeros(x),
        d2mu=zeros,
        d2sigma=zeros,
        rho=_corr(rho, n),
        lower=np.zeros(n),
    )
    m.kind = "lognormal"
    m.params = {"mu": mu, "sigma": sig}
    return m


def ornstein_uhlenbeck(lam: Sequence[float], mu_bar: Sequence[float], sigma: Sequence[float], rho=None) -> SeparableModel:
    """Mean-reverting normal assets ``dX^i = lam_i (mu_bar_i - X^i) dt + sigma_i dB_i``."""
    lam = np.asarray(lam, dtype=float)
    mbar = np.asarray(mu_bar, dtype=float)
    sig = np.asarray(sigma, dtype=float)
    n = lam.size
    zeros = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
    m = SeparableModel(
        mu=lambda x: lam * (mbar - x),
        dmu=lambda x: -lam + zeros(x),
        sigma=lambda x: sig + zeros(x),
        dsigma=zeros,
        d2mu=zeros,
        d2sigma=zeros,
        rho=_corr(rho, n),
    )
    m.kind = "ou"
    m.params = {"lambda": lam, "mu_bar": mbar, "sigma": sig}
    return m


def model_from_config(cfg: Mapping[str, Any]) -> SeparableModel:
    """Build a model from its config section (``kind`` plus parameters)."""
    kind = str(cfg.get("kind", "")).lower()
    try:
        if kind == "lognormal":
            return lognormal(cfg["mu"], cfg["sigma"], cfg.get("rho"))
        if kind == "ou":
            return ornstein_uhlenbeck(cfg["lambda"], cfg["mu_bar"], cfg["sigma"], cfg.get("rho"))
    except (KeyError, ValueError, NotPositiveDefinite) as exc:
        raise ConfigError(f"invalid {kind} model section: {exc}") from exc
    if kind == "separable-custom":
        raise ConfigError("separable-custom models are available from the library API only")
    raise ConfigError(f"unknown model kind {cfg.get('kind')!r}")


# -- functional API ----------------------------------------------------------


def covariance(m: ModelSpec, x) -> np.ndarray:
    c = m.covariance(m.check_domain(x))
    _cholesky(c)
    return c


def potential(m: ModelSpec, u: UtilitySpec, x) -> float:
    return m.potential(x, u.kappa)


def potential_gradient(m: ModelSpec, u: UtilitySpec, x) -> np.ndarray:
    return m.potential_gradient(x, u.kappa)


def potential_hessian(m: ModelSpec, u: UtilitySpec, x) -> np.ndarray:
    return m.potential_hessian(x, u.kappa)
