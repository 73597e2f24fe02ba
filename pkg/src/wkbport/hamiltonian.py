"""The characteristic Hamiltonian

    H(x, p) = (1/(2 m)) p^T C(x) p + (1/m) p^T a(x) + V(x),   m = 1/(kappa + 1),

its derivatives, and the action integrand L(x, p) = (1/(2 m)) p^T C p - V.

For CARA utility (kappa = -1) the inverse mass vanishes: positions are frozen
and the momentum grows linearly under the force -grad V.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec

__all__ = ["HamiltonianSystem", "Frame", "SecondDerivatives"]

CARA_TOL = 1e-14


@dataclass
class SecondDerivatives:
    Hxx: np.ndarray
    Hxp: np.ndarray  # Hxp[i, j] = d^2 H / dx_i dp_j
    Hpp: np.ndarray


class Frame:
    """Model coefficients frozen at a batch of positions ``x`` (shape (B, n)).

    The implicit leapfrog stages evaluate H many times at fixed positions
    with varying momenta; a frame evaluates a(x), C(x) and the drift Jacobian
    once.  Momentum arguments have shape (B, n) as well.
    """

    __slots__ = ("sys", "x", "a", "C", "J", "_grad_v", "_potential")

    def __init__(self, sys: "HamiltonianSystem", x: np.ndarray):
        m = sys.model
        self.sys = sys
        self.x = x
        self.a = m.drift_batch(x)
        self.C = m.covariance_batch(x)
        self.J = m.drift_jacobian_batch(x)
        self._grad_v = None
        self._potential = None

    @property
    def grad_v(self) -> np.ndarray:
        if self._grad_v is None:
            self._grad_v = self.sys.model.potential_gradient_batch(self.x, self.sys.kappa)
        return self._grad_v

    @property
    def potential(self) -> np.ndarray:
        if self._potential is None:
            self._potential = self.sys.model.potential_batch(self.x, self.sys.kappa)
        return self._potential

    def _cp(self, p):
        return np.einsum("bij,bj->bi", self.C, p)

    def h(self, p):
        w = self.sys.inv_mass
        quad = np.einsum("bi,bi->b", p, self._cp(p))
        return 0.5 * w * quad + w * np.einsum("bi,bi->b", p, self.a) + self.potential

    def dH_dp(self, p):
        return self.sys.inv_mass * (self._cp(p) + self.a)

    def dH_dx(self, p):
        w = self.sys.inv_mass
        if w == 0.0:
            return self.grad_v.copy()
        D = self.sys.model.dC_dot_batch(self.x, p, self.C)
        return w * (0.5 * np.einsum("bij,bj->bi", D, p) + np.einsum("bji,bj->bi", self.J, p)) + self.grad_v

    def Hxp(self, p):
        """``Hxp[b, i, j] = d^2 H / dx_i dp_j``."""
        w = self.sys.inv_mass
        if w == 0.0:
            return np.zeros(self.C.shape)
        return w * (self.sys.model.dC_dot_batch(self.x, p, self.C) + np.swapaxes(self.J, 1, 2))

    def lagrangian(self, p):
        quad = np.einsum("bi,bi->b", p, self._cp(p))
        return 0.5 * self.sys.inv_mass * quad - self.potential

    def take(self, mask: np.ndarray) -> "Frame":
        """Sub-frame of the batch members selected by ``mask``."""
        fr = object.__new__(Frame)
        fr.sys = self.sys
        fr.x = self.x[mask]
        fr.a = self.a[mask]
        fr.C = self.C[mask]
        fr.J = self.J[mask]
        fr._grad_v = None if self._grad_v is None else self._grad_v[mask]
        fr._potential = None if self._potential is None else self._potential[mask]
        return fr


@dataclass
class HamiltonianSystem:
    """Hamiltonian built from a model and the utility constant ``kappa``."""

    model: ModelSpec
    kappa: float
    cara_mode: bool = field(init=False)
    inv_mass: float = field(init=False)

    def __post_init__(self):
        self.kappa = float(self.kappa)
        self.cara_mode = abs(self.kappa + 1.0) <= CARA_TOL
        self.inv_mass = 0.0 if self.cara_mode else self.kappa + 1.0

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def mass(self) -> float:
        """``1/(kappa+1)``; undefined (infinite) in CARA mode."""
        if self.cara_mode:
            return float("inf")
        return 1.0 / self.inv_mass

    def frame(self, x) -> Frame:
        """Frame at a single position (batch of one)."""
        return Frame(self, self.model.check_domain(x)[None, :])

    def _one(self, p):
        return np.asarray(p, dtype=float).reshape(1, self.n)

    def h_value(self, x, p) -> float:
        return float(self.frame(x).h(self._one(p))[0])

    def dH_dp(self, x, p) -> np.ndarray:
        return self.frame(x).dH_dp(self._one(p))[0]

    def dH_dx(self, x, p) -> np.ndarray:
        return self.frame(x).dH_dx(self._one(p))[0]

    def s0_integrand(self, x, p) -> float:
        return float(self.frame(x).lagrangian(self._one(p))[0])

    def second_derivatives(self, x, p=None, rel_step: float = 1e-6) -> SecondDerivatives:
        """Hessian blocks of H.

        ``Hxp`` and ``Hpp`` are exact.  ``Hxx`` is exact (the Hessian of V) at
        ``p = 0``; for nonzero ``p`` it is a central difference of ``dH_dx``.
        """
        x = self.model.check_domain(x)
        p = np.zeros(self.n) if p is None else np.asarray(p, dtype=float)
        fr = self.frame(x)
        hpp = self.inv_mass * fr.C[0]
        hxp = fr.Hxp(p[None, :])[0]
        if not np.any(p):
            hxx = self.model.potential_hessian(x, self.kappa)
        else:
            hxx = np.empty((self.n, self.n))
            for i in range(self.n):
                step = rel_step * (1.0 + abs(x[i]))
                xp, xm = x.copy(), x.copy()
                xp[i] += step
                xm[i] -= step
                hxx[:, i] = (self.dH_dx(xp, p) - self.dH_dx(xm, p)) / (2 * step)
            hxx = 0.5 * (hxx + hxx.T)
        return SecondDerivatives(Hxx=hxx, Hxp=hxp, Hpp=hpp)
