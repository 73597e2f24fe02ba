"""Flow maps of the characteristic system and their inversion.

``Phi_t(y)`` and ``Psi_t(y)`` are the position and momentum at time ``t`` of the
characteristic that ends at ``(y, 0)`` at the horizon.  Inverting ``Phi_t``
uses a modified Newton iteration whose gain is the constant-coefficient
variational approximation

    (F_t; G_t) = exp(-(T - t) M(y)) (I; 0),   M = [[Q, R], [-U, -Q^T]]

with ``Q = (kappa+1) da/dx``, ``R = (kappa+1) C`` and ``U = Hess V``, all
evaluated at ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import MaxIterationsExceeded, SingularGain
from .hamiltonian import HamiltonianSystem
from .leapfrog import (
    DEFAULT_MAX_INNER,
    DEFAULT_TOL,
    PhaseTrajectory,
    TimeGrid,
    integrate_backward,
    integrate_backward_batch,
)

__all__ = [
    "VariationalBlocks",
    "InversionResult",
    "flow",
    "variational_blocks",
    "variational_gain",
    "invert_flow",
    "flow_jacobian_fd",
]

DEFAULT_EPS = 1e-13
DEFAULT_MAX_ITER = 100
GAIN_COND_LIMIT = 1e12


@dataclass
class VariationalBlocks:
    Q: np.ndarray
    R: np.ndarray
    Umat: np.ndarray
    M: np.ndarray


@dataclass
class InversionResult:
    y: np.ndarray
    iterations: int
    final_residual: float
    trajectory: PhaseTrajectory
    step_norms: list[float]


def flow(sys: HamiltonianSystem, y, grid: TimeGrid, tol=DEFAULT_TOL, max_inner=DEFAULT_MAX_INNER, refine=True):
    """``(Phi_t(y), Psi_t(y), trajectory)``."""
    traj = integrate_backward(sys, y, grid, tol, max_inner, refine)
    return traj.x_fine[0].copy(), traj.p_fine[0].copy(), traj


def variational_blocks(sys: HamiltonianSystem, y) -> VariationalBlocks:
    y = sys.model.check_domain(y)
    fr = sys.frame(y)
    q = sys.inv_mass * fr.J[0]
    r = sys.inv_mass * fr.C[0]
    u = sys.model.potential_hessian(y, sys.kappa)
    m = np.block([[q, r], [-u, -q.T]])
    return VariationalBlocks(Q=q, R=r, Umat=u, M=m)


def variational_gain(sys: HamiltonianSystem, y, t: float, T: float, check: bool = True) -> np.ndarray:
    """The F block of ``exp(-(T-t) M(y)) (I; 0)``, an approximation of dPhi_t/dy."""
    n = sys.n
    tau = T - t
    if tau == 0.0:
        return np.eye(n)
    blocks = variational_blocks(sys, y)
    gain = sla.expm(-tau * blocks.M)[:n, :n]
    sv = np.linalg.svd(gain, compute_uv=False) if check else None
    if check and sv.min() * GAIN_COND_LIMIT <= max(sv.max(), 1.0):
        raise SingularGain(f"variational gain is singular at y={y} for horizon {tau}; the horizon is too long")
    return gain


def invert_flow(
    sys: HamiltonianSystem,
    x,
    grid: TimeGrid,
    eps: float = DEFAULT_EPS,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    max_inner: int = DEFAULT_MAX_INNER,
    refine: bool = True,
    cache_gain: bool = False,
) -> InversionResult:
    """Solve ``Phi_t(y) = x`` for the terminal point ``y``.

    Starts from ``y = x``.  Stops once both the update step and the residual
    are below ``eps * (1 + norm)``.  With ``cache_gain`` the gain is computed
    once at the initial guess instead of at every iterate.
    """
    x = sys.model.check_domain(np.array(x, dtype=float))
    xnorm = float(np.linalg.norm(x))
    y = x.copy()
    traj = integrate_backward(sys, y, grid, tol, max_inner, refine)
    lu = None
    steps: list[float] = []
    for it in range(1, max_iter + 1):
        if lu is None or not cache_gain:
            lu = sla.lu_factor(variational_gain(sys, y, grid.t, grid.T), check_finite=False)
        step = sla.lu_solve(lu, traj.x_fine[0] - x, check_finite=False)
        y = y - step
        traj = integrate_backward(sys, y, grid, tol, max_inner, refine)
        residual = float(np.linalg.norm(traj.x_fine[0] - x))
        snorm = float(np.linalg.norm(step))
        steps.append(snorm)
        if snorm <= eps * (1.0 + float(np.linalg.norm(y))) and residual <= eps * (1.0 + xnorm):
            return InversionResult(y=y, iterations=it, final_residual=residual, trajectory=traj, step_norms=steps)
    raise MaxIterationsExceeded(
        f"flow inversion at x={x} did not converge in {max_iter} iterations "
        f"(last step {steps[-1]:.3e}); split the horizon into shorter solves"
    )


def flow_jacobian_fd(
    sys: HamiltonianSystem,
    y,
    grid: TimeGrid,
    rel_step: float = 1e-6,
    tol=DEFAULT_TOL,
    max_inner=DEFAULT_MAX_INNER,
    refine=True,
    with_momentum: bool = False,
):
    """Central differences of ``Phi_t`` (and optionally ``Psi_t``) in ``y``.

    Entry ``[i, j]`` is ``d Phi_t^i / d y^j``.
    """
    y = sys.model.check_domain(np.array(y, dtype=float))
    n = y.size
    steps = rel_step * (1.0 + np.abs(y))
    bumps = np.diag(steps)
    ys = np.concatenate([y + bumps, y - bumps])
    traj = integrate_backward_batch(sys, ys, grid, tol, max_inner, refine)
    x0, p0 = traj.x_fine[0], traj.p_fine[0]
    dphi = ((x0[:n] - x0[n:]) / (2 * steps[:, None])).T
    if not with_momentum:
        return dphi
    dpsi = ((p0[:n] - p0[n:]) / (2 * steps[:, None])).T
    return dphi, dpsi
