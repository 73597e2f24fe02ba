"""Semiclassical value function and optimal allocation.

For a query ``(t, x)`` the characteristic through it is found by inverting
the flow map, then

    S0(t, x) = -int_t^T L(x(s), p(s)) ds
    S1(t, x) = 1/2 int_t^T tr(C(x(s)) grad p(s, x(s))) ds

are evaluated with Simpson's rule on every grid interval, using the
integrator's half-step nodes as midpoints.  The allocation is

    phi = (C^{-1} a + grad S0 + grad S1) / A_U(w).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateBump, OutOfDomain, WKBError
from .flowmap import DEFAULT_EPS, DEFAULT_MAX_ITER, InversionResult, invert_flow
from .hamiltonian import HamiltonianSystem
from .leapfrog import (
    DEFAULT_MAX_INNER,
    DEFAULT_TOL,
    PhaseTrajectory,
    TimeGrid,
    hamiltonian_drift_diagnostic,
    integrate_backward,
    integrate_backward_batch,
    node_values,
)
from .utility import UtilitySpec

__all__ = [
    "Numerics",
    "ValueResult",
    "PolicyResult",
    "s0_at",
    "s1_at",
    "value_at",
    "grad_s1",
    "policy_at",
    "value_surface",
]


@dataclass(frozen=True)
class Numerics:
    """Solver settings shared by every query."""

    N: int = 64
    eps: float = DEFAULT_EPS
    inner_tol: float = DEFAULT_TOL
    max_inner: int = DEFAULT_MAX_INNER
    max_newton: int = DEFAULT_MAX_ITER
    refine: bool = True
    s1_enabled: bool = True
    grad_p_mode: str = "bump"
    bump: float = 1e-4
    grad_s1_bump: float = 1e-4
    cache_gain: bool = False

    def __post_init__(self):
        if self.grad_p_mode not in ("bump", "trajectory"):
            raise ValueError(f"grad_p_mode must be 'bump' or 'trajectory', got {self.grad_p_mode!r}")
        if self.N < 1:
            raise ValueError("N must be >= 1")


@dataclass
class ValueResult:
    t: float
    x: np.ndarray
    S0: float
    S1: float
    p: np.ndarray
    gradS1: np.ndarray
    y: np.ndarray
    newton_iters: int = 0
    h_drift: float = 0.0
    residual: float = 0.0
    status: str = "ok"
    trajectory: PhaseTrajectory | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @classmethod
    def failed(cls, t, x, exc: Exception) -> "ValueResult":
        n = len(x)
        nan = np.full(n, np.nan)
        return cls(
            t=t,
            x=np.asarray(x, dtype=float),
            S0=math.nan,
            S1=math.nan,
            p=nan,
            gradS1=nan.copy(),
            y=nan.copy(),
            status=f"{type(exc).__name__}: {exc}",
        )


@dataclass
class PolicyResult:
    phi: np.ndarray
    myopic: np.ndarray
    hedging: np.ndarray
    w: float
    value: ValueResult | None = field(default=None, repr=False)


def _simpson(node_vals: np.ndarray, mid_vals: np.ndarray, h: float) -> float:
    """Composite Simpson with explicit midpoints; ``node_vals`` has N+1 entries."""
    return float(h / 6.0 * np.sum(node_vals[:-1] + 4.0 * mid_vals + node_vals[1:]))


def _terminal(t: float, x: np.ndarray) -> ValueResult:
    n = x.size
    return ValueResult(t=t, x=x, S0=0.0, S1=0.0, p=np.zeros(n), gradS1=np.zeros(n), y=x.copy())


def _invert(sys, grid, x, num: Numerics) -> InversionResult:
    return invert_flow(
        sys,
        x,
        grid,
        eps=num.eps,
        max_iter=num.max_newton,
        tol=num.inner_tol,
        max_inner=num.max_inner,
        refine=num.refine,
        cache_gain=num.cache_gain,
    )


def s0_at(sys: HamiltonianSystem, grid: TimeGrid, x, num: Numerics | None = None) -> ValueResult:
    """Leading-order value ``S0(grid.t, x)`` and momentum ``p = grad S0``."""
    num = num or Numerics(N=grid.N)
    x = sys.model.check_domain(np.array(x, dtype=float))
    if grid.t == grid.T:
        return _terminal(grid.t, x)
    inv = _invert(sys, grid, x, num)
    traj = inv.trajectory
    _, lag_nodes = node_values(sys, traj.x, traj.p)
    _, lag_mid = node_values(sys, traj.x_mid, traj.p_mid)
    s0 = -_simpson(lag_nodes, lag_mid, grid.h)
    return ValueResult(
        t=grid.t,
        x=x,
        S0=s0,
        S1=0.0,
        p=traj.p_fine[0].copy(),
        gradS1=np.zeros(x.size),
        y=inv.y,
        newton_iters=inv.iterations,
        h_drift=hamiltonian_drift_diagnostic(sys, traj),
        residual=inv.final_residual,
        trajectory=traj,
    )


def _grad_p_bump(sys: HamiltonianSystem, traj: PhaseTrajectory, num: Numerics) -> np.ndarray:
    """``grad_x p`` at every integrator node, via terminal-point bumps.

    Returns an array of shape (nodes, n, n).  Each bumped characteristic
    shares the time grid, so positions and momenta are differenced at
    matching nodes and combined by the chain rule
    ``grad_x p = (dp/dy) (dx/dy)^{-1}``.
    """
    y = traj.terminal_y
    n = y.size
    steps = num.bump * (1.0 + np.abs(y))
    bumps = np.diag(steps)
    try:
        bt = integrate_backward_batch(
            sys, np.concatenate([y + bumps, y - bumps]), traj.grid, num.inner_tol, num.max_inner, num.refine
        )
    except OutOfDomain as exc:
        raise DegenerateBump(f"bumped characteristic left the domain: {exc}") from exc
    # dx[j, a, b] = d x_a / d y_b at node j
    dx = np.swapaxes((bt.x_fine[:, :n] - bt.x_fine[:, n:]) / (2 * steps[None, :, None]), 1, 2)
    dp = np.swapaxes((bt.p_fine[:, :n] - bt.p_fine[:, n:]) / (2 * steps[None, :, None]), 1, 2)
    # grad p = dp dx^{-1}  <=>  dx^T (grad p)^T = dp^T
    return np.swapaxes(np.linalg.solve(np.swapaxes(dx, 1, 2), np.swapaxes(dp, 1, 2)), 1, 2)


def _grad_p_trajectory(traj: PhaseTrajectory) -> np.ndarray:
    """Diagonal estimate ``dp_j/dx^j ~ (p_{k+1} - p_{k-1})_j / (x_{k+1} - x_{k-1})_j`` along the path.

    One-sided differences at the ends; components where the path does not
    move in ``x^j`` contribute zero.
    """
    xs, ps = traj.x_fine, traj.p_fine
    dxs = np.gradient(xs, axis=0)
    dps = np.gradient(ps, axis=0)
    moving = np.abs(dxs) > 1e-14 * (1.0 + np.abs(xs))
    diag = np.where(moving, dps / np.where(moving, dxs, 1.0), 0.0)
    n = xs.shape[1]
    out = np.zeros((xs.shape[0], n, n))
    idx = np.arange(n)
    out[:, idx, idx] = diag
    return out


def s1_at(
    sys: HamiltonianSystem,
    grid: TimeGrid,
    x,
    num: Numerics | None = None,
    base: ValueResult | None = None,
) -> ValueResult:
    """First correction ``S1(grid.t, x)``; reuses ``base`` from :func:`s0_at` when given."""
    num = num or Numerics(N=grid.N)
    res = base if base is not None else s0_at(sys, grid, x, num)
    if grid.t == grid.T:
        return res
    traj = res.trajectory
    if num.grad_p_mode == "bump":
        gp = _grad_p_bump(sys, traj, num)
    else:
        gp = _grad_p_trajectory(traj)
    cov = sys.model.covariance_batch(traj.x_fine)
    integrand = 0.5 * np.einsum("jab,jba->j", cov, gp)
    if traj.substeps == 2:
        nodes, mids = integrand[::2], integrand[1::2]
    else:
        # no true midpoint states without refinement: average the ends
        nodes = integrand
        mids = 0.5 * (integrand[:-1] + integrand[1:])
    return replace(res, S1=_simpson(nodes, mids, grid.h))


def value_at(sys: HamiltonianSystem, grid: TimeGrid, x, num: Numerics | None = None) -> ValueResult:
    """``S0`` and, if enabled, ``S1`` at one query point."""
    num = num or Numerics(N=grid.N)
    res = s0_at(sys, grid, x, num)
    if num.s1_enabled:
        res = s1_at(sys, grid, x, num, base=res)
    return res


def grad_s1(sys: HamiltonianSystem, grid: TimeGrid, x, num: Numerics | None = None) -> np.ndarray:
    """Central differences of ``S1`` in ``x`` (step ``grad_s1_bump * (1 + |x_i|)``)."""
    num = num or Numerics(N=grid.N)
    x = sys.model.check_domain(np.array(x, dtype=float))
    if grid.t == grid.T:
        return np.zeros(x.size)
    out = np.empty(x.size)
    for i in range(x.size):
        step = num.grad_s1_bump * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        out[i] = (s1_at(sys, grid, xp, num).S1 - s1_at(sys, grid, xm, num).S1) / (2 * step)
    return out


def policy_at(
    sys: HamiltonianSystem,
    u: UtilitySpec,
    grid: TimeGrid,
    x,
    w: float,
    num: Numerics | None = None,
) -> PolicyResult:
    """Optimal allocation at ``(grid.t, x, w)`` split into myopic and hedging demand."""
    num = num or Numerics(N=grid.N)
    ara = u.absolute_risk_aversion(w)
    x = sys.model.check_domain(np.array(x, dtype=float))
    res = value_at(sys, grid, x, num)
    if num.s1_enabled:
        res.gradS1 = grad_s1(sys, grid, x, num)
    myopic = sys.model.myopic_direction(x) / ara
    hedging = (res.p + res.gradS1) / ara
    return PolicyResult(phi=myopic + hedging, myopic=myopic, hedging=hedging, w=float(w), value=res)


def value_surface(
    sys: HamiltonianSystem,
    t: float,
    T: float,
    xs,
    num: Numerics | None = None,
    threads: int = 1,
    with_grad_s1: bool = False,
) -> list[ValueResult]:
    """Values at many query points; failures become per-point records.

    Results are returned in input order and do not depend on ``threads``.
    """
    num = num or Numerics()
    grid = TimeGrid(t, T, num.N)

    def one(x):
        try:
            res = value_at(sys, grid, x, num)
            if with_grad_s1 and num.s1_enabled:
                res.gradS1 = grad_s1(sys, grid, x, num)
            return res
        except (WKBError, ValueError, np.linalg.LinAlgError) as exc:
            return ValueResult.failed(t, np.asarray(x, dtype=float), exc)

    points = [np.asarray(x, dtype=float) for x in xs]
    if threads <= 1 or len(points) <= 1:
        return [one(x) for x in points]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, points))


def characteristic(sys: HamiltonianSystem, grid: TimeGrid, y, num: Numerics | None = None) -> PhaseTrajectory:
    """Forward handle on the integrator with the solver's settings."""
    num = num or Numerics(N=grid.N)
    return integrate_backward(sys, y, grid, num.inner_tol, num.max_inner, num.refine)
