"""Backward Stormer-Verlet integration of the characteristic system.

Starting from the terminal data ``x(T) = y, p(T) = 0`` each step k -> k-1 solves

    p_{k-1/2} = p_k + (h/2) dH/dx(x_k, p_{k-1/2})                     (implicit)
    x_{k-1}   = x_k - (h/2) (dH/dp(x_k, p_{k-1/2}) + dH/dp(x_{k-1}, p_{k-1/2}))  (implicit)
    p_{k-1}   = p_{k-1/2} + (h/2) dH/dx(x_{k-1}, p_{k-1/2})

The two implicit stages are solved by Newton's method started from
``p_{k-1/2} = p_k`` and ``x_{k-1} = x_k``.

By default the integrator runs at half the grid step so that interval
midpoints are genuine scheme states (needed by Simpson quadrature).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from .errors import InnerNewtonDivergence, OutOfDomain
from .hamiltonian import Frame, HamiltonianSystem

__all__ = [
    "TimeGrid",
    "PhasePoint",
    "PhaseTrajectory",
    "integrate_backward",
    "integrate_backward_batch",
    "node_values",
    "step_backward",
    "one_step_map",
    "one_step_jacobian",
    "inner_solve_momentum",
    "inner_solve_position",
    "hamiltonian_drift_diagnostic",
    "write_trajectory_csv",
]

DEFAULT_TOL = 1e-12
DEFAULT_MAX_INNER = 20


@dataclass(frozen=True)
class TimeGrid:
    t: float
    T: float
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("grid needs N >= 1")
        if not self.t <= self.T:
            raise ValueError(f"query time {self.t} is after the horizon {self.T}")

    @property
    def h(self) -> float:
        return (self.T - self.t) / self.N

    @property
    def nodes(self) -> np.ndarray:
        return self.t + self.h * np.arange(self.N + 1)

    def with_start(self, t: float) -> "TimeGrid":
        return TimeGrid(t, self.T, self.N)


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    p: np.ndarray


@dataclass
class PhaseTrajectory:
    """Discrete characteristic (or a batch of them).

    Arrays put the time axis first: ``x_fine[j]`` is the state at the j-th
    integrator node, of shape (n,) or (B, n) for a batch.  There are
    ``substeps`` integrator steps per grid interval and ``p_half[j]`` is the
    half-step momentum between fine nodes j and j+1.
    """

    grid: TimeGrid
    x_fine: np.ndarray
    p_fine: np.ndarray
    p_half: np.ndarray
    terminal_y: np.ndarray
    substeps: int = 2
    max_residual: float = 0.0
    inner_iterations: int = 0

    @property
    def x(self) -> np.ndarray:
        return self.x_fine[:: self.substeps]

    @property
    def p(self) -> np.ndarray:
        return self.p_fine[:: self.substeps]

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def fine_times(self) -> np.ndarray:
        m = self.grid.N * self.substeps
        return self.grid.t + (self.grid.T - self.grid.t) / m * np.arange(m + 1)

    @property
    def x_mid(self) -> np.ndarray:
        if self.substeps == 2:
            return self.x_fine[1::2]
        return 0.5 * (self.x_fine[:-1] + self.x_fine[1:])

    @property
    def p_mid(self) -> np.ndarray:
        if self.substeps == 2:
            return self.p_fine[1::2]
        return self.p_half

    @property
    def states(self) -> list[PhasePoint]:
        return [PhasePoint(x, p) for x, p in zip(self.x, self.p)]

    @property
    def start(self) -> PhasePoint:
        return PhasePoint(self.x_fine[0].copy(), self.p_fine[0].copy())

    @property
    def batched(self) -> bool:
        return self.x_fine.ndim == 3

    def member(self, b: int) -> "PhaseTrajectory":
        return PhaseTrajectory(
            grid=self.grid,
            x_fine=self.x_fine[:, b],
            p_fine=self.p_fine[:, b],
            p_half=self.p_half[:, b],
            terminal_y=self.terminal_y[b],
            substeps=self.substeps,
            max_residual=self.max_residual,
            inner_iterations=self.inner_iterations,
        )


def _newton(residual, jacobian, guess, tol, max_iter, what):
    """Batched Newton iteration; rows converge independently."""
    z = guess.copy()
    r = residual(z)
    it = 0
    while True:
        rnorm = np.linalg.norm(r, axis=1)
        active = rnorm > tol * (1.0 + np.linalg.norm(z, axis=1))
        if not active.any():
            return z, float(rnorm.max(initial=0.0)), it
        if it >= max_iter:
            raise InnerNewtonDivergence(
                f"{what} stage did not converge in {max_iter} iterations "
                f"(residual {rnorm.max():.3e}); reduce the step"
            )
        jac = jacobian(z)[active]
        try:
            delta = np.linalg.solve(jac, r[active][..., None])[..., 0]
        except np.linalg.LinAlgError:
            delta = 0.5 * r[active]
        z[active] -= delta
        r = residual(z)
        it += 1


def _solve_momentum(frame: Frame, p_k, h, tol, max_inner):
    eye = np.eye(p_k.shape[1])

    def residual(q):
        return q - p_k - 0.5 * h * frame.dH_dx(q)

    def jacobian(q):
        return eye - 0.5 * h * frame.Hxp(q)

    return _newton(residual, jacobian, p_k, tol, max_inner, "momentum")


def _solve_position(sys: HamiltonianSystem, frame_k: Frame, q, h, tol, max_inner):
    if sys.cara_mode or h == 0.0:
        return frame_k, 0.0, 0
    x_k = frame_k.x
    model = sys.model
    eye = np.eye(x_k.shape[1])
    drift_k = frame_k.dH_dp(q)
    last: list[Frame] = [frame_k]

    def frame_at(z):
        fr = last[0]
        if fr.x is not z and not np.array_equal(fr.x, z):
            if not model.in_domain_batch(z).all():
                raise OutOfDomain("characteristic left the model domain; shorten the horizon or move the query point")
            fr = Frame(sys, z.copy())
            last[0] = fr
        return fr

    def residual(z):
        return z - x_k + 0.5 * h * (drift_k + frame_at(z).dH_dp(q))

    def jacobian(z):
        return eye + 0.5 * h * np.swapaxes(frame_at(z).Hxp(q), 1, 2)

    z, rnorm, it = _newton(residual, jacobian, x_k, tol, max_inner, "position")
    return frame_at(z), rnorm, it


def inner_solve_momentum(sys: HamiltonianSystem, x_k, p_k, h, tol=DEFAULT_TOL, max_inner=DEFAULT_MAX_INNER):
    """Half-step momentum ``p_{k-1/2}`` from ``(x_k, p_k)``."""
    p_k = np.asarray(p_k, dtype=float).reshape(1, -1)
    q, _, _ = _solve_momentum(sys.frame(x_k), p_k, h, tol, max_inner)
    return q[0]


def inner_solve_position(sys: HamiltonianSystem, x_k, p_half, h, tol=DEFAULT_TOL, max_inner=DEFAULT_MAX_INNER):
    """Previous position ``x_{k-1}`` from ``(x_k, p_{k-1/2})``."""
    q = np.asarray(p_half, dtype=float).reshape(1, -1)
    fr, _, _ = _solve_position(sys, sys.frame(x_k), q, h, tol, max_inner)
    return fr.x[0].copy()


def step_backward(sys: HamiltonianSystem, frame: Frame, p_k, h, tol=DEFAULT_TOL, max_inner=DEFAULT_MAX_INNER):
    """One leapfrog step for a batch.

    Returns ``(frame_{k-1}, p_{k-1}, p_{k-1/2}, max residual, iterations)``.
    """
    q, r1, i1 = _solve_momentum(frame, p_k, h, tol, max_inner)
    prev, r2, i2 = _solve_position(sys, frame, q, h, tol, max_inner)
    p_prev = q + 0.5 * h * prev.dH_dx(q)
    return prev, p_prev, q, max(r1, r2), i1 + i2


def one_step_map(sys: HamiltonianSystem, x, p, h, tol=DEFAULT_TOL, max_inner=DEFAULT_MAX_INNER):
    """``(x_k, p_k) -> (x_{k-1}, p_{k-1})`` for stacked states of shape (B, n)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if not sys.model.in_domain_batch(x).all():
        raise OutOfDomain("state outside the model domain")
    prev, p_prev, _, _, _ = step_backward(sys, Frame(sys, x.copy()), p, h, tol, max_inner)
    return prev.x, p_prev


def one_step_jacobian(sys: HamiltonianSystem, x, p, h, rel_step=1e-6, tol=DEFAULT_TOL, max_inner=DEFAULT_MAX_INNER):
    """Central-difference Jacobian (2n x 2n) of :func:`one_step_map` at ``(x, p)``."""
    z = np.concatenate([np.asarray(x, dtype=float), np.asarray(p, dtype=float)])
    n = z.size // 2
    steps = rel_step * (1.0 + np.abs(z))
    bumps = np.diag(steps)
    zs = np.concatenate([z + bumps, z - bumps])
    xs, ps = one_step_map(sys, zs[:, :n], zs[:, n:], h, tol, max_inner)
    out = np.concatenate([xs, ps], axis=1)
    m = z.size
    return ((out[:m] - out[m:]) / (2 * steps[:, None])).T


def integrate_backward_batch(
    sys: HamiltonianSystem,
    ys,
    grid: TimeGrid,
    tol: float = DEFAULT_TOL,
    max_inner: int = DEFAULT_MAX_INNER,
    refine: bool = True,
) -> PhaseTrajectory:
    """Integrate B characteristics with terminal points ``ys`` (shape (B, n)) together."""
    ys = np.array(ys, dtype=float)
    if ys.ndim != 2 or ys.shape[1] != sys.n:
        raise ValueError(f"terminal points must have shape (B, {sys.n})")
    if not sys.model.in_domain_batch(ys).all():
        raise OutOfDomain("terminal point outside the model domain")
    sub = 2 if refine else 1
    steps = grid.N * sub
    h = (grid.T - grid.t) / steps
    xs = np.empty((steps + 1,) + ys.shape)
    ps = np.empty_like(xs)
    halves = np.empty((steps,) + ys.shape)
    xs[steps] = ys
    ps[steps] = 0.0
    frame = Frame(sys, ys.copy())
    max_res, iters = 0.0, 0
    for k in range(steps, 0, -1):
        frame, p_prev, q, res, it = step_backward(sys, frame, ps[k], h, tol, max_inner)
        xs[k - 1] = frame.x
        ps[k - 1] = p_prev
        halves[k - 1] = q
        max_res = max(max_res, res)
        iters += it
    return PhaseTrajectory(
        grid=grid,
        x_fine=xs,
        p_fine=ps,
        p_half=halves,
        terminal_y=ys,
        substeps=sub,
        max_residual=max_res,
        inner_iterations=iters,
    )


def integrate_backward(
    sys: HamiltonianSystem,
    y,
    grid: TimeGrid,
    tol: float = DEFAULT_TOL,
    max_inner: int = DEFAULT_MAX_INNER,
    refine: bool = True,
) -> PhaseTrajectory:
    """Integrate the characteristic through ``x(T) = y`` back to ``grid.t``."""
    y = sys.model.check_domain(np.array(y, dtype=float))
    return integrate_backward_batch(sys, y[None, :], grid, tol, max_inner, refine).member(0)


def node_values(sys: HamiltonianSystem, xs: np.ndarray, ps: np.ndarray):
    """Hamiltonian and action integrand at stacked states (any leading shape)."""
    shape = xs.shape[:-1]
    fr = Frame(sys, xs.reshape(-1, sys.n))
    pf = ps.reshape(-1, sys.n)
    return fr.h(pf).reshape(shape), fr.lagrangian(pf).reshape(shape)


def hamiltonian_drift_diagnostic(sys: HamiltonianSystem, traj: PhaseTrajectory) -> float:
    """``max_k |H(x_k, p_k) - H(x_N, p_N)|`` over every integrator node."""
    energies, _ = node_values(sys, traj.x_fine, traj.p_fine)
    return float(np.max(np.abs(energies - energies[-1])))


def write_trajectory_csv(traj: PhaseTrajectory, path: str | Path) -> None:
    n = traj.terminal_y.size
    header = ["k", "t_k"] + [f"x_{i + 1}" for i in range(n)] + [f"p_{i + 1}" for i in range(n)]
    rows = list(zip(traj.times, traj.x, traj.p))
    if traj.grid.t == traj.grid.T:
        rows = rows[-1:]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, (t, x, p) in enumerate(rows):
            writer.writerow([k, f"{t:.17g}"] + [f"{v:.17g}" for v in x] + [f"{v:.17g}" for v in p])
