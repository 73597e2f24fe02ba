"""Monte Carlo evaluation of allocation policies.

Assets and wealth are stepped together with Euler-Maruyama,

    X <- X + a(X) dt + b(X) dZ,    W <- W + phi^T (X_new - X_old),

and the terminal utility is averaged over paths.  Normal draws for step k
come from a Philox stream keyed by the seed with counter k, so every policy
run with the same config sees the same shocks (common random numbers) and
results do not depend on evaluation order.

A policy is any callable ``policy(t, xs, ws) -> phis`` acting on a batch of
paths: ``xs`` has shape (P, n), ``ws`` shape (P,), and the result (P, n)
holds the holdings in each asset.  :func:`pointwise` adapts a per-path
function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AllPathsInvalid, ConfigError
from .hamiltonian import HamiltonianSystem
from .model import ModelSpec
from .utility import UtilitySpec
from .wkb import Numerics, value_surface

__all__ = [
    "SimConfig",
    "SimResult",
    "normals",
    "simulate_paths",
    "simulate_expected_utility",
    "compare_policies",
    "pointwise",
    "constant_policy",
    "scaled_policy",
    "MyopicPlusTable",
    "SurfacePolicy",
    "ExactPolicy",
]

Policy = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
SCHEMES = ("euler_maruyama",)


@dataclass(frozen=True)
class SimConfig:
    paths: int = 10_000
    steps: int = 100
    seed: int = 0
    scheme: str = "euler_maruyama"

    def __post_init__(self):
        if self.paths < 1 or self.steps < 1:
            raise ConfigError(f"need paths >= 1 and steps >= 1, got {self.paths}, {self.steps}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.scheme.lower().replace("-", "_") not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; available: {SCHEMES}")


@dataclass
class SimResult:
    mean: float
    stderr: float
    valid: int
    absorbed: int
    utilities: np.ndarray = field(repr=False)
    alive: np.ndarray = field(repr=False)

    @property
    def absorbed_fraction(self) -> float:
        return self.absorbed / (self.valid + self.absorbed)


def normals(seed: int, step: int, paths: int, n: int) -> np.ndarray:
    """Standard normals for one time step, shape (paths, n)."""
    gen = np.random.Generator(np.random.Philox(key=seed, counter=[0, step, 0, 0]))
    return gen.standard_normal((paths, n))


def _mean_stderr(vals: np.ndarray) -> tuple[float, float]:
    k = vals.size
    if vals.min() == vals.max():
        # constant sample: report it exactly rather than through rounded sums
        return float(vals[0]), 0.0
    mean = float(vals.mean())
    return mean, float(vals.std(ddof=1) / math.sqrt(k))


def simulate_paths(model: ModelSpec, utility: UtilitySpec, policy: Policy, x0, w0: float, T: float, cfg: SimConfig):
    """Terminal states ``(X_T, W_T, alive)``; absorbed paths keep their last admissible state."""
    x0 = model.check_domain(np.array(x0, dtype=float))
    if not utility.in_domain(w0):
        raise ConfigError(f"initial wealth {w0} outside the utility domain")
    n, P = model.n, cfg.paths
    dt = T / cfg.steps
    sq = math.sqrt(dt)
    xs = np.tile(x0, (P, 1))
    ws = np.full(P, float(w0))
    alive = np.ones(P, dtype=bool)
    for k in range(cfg.steps):
        z = normals(cfg.seed, k, P, n)
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        x, w = xs[idx], ws[idx]
        phi = np.asarray(policy(k * dt, x, w), dtype=float).reshape(idx.size, n)
        dx = model.drift_batch(x) * dt + np.einsum("bij,bj->bi", model.diffusion_batch(x), z[idx]) * sq
        x_new = x + dx
        w_new = w + np.einsum("bi,bi->b", phi, dx)
        ok = model.in_domain_batch(x_new) & np.asarray(utility.in_domain(w_new)) & np.isfinite(w_new)
        xs[idx[ok]] = x_new[ok]
        ws[idx[ok]] = w_new[ok]
        alive[idx[~ok]] = False
    return xs, ws, alive


def simulate_expected_utility(
    model: ModelSpec, utility: UtilitySpec, policy: Policy, x0, w0: float, T: float, cfg: SimConfig
) -> SimResult:
    """Estimate ``E[U(W_T)]`` under ``policy``.

    Paths on which X leaves the model domain, or W leaves the utility
    domain, are absorbed: they are excluded from the mean and counted in
    ``absorbed``.
    """
    _, ws, alive = simulate_paths(model, utility, policy, x0, w0, T, cfg)
    if not alive.any():
        raise AllPathsInvalid(f"all {cfg.paths} paths were absorbed")
    util = np.full(cfg.paths, np.nan)
    util[alive] = utility.value(ws[alive])
    mean, se = _mean_stderr(util[alive])
    valid = int(alive.sum())
    return SimResult(mean=mean, stderr=se, valid=valid, absorbed=cfg.paths - valid, utilities=util, alive=alive)


@dataclass
class Comparison:
    name: str
    mean: float
    stderr: float
    absorbed: int
    diff: float  # mean of U_policy - U_reference over jointly valid paths
    diff_stderr: float


def compare_policies(
    model: ModelSpec,
    utility: UtilitySpec,
    reference: Policy,
    others: dict[str, Policy],
    x0,
    w0: float,
    T: float,
    cfg: SimConfig,
    reference_name: str = "reference",
) -> list[Comparison]:
    """Run every policy on the same shocks; differences are paired path by path."""
    base = simulate_expected_utility(model, utility, reference, x0, w0, T, cfg)
    out = [Comparison(reference_name, base.mean, base.stderr, base.absorbed, 0.0, 0.0)]
    for name, pol in others.items():
        res = simulate_expected_utility(model, utility, pol, x0, w0, T, cfg)
        both = base.alive & res.alive
        if not both.any():
            raise AllPathsInvalid(f"no path valid under both {reference_name} and {name}")
        d, dse = _mean_stderr(res.utilities[both] - base.utilities[both])
        out.append(Comparison(name, res.mean, res.stderr, res.absorbed, d, dse))
    return out


# -- policy helpers ------------------------------------------------------------


def pointwise(fn: Callable[[float, np.ndarray, float], np.ndarray]) -> Policy:
    """Lift ``fn(t, x, w) -> phi`` to a batched policy (row loop)."""

    def policy(t, xs, ws):
        return np.array([fn(t, x, w) for x, w in zip(xs, ws)], dtype=float).reshape(xs.shape)

    return policy


def constant_policy(phi) -> Policy:
    phi = np.asarray(phi, dtype=float)

    def policy(t, xs, ws):
        return np.broadcast_to(phi, xs.shape).copy()

    return policy


def scaled_policy(policy: Policy, factors) -> Policy:
    """``factors * policy`` coordinatewise, e.g. for perturbation probes."""
    factors = np.asarray(factors, dtype=float)

    def scaled(t, xs, ws):
        return policy(t, xs, ws) * factors

    return scaled


class MyopicPlusTable:
    """``phi = (C^{-1} a(x) + h(t, x)) / A_U(w)`` with the hedging numerator ``h`` supplied by a subclass."""

    def __init__(self, model: ModelSpec, utility: UtilitySpec):
        self.model = model
        self.utility = utility

    def numerator(self, t: float, xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t, xs, ws):
        myopic = self.model.myopic_direction_batch(xs)
        ara = np.asarray(self.utility.absolute_risk_aversion(ws), dtype=float).reshape(-1, 1)
        return (myopic + self.numerator(t, xs)) / ara


class SurfacePolicy(MyopicPlusTable):
    """Nearest-neighbour lookup of a precomputed hedging numerator ``p + grad S1``.

    The table lives on ``times x axes[0] x ... x axes[n-1]``.  The myopic
    term is evaluated exactly at each path's state.  ``max_cell_jump`` is the
    largest change of the table between neighbouring entries, a bound on the
    lookup error.
    """

    def __init__(self, model, utility, times: Sequence[float], axes: Sequence[Sequence[float]], table: np.ndarray):
        super().__init__(model, utility)
        self.times = np.asarray(times, dtype=float)
        self.axes = [np.asarray(ax, dtype=float) for ax in axes]
        shape = (self.times.size,) + tuple(ax.size for ax in self.axes) + (model.n,)
        self.table = np.asarray(table, dtype=float).reshape(shape)
        if not np.all(np.isfinite(self.table)):
            raise ValueError("surface table contains failed points")
        jumps = [np.abs(np.diff(self.table, axis=ax)).max(initial=0.0) for ax in range(self.table.ndim - 1)]
        self.max_cell_jump = float(max(jumps, default=0.0))

    @classmethod
    def build(
        cls,
        sys: HamiltonianSystem,
        utility: UtilitySpec,
        T: float,
        times: Sequence[float],
        axes: Sequence[Sequence[float]],
        num: Numerics | None = None,
        threads: int = 1,
    ) -> "SurfacePolicy":
        num = num or Numerics()
        grids = np.meshgrid(*[np.asarray(ax, dtype=float) for ax in axes], indexing="ij")
        points = np.stack([g.ravel() for g in grids], axis=1)
        rows = []
        for t in times:
            if t >= T:
                rows.append(np.zeros_like(points))
                continue
            res = value_surface(sys, t, T, points, num, threads=threads, with_grad_s1=num.s1_enabled)
            bad = [r for r in res if not r.ok]
            if bad:
                raise ValueError(f"surface point failed at t={t}: {bad[0].status}")
            rows.append(np.array([r.p + r.gradS1 for r in res]))
        return cls(sys.model, utility, times, axes, np.array(rows))

    @staticmethod
    def _nearest(grid: np.ndarray, vals: np.ndarray) -> np.ndarray:
        if grid.size == 1:
            return np.zeros(vals.shape, dtype=int)
        mids = 0.5 * (grid[1:] + grid[:-1])
        return np.searchsorted(mids, vals)

    def numerator(self, t, xs):
        ti = int(self._nearest(self.times, np.array([t]))[0])
        idx = tuple(self._nearest(ax, xs[:, i]) for i, ax in enumerate(self.axes))
        return self.table[(ti,) + idx]


class ExactPolicy(MyopicPlusTable):
    """Solves for the hedging numerator at every path state; only for small runs."""

    def __init__(self, sys: HamiltonianSystem, utility: UtilitySpec, T: float, num: Numerics | None = None):
        super().__init__(sys.model, utility)
        self.sys = sys
        self.T = T
        self.num = num or Numerics()

    def numerator(self, t, xs):
        if t >= self.T:
            return np.zeros(xs.shape)
        res = value_surface(self.sys, t, self.T, xs, self.num, with_grad_s1=self.num.s1_enabled)
        out = np.array([r.p + r.gradS1 for r in res]).reshape(xs.shape)
        if not np.all(np.isfinite(out)):
            raise ValueError(f"policy solve failed at t={t}: {next(r.status for r in res if not r.ok)}")
        return out
