from __future__ import annotations

import numpy as np
import pytest

from wkbport import HamiltonianSystem, SeparableModel, lognormal, ornstein_uhlenbeck

ACCEPTANCE_LINES: list[str] = []


def nonlinear2() -> SeparableModel:
    """Two assets with state-dependent drift and volatility."""
    c = np.array([0.06, 0.08])
    a = np.array([0.03, 0.02])
    s = np.array([0.2, 0.25])
    return SeparableModel(
        mu=lambda x: c + a * np.sin(x),
        dmu=lambda x: a * np.cos(x),
        d2mu=lambda x: -a * np.sin(x),
        sigma=lambda x: s * (1 + 0.2 * x**2),
        dsigma=lambda x: 0.4 * s * x,
        d2sigma=lambda x: 0.4 * s + 0 * x,
        rho=np.array([[1.0, 0.3], [0.3, 1.0]]),
    )


def nonlinear1() -> SeparableModel:
    return SeparableModel(
        mu=lambda x: 0.06 + 0.03 * np.sin(x),
        dmu=lambda x: 0.03 * np.cos(x),
        d2mu=lambda x: -0.03 * np.sin(x),
        sigma=lambda x: 0.2 * (1 + 0.2 * x**2),
        dsigma=lambda x: 0.08 * x,
        d2sigma=lambda x: 0.08 + 0 * x,
        rho=np.eye(1),
    )


def ou2():
    return ornstein_uhlenbeck([0.5, 0.3], [0.05, 0.02], [0.2, 0.25], 0.3)


def logn2():
    return lognormal([0.08, 0.05], [0.2, 0.25], 0.3)


def random_corr(n, rng):
    a = rng.normal(size=(n, n))
    r = a @ a.T + n * np.eye(n)
    d = np.sqrt(np.diag(r))
    return r / d[:, None] / d[None, :]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def nl_sys():
    return HamiltonianSystem(nonlinear2(), 1.0)


@pytest.fixture
def ou_sys():
    return HamiltonianSystem(ou2(), 1.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
