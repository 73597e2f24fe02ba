from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg as sla
from scipy.optimize import brentq

from conftest import ou2
from wkbport import DiffusionModel, HamiltonianSystem, OUOracle, TimeGrid, flow, flow_jacobian_fd, invert_flow, variational_gain
from wkbport.errors import MaxIterationsExceeded, SingularGain
from wkbport.flowmap import variational_blocks


def test_round_trip(nl_sys, rng):
    for _ in range(5):
        x = rng.uniform(-1, 1, 2)
        grid = TimeGrid(0.6, 1.0, 40)
        inv = invert_flow(nl_sys, x, grid)
        xt, _, _ = flow(nl_sys, inv.y, grid)
        assert np.linalg.norm(xt - x) <= 1e-12 * (1 + np.linalg.norm(x))
        assert inv.iterations <= 8


def test_terminal_time_inverts_in_one_step(nl_sys):
    inv = invert_flow(nl_sys, [0.2, 0.3], TimeGrid(1.0, 1.0, 10))
    assert inv.iterations == 1
    np.testing.assert_array_equal(inv.y, [0.2, 0.3])


def test_gain_is_identity_at_zero_horizon(nl_sys):
    np.testing.assert_array_equal(variational_gain(nl_sys, [0.1, 0.2], 1.0, 1.0), np.eye(2))


def test_blocks_structure(nl_sys):
    b = variational_blocks(nl_sys, np.array([0.1, 0.2]))
    np.testing.assert_allclose(b.M[2:, 2:], -b.Q.T)
    np.testing.assert_allclose(b.R, b.R.T)
    np.testing.assert_allclose(b.Umat, b.Umat.T, atol=1e-14)


def test_gain_is_exact_flow_jacobian_for_ou():
    m = ou2()
    sys = HamiltonianSystem(m, 1.0)
    orc = OUOracle.from_model(m, 1.0)
    F = variational_gain(sys, [0.1, -0.05], 0.0, 1.0)
    exact = sla.expm(-orc.A)[:2, :2]
    np.testing.assert_allclose(F, exact, atol=1e-14)
    fd = flow_jacobian_fd(sys, [0.1, -0.05], TimeGrid(0, 1, 1000))
    np.testing.assert_allclose(F, fd, atol=1e-6)


def test_gain_error_second_order_in_horizon(nl_sys):
    # the constant-coefficient gain matches dPhi/dy through first order in T - t
    y = np.array([0.3, -0.2])
    ratios = []
    for tau in (0.05, 0.1, 0.2, 0.4):
        d = np.linalg.norm(variational_gain(nl_sys, y, 1 - tau, 1) - flow_jacobian_fd(nl_sys, y, TimeGrid(1 - tau, 1, 64)), 2)
        ratios.append(d / tau**2)
    assert max(ratios) / min(ratios) < 1.25


def test_max_iterations(nl_sys):
    with pytest.raises(MaxIterationsExceeded, match="split the horizon"):
        invert_flow(nl_sys, [0.9, -0.9], TimeGrid(0, 1, 20), max_iter=1)


def test_cached_gain_converges_too(nl_sys):
    a = invert_flow(nl_sys, [0.5, -0.3], TimeGrid(0.5, 1, 30))
    b = invert_flow(nl_sys, [0.5, -0.3], TimeGrid(0.5, 1, 30), cache_gain=True)
    np.testing.assert_allclose(a.y, b.y, atol=1e-12)


def test_singular_gain_detected():
    # a(x) = 0.1 + x^2 with constant volatility: at x = 0 the gain is cos(w tau)
    m = DiffusionModel(1, drift=lambda x: 0.1 + x**2, diffusion=lambda x: np.array([[0.2]]), drift_jacobian=lambda x: np.diag(2 * x))
    sys = HamiltonianSystem(m, 1.0)
    y = np.zeros(1)
    root = brentq(lambda tau: variational_gain(sys, y, 0.0, tau, check=False)[0, 0], 1.0, 4.0, xtol=1e-15)
    assert root == pytest.approx(np.pi / (2 * np.sqrt(0.4)), rel=1e-4)
    with pytest.raises(SingularGain, match="too long"):
        variational_gain(sys, y, 0.0, root)
