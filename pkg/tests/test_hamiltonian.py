from __future__ import annotations

import numpy as np
import pytest

from conftest import nonlinear2, ou2
from wkbport import HamiltonianSystem


@pytest.mark.parametrize("kappa", [1.0, 3.0, -0.5, -1.0])
def test_derivatives_against_finite_differences(kappa, rng):
    sys = HamiltonianSystem(nonlinear2(), kappa)
    x, p = rng.uniform(-1, 1, 2), rng.normal(size=2)
    h = 1e-6

    def fd(fn, z):
        out = []
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            out.append((fn(z + e) - fn(z - e)) / (2 * h))
        return np.array(out)

    np.testing.assert_allclose(sys.dH_dp(x, p), fd(lambda q: sys.h_value(x, q), p), rtol=1e-6, atol=1e-10)
    np.testing.assert_allclose(sys.dH_dx(x, p), fd(lambda z: sys.h_value(z, p), x), rtol=1e-6, atol=1e-10)
    sd = sys.second_derivatives(x, p)
    hxp = fd(lambda z: sys.dH_dp(z, p), x)  # [i, j] = d/dx_i dH/dp_j
    np.testing.assert_allclose(sd.Hxp, hxp, rtol=1e-5, atol=1e-10)
    np.testing.assert_allclose(sd.Hpp, fd(lambda q: sys.dH_dp(x, q), p), rtol=1e-6, atol=1e-10)


def test_lagrangian_and_potential_relation(rng):
    sys = HamiltonianSystem(ou2(), 1.0)
    x, p = rng.normal(size=2) * 0.1, rng.normal(size=2)
    c = sys.model.covariance(x)
    assert sys.s0_integrand(x, p) == pytest.approx(0.5 * 2.0 * p @ c @ p - sys.model.potential(x, 1.0))
    assert sys.h_value(x, np.zeros(2)) == pytest.approx(sys.model.potential(x, 1.0))
    assert sys.mass == pytest.approx(0.5)


def test_cara_mode_freezes_positions(rng):
    sys = HamiltonianSystem(nonlinear2(), -1.0)
    assert sys.cara_mode and sys.inv_mass == 0.0 and sys.mass == float("inf")
    x, p = rng.uniform(-1, 1, 2), rng.normal(size=2)
    np.testing.assert_array_equal(sys.dH_dp(x, p), np.zeros(2))
    np.testing.assert_allclose(sys.dH_dx(x, p), sys.model.potential_gradient(x, -1.0))
