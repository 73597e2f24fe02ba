from __future__ import annotations

import csv

import numpy as np
import pytest

from conftest import nonlinear2, ou2
from wkbport import HamiltonianSystem, DiffusionModel, OUOracle, TimeGrid, integrate_backward, integrate_backward_batch, lognormal
from wkbport.errors import InnerNewtonDivergence, OutOfDomain
from wkbport.leapfrog import (
    hamiltonian_drift_diagnostic,
    inner_solve_momentum,
    inner_solve_position,
    one_step_jacobian,
    write_trajectory_csv,
)


def _ou_error(sys, orc, y, N, t=0.0, T=1.0):
    tr = integrate_backward(sys, y, TimeGrid(t, T, N))
    err = 0.0
    for s, x, p in zip(tr.times, tr.x, tr.p):
        ex = orc.characteristic(y, s, T)
        err = max(err, np.abs(x - ex.x).max(), np.abs(p - ex.p).max())
    return err


@pytest.mark.parametrize("kappa", [1.0, 3.0])
def test_second_order_against_ou_closed_form(kappa):
    m = ou2()
    sys = HamiltonianSystem(m, kappa)
    orc = OUOracle.from_model(m, kappa)
    y = np.array([0.1, -0.05])
    e32, e64, e128 = (_ou_error(sys, orc, y, N) for N in (32, 64, 128))
    assert 3.5 <= e32 / e64 <= 4.5
    assert 3.5 <= e64 / e128 <= 4.5


def test_refinement_off_is_same_scheme_at_twice_the_step():
    sys = HamiltonianSystem(ou2(), 1.0)
    y = [0.1, -0.05]
    fine = integrate_backward(sys, y, TimeGrid(0, 1, 32), refine=True)
    plain = integrate_backward(sys, y, TimeGrid(0, 1, 64), refine=False)
    np.testing.assert_allclose(fine.x_fine, plain.x_fine, atol=1e-14)
    assert plain.substeps == 1 and fine.substeps == 2
    np.testing.assert_allclose(fine.x_mid, fine.x_fine[1::2])


def test_zero_fields_leave_trajectory_frozen():
    m = DiffusionModel(2, drift=lambda x: np.zeros(2), diffusion=lambda x: 0.2 * np.eye(2))
    sys = HamiltonianSystem(m, 0.0)
    tr = integrate_backward(sys, [0.3, 0.7], TimeGrid(0, 1, 16))
    np.testing.assert_allclose(tr.x_fine, np.tile([0.3, 0.7], (33, 1)))
    np.testing.assert_allclose(tr.p_fine, 0.0)


def test_stages_satisfy_scheme_equations(nl_sys):
    x, p, h = np.array([0.2, -0.4]), np.array([0.05, -0.02]), 0.05
    q = inner_solve_momentum(nl_sys, x, p, h)
    np.testing.assert_allclose(q, p + 0.5 * h * nl_sys.dH_dx(x, q), atol=1e-13)
    xp = inner_solve_position(nl_sys, x, q, h)
    np.testing.assert_allclose(xp, x - 0.5 * h * (nl_sys.dH_dp(x, q) + nl_sys.dH_dp(xp, q)), atol=1e-13)


def test_batch_matches_individual(nl_sys):
    ys = np.array([[0.3, -0.2], [0.0, 0.5], [-0.7, 0.1]])
    grid = TimeGrid(0.5, 1.0, 20)
    bt = integrate_backward_batch(nl_sys, ys, grid)
    for b, y in enumerate(ys):
        single = integrate_backward(nl_sys, y, grid)
        np.testing.assert_allclose(bt.member(b).x_fine, single.x_fine, atol=1e-14)
        np.testing.assert_allclose(bt.member(b).p_fine, single.p_fine, atol=1e-14)


@pytest.mark.parametrize("kappa", [1.0, 3.0, -0.5])
def test_one_step_map_is_symplectic(kappa):
    sys = HamiltonianSystem(nonlinear2(), kappa)
    tr = integrate_backward(sys, [0.3, -0.2], TimeGrid(0.5, 1, 50))
    for k in (0, 30, 100):
        jac = one_step_jacobian(sys, tr.x_fine[k], tr.p_fine[k], 0.005)
        assert abs(np.linalg.det(jac) - 1.0) <= 1e-6
        # J^T Omega J = Omega
        omega = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
        np.testing.assert_allclose(jac.T @ omega @ jac, omega, atol=1e-7)


def test_energy_drift_is_second_order():
    sys = HamiltonianSystem(ou2(), 3.0)
    d = [hamiltonian_drift_diagnostic(sys, integrate_backward(sys, [0.3, -0.2], TimeGrid(0, 1, N))) for N in (50, 100)]
    assert 3.0 < d[0] / d[1] < 5.0


def test_leaving_domain_raises():
    m = lognormal([2.0], [3.0])
    sys = HamiltonianSystem(m, 0.0)
    # pure drift pushes x toward 0 going backward; a long horizon exits x > 0
    m_neg = DiffusionModel(
        1, drift=lambda x: np.array([5.0]), diffusion=lambda x: np.array([[0.2]]), lower=np.array([0.0])
    )
    with pytest.raises(OutOfDomain):
        integrate_backward(HamiltonianSystem(m_neg, 0.0), [0.5], TimeGrid(0, 1, 10))
    with pytest.raises(OutOfDomain):
        integrate_backward(sys, [-1.0], TimeGrid(0, 1, 10))


def test_inner_newton_divergence_reported(nl_sys):
    with pytest.raises(InnerNewtonDivergence):
        integrate_backward(HamiltonianSystem(nonlinear2(), 50.0), [1.0, -1.0], TimeGrid(0, 5, 2), max_inner=1)


def test_csv_dump(tmp_path, ou_sys):
    tr = integrate_backward(ou_sys, [0.1, -0.05], TimeGrid(0, 1, 8))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(tr, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["k", "t_k", "x_1", "x_2", "p_1", "p_2"]
    assert len(rows) == 10
    assert float(rows[-1][1]) == 1.0 and float(rows[-1][4]) == 0.0
    assert float(rows[1][2]) == tr.x[0][0]  # 17 significant digits round-trip exactly

    at_end = integrate_backward(ou_sys, [0.1, -0.05], TimeGrid(1, 1, 8))
    write_trajectory_csv(at_end, path)
    rows = list(csv.reader(open(path)))
    assert len(rows) == 2
    assert [float(v) for v in rows[1][2:]] == [0.1, -0.05, 0.0, 0.0]
