import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flockcrit.dynamics1d import DegenerateNormalization, InfeasibleInitialData
from flockcrit.dynamics2d import (Ensemble2D, dqrs_diagnostics, ensemble_from_field_2d,
                                  gradient_rhs_2d, initial_data_2d, measure_initial_2d,
                                  step_2d, support_points_2d, velocity_rhs_2d,
                                  write_trajectory_csv_2d)
from flockcrit.kernels import ModelParams, PowerLaw, Tabulated, flock_diameter
from flockcrit.majorant import Classification, closed_threshold_2d, cs_majorant_params
from flockcrit.simulate import run_simulation
from flockcrit.stepping import BlowUpDetected, NumericalFailure, StepConfig
from flockcrit.sweep import _measure

CS = ModelParams("CS", 1.0, PowerLaw(0.5))
MT = ModelParams("MT", 1.0, PowerLaw(0.5))


def random_ensemble(seed, n=10):
    rng = np.random.default_rng(seed)
    return Ensemble2D(rng.uniform(-2, 2, (n, 2)), rng.normal(size=(n, 2)),
                      rng.uniform(0.1, 1, n), rng.normal(size=(n, 2, 2)), rng.uniform(0.5, 2, n))


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def brute_force(ens, model):
    """Double loop over massive particles: accelerations and the linear part of M'."""
    n = ens.n
    acc, lin = np.zeros((n, 2)), np.zeros((n, 2, 2))
    k = model.kernel
    for i in range(n):
        Phi, gPhi = 0.0, np.zeros(2)
        Ku, gKu = np.zeros(2), np.zeros((2, 2))
        for j in range(n):
            if ens.w[j] == 0:
                continue
            dx = ens.x[i] - ens.x[j]
            r = float(np.hypot(*dx))
            g = float(k.dphi(r)) * dx / r if r > 0 else np.zeros(2)
            Phi += ens.w[j] * float(k.phi(r))
            gPhi += ens.w[j] * g
            Ku += ens.w[j] * float(k.phi(r)) * ens.u[j]
            gKu += ens.w[j] * np.outer(g, ens.u[j])
        if model.model == "CS":
            acc[i] = Ku - Phi * ens.u[i]
            lin[i] = gKu - np.outer(gPhi, ens.u[i]) - ens.M[i] * Phi
        else:
            acc[i] = Ku / Phi - ens.u[i]
            lin[i] = gKu / Phi - np.outer(gPhi, Ku) / Phi ** 2 - ens.M[i]
    return acc, lin


# ------------------------------------------------------------------ forces

def test_aligned_flock_feels_no_force():
    ens = random_ensemble(0)
    ens.u[:] = [0.3, -0.2]
    ens.M[:] = 0
    for model in (CS, MT):
        assert np.all(velocity_rhs_2d(ens, model) == 0)
        assert np.all(gradient_rhs_2d(ens, model) == 0)


def test_two_particles_on_first_axis():
    ens = Ensemble2D([[0, 0], [1, 0]], [[-1, 0], [1, 0]], [0.5, 0.5], np.zeros((2, 2, 2)),
                     [1, 1])
    a = velocity_rhs_2d(ens, CS)
    f = 1 / math.sqrt(2)
    assert a == pytest.approx(np.array([[f, 0], [-f, 0]]), abs=1e-15)


@pytest.mark.parametrize("model", [CS, MT], ids=["CS", "MT"])
@pytest.mark.parametrize("seed", range(3))
def test_forces_match_double_loop(model, seed):
    ens = random_ensemble(seed)
    acc, lin = brute_force(ens, model)
    assert np.allclose(velocity_rhs_2d(ens, model), acc, atol=1e-13)
    assert np.allclose(gradient_rhs_2d(ens, model), -ens.M @ ens.M + lin, atol=1e-13)


def test_diagonal_gradient_without_neighbours():
    a, b, w = -0.7, 0.4, 2.0
    ens = Ensemble2D([[0.0, 0.0]], [[0.1, 0.2]], [w], np.diag([a, b]), [1.0])
    assert gradient_rhs_2d(ens, CS)[0] == pytest.approx(-np.diag([a * a, b * b]) - np.diag([a, b]) * w)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0, 2 * math.pi))
def test_rotational_equivariance(seed, theta):
    ens = random_ensemble(seed)
    R = rotation(theta)
    rot = Ensemble2D(ens.x @ R.T, ens.u @ R.T, ens.w, R @ ens.M @ R.T, ens.rho)
    for model in (CS, MT):
        assert np.allclose(velocity_rhs_2d(rot, model), velocity_rhs_2d(ens, model) @ R.T,
                           atol=1e-12)
        assert np.allclose(gradient_rhs_2d(rot, model), R @ gradient_rhs_2d(ens, model) @ R.T,
                           atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_cs_momentum_rate_vanishes(seed):
    ens = random_ensemble(seed, 15)
    a = velocity_rhs_2d(ens, CS)
    assert np.all(np.abs(ens.w @ a) <= 1e-12 * (1 + np.abs(ens.w[:, None] * a).sum(axis=0)))


def test_mt_degenerate_normalization():
    model = ModelParams("MT", 1.0, Tabulated((0.0, 1.0), (1.0, 0.0)))
    ens = Ensemble2D([[0, 0], [5, 0]], [[0, 0], [1, 0]], [1.0, 0.0], np.zeros((2, 2, 2)),
                     [1.0, 0.0])
    with pytest.raises(DegenerateNormalization):
        velocity_rhs_2d(ens, model)


# ------------------------------------------------------------- diagnostics

def test_dqrs_of_identity_and_rotation():
    dg = dqrs_diagnostics(np.eye(2))
    assert [dg[k][0] for k in "dqrs"] == [2, 0, 0, 0] and dg["eta2"][0] == 0
    dg = dqrs_diagnostics(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert [dg[k][0] for k in "dqrs"] == [0, 0, 1, -1] and dg["eta2"][0] == -4


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_eta_squared_is_squared_eigenvalue_gap(entries):
    M = np.array(entries).reshape(2, 2)
    tr, det = np.trace(M), np.linalg.det(M)
    # closed-form 2x2 eigenvalues: (lam1 - lam2)^2 = tr^2 - 4 det
    lam = np.roots([1.0, -tr, det])
    gap2 = (lam[0] - lam[1]) ** 2 if lam.size == 2 else 0.0
    eta2 = dqrs_diagnostics(M)["eta2"][0]
    assert eta2 == pytest.approx(tr * tr - 4 * det, abs=1e-10)
    assert eta2 == pytest.approx(float(np.real(gap2)), abs=1e-8 * (1 + abs(eta2)))


# ------------------------------------------------------------ initial data

def test_support_points():
    pts, area = support_points_2d("square", 2.0, 4)
    assert pts.shape == (16, 2) and area == 4.0
    assert np.allclose(np.unique(pts[:, 0]), [-0.75, -0.25, 0.25, 0.75])
    pts, area = support_points_2d("disk", 1.0, 20)
    assert np.all(np.hypot(*pts.T) <= 1.0) and area == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        support_points_2d("triangle", 1.0, 4)


def test_affine_data_without_shear():
    ens = initial_data_2d(0.2, -0.4, 0.0, "disk", 12)
    dg = dqrs_diagnostics(ens.M)
    assert np.allclose(dg["d"], -0.4) and np.all(dg["q"] == 0)
    assert np.all(dg["r"] == 0) and np.all(dg["s"] == 0)
    assert measure_initial_2d(ens)[2] == 0
    assert ens.w.sum() == pytest.approx(1.0)


def test_pure_shear_measure():
    eps = 0.3
    pts, area = support_points_2d("square", 1.0, 6)
    ens = ensemble_from_field_2d(
        pts,
        lambda p: np.column_stack([eps * p[:, 1], 0 * p[:, 0]]),
        lambda p: np.broadcast_to(np.array([[0.0, 0.0], [eps, 0.0]]), (p.shape[0], 2, 2)).copy(),
        area)
    V, d, K = measure_initial_2d(ens)
    assert d == 0 and K == pytest.approx(2 * eps)
    # the field is consistent with its declared gradient
    assert np.allclose(ens.u[:, 0], eps * ens.x[:, 1])


@pytest.mark.parametrize("support", ["disk", "square"])
@pytest.mark.parametrize("V0,d0,B0", [(0.2, -0.4, 0.1), (0.1, -1.0, 0.5), (0.3, 0.2, 0.0)])
@pytest.mark.parametrize("N", [10, 20, 40])
def test_measured_data_match_request(support, V0, d0, B0, N):
    ens = initial_data_2d(V0, d0, B0, support, N)
    V, d, K = measure_initial_2d(ens)
    tol = 4 / math.sqrt(N)
    assert abs(V - V0) <= tol * V0
    assert d == pytest.approx(d0, abs=1e-15) and K == pytest.approx(B0, abs=1e-15)


def test_antisymmetric_shear_has_complex_spectrum():
    ens = initial_data_2d(0.2, -0.2, 0.4, "disk", 10, antisymmetric=True)
    assert np.all(dqrs_diagnostics(ens.M)["eta2"] < 0)


def test_infeasible_initial_data():
    with pytest.raises(InfeasibleInitialData):
        initial_data_2d(0.0, -0.3, 0.0)
    with pytest.raises(InfeasibleInitialData):
        initial_data_2d(0.1, -0.3, -0.1)


# ----------------------------------------------------------------- stepping

def test_rigid_translation():
    ens = initial_data_2d(0.0, 0.0, 0.0, "square", 4)
    ens.u[:] = [0.5, -0.25]
    out = step_2d(ens, CS, StepConfig(0.1))
    assert np.allclose(out.x, ens.x + [0.05, -0.025], rtol=0, atol=1e-15)
    assert np.array_equal(out.u, ens.u) and np.array_equal(out.M, ens.M)


def test_non_finite_state_is_a_numerical_failure():
    ens = initial_data_2d(0.1, -0.3, 0.0, "square", 4)
    ens.u[0, 0] = np.nan
    with pytest.raises(NumericalFailure):
        step_2d(ens, CS, StepConfig(0.01))


def _predicted(ens):
    m = _measure(ens)
    mp = cs_majorant_params(CS, flock_diameter(CS, m["S0"], m["V0"]))
    return closed_threshold_2d(mp, m["V0"], m["d0"], m["B0"], m["off_diag"])


def test_subcritical_run_stays_regular():
    ens = initial_data_2d(0.05, -0.1, 0.02, "disk", 10)
    assert _predicted(ens) is Classification.SUBCRITICAL
    res = run_simulation(ens, CS, StepConfig(0.05), 50.0, record_dt=50.0)
    assert res.blowup is None and res.final.t == pytest.approx(50.0)
    assert res.records[-1].V < 1e-3 * res.records[0].V


def test_supercritical_run_blows_up():
    # strong compression with same-signed off-diagonal shears
    ens = initial_data_2d(0.5, -3.0, 1.0, "disk", 10)
    assert _predicted(ens) is Classification.SUPERCRITICAL
    res = run_simulation(ens, CS, StepConfig(0.05), 5.0)
    assert isinstance(res.blowup, BlowUpDetected)
    assert 0 < res.blowup.T_c < 5.0


def test_mass_and_momentum_conserved():
    ens = initial_data_2d(0.3, -0.2, 0.2, "square", 8)
    ens.u = ens.u + 0.05 * np.random.default_rng(3).standard_normal(ens.u.shape)
    P0 = ens.w @ ens.u
    res = run_simulation(ens, CS, StepConfig(0.01), 2.0, record_dt=2.0)
    assert np.allclose(res.final.w @ res.final.u, P0, atol=1e-12)
    assert math.fsum(res.final.w) == math.fsum(ens.w)


def test_trajectory_csv(tmp_path):
    ens = initial_data_2d(0.1, -0.3, 0.05, "square", 3)
    path = tmp_path / "traj.csv"
    write_trajectory_csv_2d(path, [ens])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "i", "x1", "x2", "u1", "u2", "M11", "M12", "M21", "M22", "rho", "w"]
    assert len(rows) == 1 + ens.n
    assert float(rows[1][7]) == ens.M[0, 0, 1]
