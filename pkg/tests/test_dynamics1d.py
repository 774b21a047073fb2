import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from flockcrit.diagnostics import diameters
from flockcrit.dynamics1d import (DegenerateNormalization, Ensemble1D, InfeasibleInitialData,
                                  density_rhs, distance_to_support, initial_data_1d,
                                  profile_centre, seed_tracers, slope_rhs, step,
                                  support_intervals, two_blob_data, velocity_profile_1d,
                                  velocity_rhs, write_trajectory_csv)
from flockcrit.kernels import ModelParams, PowerLaw, Tabulated, flock_diameter
from flockcrit.majorant import (Classification, closed_bounds_1d, closed_threshold_1d,
                                cs_majorant_params, riccati_blowup_time)
from flockcrit.simulate import run_simulation
from flockcrit.stepping import BlowUpDetected, NumericalFailure, StepConfig, evolve

CS = ModelParams("CS", 1.0, PowerLaw(0.5))
MT = ModelParams("MT", 1.0, PowerLaw(0.5))


def pair(model_u=(0.0, 1.0)):
    return Ensemble1D(np.array([0.0, 1.0]), np.array(model_u), np.array([1.0, 1.0]),
                      np.zeros(2), np.ones(2))


def random_ensemble(seed, n=12):
    rng = np.random.default_rng(seed)
    return Ensemble1D(np.sort(rng.uniform(-2, 2, n)), rng.normal(size=n), rng.uniform(0.1, 1, n),
                      rng.normal(size=n), rng.uniform(0.5, 2, n))


# ------------------------------------------------------------------ forces

def test_aligned_flock_feels_no_force():
    ens = Ensemble1D(np.linspace(0, 1, 5), np.full(5, 0.7), np.full(5, 0.2), np.zeros(5),
                     np.ones(5))
    for model in (CS, MT):
        assert np.all(velocity_rhs(ens, model) == 0)
        assert np.all(slope_rhs(ens, model) == 0)


def test_two_particle_accelerations():
    a = velocity_rhs(pair(), CS)
    assert a == pytest.approx([1 / math.sqrt(2), -1 / math.sqrt(2)], abs=1e-15)
    a = velocity_rhs(pair(), MT)
    s = 1 / math.sqrt(2)
    assert a == pytest.approx([s / (1 + s), -s / (1 + s)], abs=1e-15)


def brute_force(ens, model):
    """Direct double loop over massive particles, as an independent oracle."""
    n = ens.n
    acc, lin = np.zeros(n), np.zeros(n)
    phi, dphi = model.kernel.phi, model.kernel.dphi
    for i in range(n):
        Phi = sum(ens.w[j] * phi(abs(ens.x[i] - ens.x[j])) for j in range(n) if ens.w[j] > 0)
        for j in range(n):
            if ens.w[j] == 0:
                continue
            r = abs(ens.x[i] - ens.x[j])
            du = ens.u[j] - ens.u[i]
            acc[i] += ens.w[j] * phi(r) * du
            lin[i] += ens.w[j] * dphi(r) * np.sign(ens.x[i] - ens.x[j]) * du
        if model.model == "MT":
            dPhi = sum(ens.w[j] * dphi(abs(ens.x[i] - ens.x[j])) * np.sign(ens.x[i] - ens.x[j])
                       for j in range(n) if ens.w[j] > 0)
            # d/dx of sum w phi (u_j - u) / Phi, minus the transported e
            lin[i] = lin[i] / Phi - acc[i] * dPhi / Phi ** 2 - ens.e[i]
            acc[i] /= Phi
        else:
            lin[i] -= ens.e[i] * Phi
    return acc, -ens.e ** 2 + lin


@pytest.mark.parametrize("model", [CS, MT], ids=["CS", "MT"])
@pytest.mark.parametrize("seed", range(4))
def test_forces_match_double_loop(model, seed):
    ens = random_ensemble(seed)
    acc, de = brute_force(ens, model)
    assert np.allclose(velocity_rhs(ens, model), acc, atol=1e-13)
    assert np.allclose(slope_rhs(ens, model), de, atol=1e-13)


def test_mt_slope_is_derivative_of_velocity_field():
    # perturb one particle's position: the slope term is d(acc)/dx with u held fixed
    ens = random_ensemble(7)
    i, h = 3, 1e-6
    _, lin = brute_force(ens, MT)
    xp, xm = ens.x.copy(), ens.x.copy()
    xp[i] += h
    xm[i] -= h
    Ep = Ensemble1D(xp, ens.u, ens.w, ens.e, ens.rho)
    Em = Ensemble1D(xm, ens.u, ens.w, ens.e, ens.rho)
    # with e = 0, the x-derivative of acc at fixed u_i is the alignment part of the slope rate
    grad = (velocity_rhs(Ep, MT)[i] - velocity_rhs(Em, MT)[i]) / (2 * h)
    zero_e = Ensemble1D(ens.x, ens.u, ens.w, np.zeros(ens.n), ens.rho)
    assert slope_rhs(zero_e, MT)[i] == pytest.approx(grad, rel=1e-6, abs=1e-8)


def test_isolated_particle_slope_is_riccati():
    ens = Ensemble1D(np.array([0.0]), np.array([0.3]), np.array([2.0]), np.array([-0.4]),
                     np.array([1.0]))
    assert slope_rhs(ens, CS)[0] == pytest.approx(-0.16 + 0.4 * 2.0)


def test_density_rhs():
    ens = random_ensemble(1)
    assert np.array_equal(density_rhs(ens), -ens.rho * ens.e)


def test_mt_degenerate_normalization():
    k = Tabulated((0.0, 1.0), (1.0, 0.0))
    model = ModelParams("MT", 1.0, k)
    ens = Ensemble1D(np.array([0.0, 5.0]), np.array([0.0, 1.0]), np.array([1.0, 0.0]),
                     np.zeros(2), np.array([1.0, 0.0]))
    with pytest.raises(DegenerateNormalization):
        velocity_rhs(ens, model)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_cs_forces_conserve_momentum(seed):
    ens = random_ensemble(seed, 20)
    a = velocity_rhs(ens, CS)
    assert abs(ens.w @ a) <= 1e-12 * (1 + np.abs(ens.w * a).sum())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_tracers_do_not_act_on_massive_particles(seed):
    ens = random_ensemble(seed, 10)
    with_tr = seed_tracers(ens, [0.3, 1.0], lambda x: 5 * np.ones_like(x), lambda x: 0 * x)
    n = ens.n
    for model in (CS, MT):
        assert np.allclose(velocity_rhs(with_tr, model)[:n], velocity_rhs(ens, model), atol=1e-14)
        assert np.allclose(slope_rhs(with_tr, model)[:n], slope_rhs(ens, model), atol=1e-14)


# ---------------------------------------------------------------- stepping

def test_rigid_translation():
    ens = Ensemble1D(np.linspace(0, 1, 6), np.full(6, 0.5), np.full(6, 1 / 6), np.zeros(6),
                     np.ones(6))
    out = step(ens, CS, StepConfig(0.1))
    assert np.allclose(out.x, ens.x + 0.05, rtol=0, atol=1e-15)
    assert np.array_equal(out.u, ens.u) and np.array_equal(out.e, ens.e)
    assert np.array_equal(out.rho, ens.rho) and out.t == pytest.approx(0.1)


def test_adaptive_step_size():
    cfg = StepConfig(0.05)
    assert cfg.dt_for(0.5) == 0.05
    assert cfg.dt_for(10.0) == pytest.approx(0.01)
    assert StepConfig(0.05, adaptive=False).dt_for(1e3) == 0.05
    with pytest.raises(ValueError):
        StepConfig(0.0)


def test_rk4_order_on_a_single_particle():
    # isolated particle: e' = -e^2 - w e, with exact solution
    def final(dt):
        ens = Ensemble1D(np.array([0.0]), np.array([0.0]), np.array([1.0]), np.array([-0.5]),
                         np.array([1.0]))
        out = evolve(ens, lambda e, tm: step(e, CS, StepConfig(dt, adaptive=False), tm), 1.0)
        return out.ensemble.e[0], out.ensemble.rho[0]

    e0 = -0.5
    exact = e0 * math.exp(-1) / (1 + e0 * (1 - math.exp(-1)))
    errs = [abs(final(dt)[0] - exact) for dt in (0.1, 0.05)]
    assert errs[1] < errs[0] / 12
    # density along the path: rho' = -rho e
    sol = solve_ivp(lambda t, y: [-y[0] ** 2 - y[0], -y[1] * y[0]], (0, 1), [e0, 1.0],
                    rtol=1e-12, atol=1e-14)
    assert final(0.01)[1] == pytest.approx(sol.y[1, -1], rel=1e-8)


def test_density_blows_up_with_slope():
    ens = Ensemble1D(np.array([0.0]), np.array([0.0]), np.array([1.0]), np.array([-3.0]),
                     np.array([1.0]))
    res = run_simulation(ens, CS, StepConfig(0.01, blowup_cutoff=1e4), 5.0, record_dt=0,
                         frame_dt=0)
    assert res.blowup is not None
    last = res.frames[-1]
    assert last.rho[0] > 1e3 and last.e[0] < -1e3
    # e' = -e^2 - e from -3 blows up at log(3/2)
    assert res.blowup.T_c == pytest.approx(math.log(1.5), abs=1e-3)


def test_non_finite_state_raises():
    ens = Ensemble1D(np.array([0.0, 1.0]), np.array([0.0, np.nan]), np.ones(2), np.zeros(2),
                     np.ones(2))
    with pytest.raises(NumericalFailure):
        step(ens, CS, StepConfig(0.1))


def test_subcritical_data_stays_bounded():
    ens = initial_data_1d(0.05, -0.3, (-0.5, 0.5), "NShape", 100)
    S0, V0 = diameters(ens)
    D = flock_diameter(CS, S0, V0)
    assert closed_threshold_1d(cs_majorant_params(CS, D), V0, float(ens.e.min())) \
        is Classification.SUBCRITICAL
    res = run_simulation(ens, CS, StepConfig(0.05), 50.0, record_dt=1.0)
    assert res.blowup is None and res.final.t == pytest.approx(50.0)
    assert min(r.grad_min for r in res.records) >= -0.3 - 1e-9


def test_supercritical_data_blows_up_before_majorant():
    ens = initial_data_1d(0.5, -3.0, (-0.5, 0.5), "NShape", 200)
    S0, V0 = diameters(ens)
    D = flock_diameter(CS, S0, V0)
    mp = cs_majorant_params(CS, D)
    d0 = float(ens.e.min())
    assert d0 < closed_bounds_1d(mp, V0)[1]
    res = run_simulation(ens, CS, StepConfig(0.01), 5.0, record_dt=1.0)
    assert res.blowup is not None
    T_major = riccati_blowup_time(mp.Gamma, mp.C * V0, d0)
    assert res.blowup.T_c <= T_major * 1.1
    assert abs(res.blowup.location) < 0.1


# ---------------------------------------------------------------- profiles

def test_nshape_descent_width():
    u0, du0 = velocity_profile_1d(1.0, -2.0, (-1, 1), "NShape", centre=0.0)
    x = np.linspace(-1, 1, 4001)
    steep = x[du0(x) < -1.5]
    assert steep.max() - steep.min() == pytest.approx(0.5, abs=1e-3)
    assert u0(x).max() - u0(x).min() == pytest.approx(1.0)
    assert du0(x).min() == -2.0


@pytest.mark.parametrize("profile", ["NShape", "Sine"])
@pytest.mark.parametrize("V0,d0", [(0.1, -0.3), (0.5, -3.0), (0.2, -0.8)])
def test_initial_data_matches_requested(profile, V0, d0):
    N = 200
    ens = initial_data_1d(V0, d0, (-0.5, 0.5), profile, N)
    _, V = diameters(ens)
    assert abs(V - V0) <= 2 / N * max(1, V0)
    fd = np.diff(ens.u) / np.diff(ens.x)
    assert abs(fd.min() - d0) <= 2 / N * max(1, abs(d0)) * 10
    assert ens.e.min() == pytest.approx(d0)
    assert ens.w.sum() == pytest.approx(1.0)
    assert np.allclose(ens.rho, 1.0)


def test_initial_data_with_positive_slope():
    ens = initial_data_1d(0.4, 0.1, (0.0, 2.0), "NShape", 200)
    assert ens.e.min() == pytest.approx(0.1)
    assert diameters(ens)[1] == pytest.approx(0.4, abs=0.01)


def test_infeasible_initial_data():
    with pytest.raises(InfeasibleInitialData):
        initial_data_1d(1.0, -0.1, (-0.5, 0.5))
    with pytest.raises(InfeasibleInitialData):
        initial_data_1d(0.0, -1.0)
    with pytest.raises(InfeasibleInitialData):
        initial_data_1d(0.1, 1.0, (0.0, 1.0))
    ens = initial_data_1d(0.0, 0.0, (-1, 1), "NShape", 10)
    assert np.all(ens.u == 0) and np.all(ens.e == 0)


def test_profile_is_constant_outside_support():
    u0, du0 = velocity_profile_1d(0.3, -1.0, (-0.5, 0.5), "Sine", centre=profile_centre((-0.5, 0.5), 50))
    far = np.array([-3.0, -0.6, 0.6, 3.0])
    assert np.all(du0(far) == 0)
    assert u0(far[0]) == u0(far[1]) and u0(far[2]) == u0(far[3])


# ------------------------------------------------------------------ tracers

def test_tracers_are_massless_and_placed_at_offsets():
    ens = two_blob_data(N=100)
    tr = seed_tracers(ens, [0.5, 1.0, 2.0], lambda x: 0 * x, lambda x: 0 * x)
    assert math.fsum(tr.w) == math.fsum(ens.w)
    assert math.fsum(tr.w * tr.u) == math.fsum(ens.w * ens.u)
    lv = tr.level[tr.tracers]
    assert sorted(set(lv.tolist())) == [0.5, 1.0, 2.0]
    comps = support_intervals(ens)
    assert len(comps) == 2
    x = tr.x[tr.tracers]
    assert np.all(distance_to_support(ens, x) <= lv)
    # the middle gap has width 1 - 1/100, so only lambda = 0.5 fits there
    inner = x[(x > comps[0][1]) & (x < comps[1][0])]
    assert inner.size == 0 or np.all(tr.level[tr.tracers][np.isin(x, inner)] == 0.5)


def test_distance_to_support():
    ens = initial_data_1d(0.0, 0.0, (0.0, 1.0), "NShape", 10)
    # particles at 0.05, ..., 0.95; half spacing 0.05
    d = distance_to_support(ens, np.array([0.5, 1.0, 2.0, -1.0]))
    assert d == pytest.approx([0.0, 0.0, 1.0, 1.0], abs=1e-12)


def test_zero_offset_tracer_follows_edge_particle():
    # a level-0 tracer starts on the outermost particle and carries the same data
    N = 100
    ens = initial_data_1d(0.2, -0.5, (-0.5, 0.5), "Sine", N)
    u0, du0 = velocity_profile_1d(0.2, -0.5, (-0.5, 0.5), "Sine",
                                  centre=profile_centre((-0.5, 0.5), N))
    tr = seed_tracers(ens, [0.0], u0, du0)
    out = run_simulation(tr, CS, StepConfig(0.02), 1.0).final
    left, right = np.argmin(ens.x), np.argmax(ens.x)
    tx = out.x[N:]
    assert tx.size == 2
    assert np.allclose(sorted(tx), [out.x[left], out.x[right]], atol=1e-12)
    assert np.allclose(sorted(out.u[N:]), sorted([out.u[left], out.u[right]]), atol=1e-12)


# ----------------------------------------------------------- conservation

def test_cs_conservation_over_long_run():
    ens = initial_data_1d(0.2, -0.4, (-0.5, 0.5), "Sine", 50)
    P0 = ens.w @ ens.u
    res = run_simulation(ens, CS, StepConfig(1e-3, adaptive=False), 2.0, record_dt=2.0)
    assert res.final.w.sum() == ens.w.sum()
    assert abs(res.final.w @ res.final.u - P0) <= 1e-8 * (1 + abs(P0))


def test_mt_does_not_conserve_momentum_but_flocks():
    # asymmetric masses make the normalized alignment drift the mean velocity
    ens = two_blob_data(((-1.0, -0.5), (0.5, 2.0)), 60, 1.0,
                        lambda x: np.where(x < 0, 0.3, -0.1) + 0 * x, lambda x: 0 * x)
    res = run_simulation(ens, MT, StepConfig(0.02), 10.0, record_dt=0.5)
    drift = abs(res.final.w @ res.final.u - ens.w @ ens.u)
    assert drift > 1e-3
    assert res.records[-1].V < 0.2 * res.records[0].V


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_velocity_maximum_principle(seed):
    ens = random_ensemble(seed, 15)
    res = run_simulation(ens, CS, StepConfig(0.01), 0.5, frame_dt=0)
    hi = [f.u.max() for f in res.frames]
    lo = [f.u.min() for f in res.frames]
    assert np.all(np.diff(hi) <= 1e-9 * 0.01)
    assert np.all(np.diff(lo) >= -1e-9 * 0.01)


def test_trajectory_csv(tmp_path):
    ens = pair()
    frames = [ens, step(ens, CS, StepConfig(0.1))]
    path = tmp_path / "t.csv"
    write_trajectory_csv(path, frames)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "i", "x", "u", "e", "rho", "w"]
    assert len(rows) == 5
    assert float(rows[3][0]) == pytest.approx(0.1)


def test_evolve_reports_blowup_as_value():
    ens = Ensemble1D(np.array([0.0]), np.array([0.0]), np.array([1.0]), np.array([-10.0]),
                     np.array([1.0]))
    out = evolve(ens, lambda e, tm: step(e, CS, StepConfig(0.01, blowup_cutoff=100.0), tm), 1.0)
    assert isinstance(out.blowup, BlowUpDetected)
    # e' = -e^2 - e: from -10 the crossing of -100 happens at log(1.1 * 99 / 90)/1 ~ 0.0953... - 0.0102
    exact = math.log((-100 + 1) / -100 * -10 / (-10 + 1))
    assert out.blowup.T_c == pytest.approx(exact, abs=0.01)
