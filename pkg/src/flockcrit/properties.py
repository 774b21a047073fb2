"""The property suite behind ``flockcrit validate``.

Each check returns ``{"passed": bool, ...details}``. Trial counts and
tolerances come from :data:`DEFAULTS`, overridable per check from config.
"""
from __future__ import annotations

import copy
import math
import time

import numpy as np

from .diagnostics import diameters, flocking_check
from .dynamics1d import initial_data_1d
from .dynamics2d import (dqrs_diagnostics, gradient_rhs_2d, initial_data_2d,
                         measure_initial_2d)
from .kernels import ModelParams, PowerLaw, flock_diameter
from .majorant import (COMPARISON_CASES, EPS, GapParams, MajorantParams, StiffCurveError,
                       cs_majorant_params, gap_trial_max_ratio, h_curve_2d,
                       integrate_separatrix, random_gap_trial, riccati_agrees,
                       run_comparison_trials, separatrix_classification_trial, zeta_curve,
                       zeta_domain_end, zeta_middle_branch)
from .simulate import run_simulation
from .stepping import StepConfig

__all__ = ["DEFAULTS", "merged_settings", "run_validation", "CHECKS", "mat_square_variant"]

DEFAULTS = {
    "comparison": {"trials": 1000, "tol": 1e-9, "cases": ["1a", "1b", "2a", "2b"]},
    "separatrix": {"triples": 50, "offset": 0.1, "slope_tol": 1e-2},
    "riccati": {"instances": 500},
    "gap": {"trials": 200, "rel_tol": 1e-9},
    "zeta": {"sets": 100, "tol": 1e-10},
    "conservation": {"N": 100, "t_end": 10.0, "dt": 1e-3, "momentum_tol": 1e-8},
    "flocking": {"N": 200, "t_end": 20.0, "dt": 0.02, "V0": 0.1, "d0": -0.3,
                 "support": [-0.5, 0.5], "energy_tol": 1e-8},
    "trace": {"n_axis": 8, "t_end": 1.0, "dt": 0.01, "tol": 1e-8},
    "h_curve": {"n_axis": 8, "t_end": 10.0, "dt": 0.02},
}


def merged_settings(overrides: dict | None) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for name, vals in (overrides or {}).items():
        if name not in out:
            raise KeyError(f"unknown validation check {name!r}")
        unknown = set(vals) - set(out[name])
        if unknown:
            raise KeyError(f"unknown settings for {name}: {sorted(unknown)}")
        out[name].update(vals)
    return out


def _random_mp(rng) -> MajorantParams:
    g = rng.uniform(0.2, 2.0)
    return MajorantParams(g, g * rng.uniform(1.0, 2.0), rng.uniform(0.0, 1.5), rng.uniform(0.1, 2.0))


def check_comparison(s, rng, params=None):
    per_case = {}
    for case in s["cases"]:
        if case not in COMPARISON_CASES:
            raise ValueError(f"unknown comparison case {case!r}")
        rep = run_comparison_trials(_random_mp(rng), case, s["trials"], rng, s["tol"])
        per_case[case] = vars(rep)
    passed = all(r["violations"] == 0 and r["accepted"] == s["trials"] for r in per_case.values())
    return {"passed": passed, "cases": per_case}


def check_separatrix(s, rng, params=None):
    fails, slope_err = [], 0.0
    for _ in range(s["triples"]):
        E, F, G = rng.uniform(0.2, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(0.2, 3.0)
        curve = integrate_separatrix(E, F, G, 2.0)
        eta0 = rng.uniform(0.05, 1.0) * min(2.0, 0.9 * curve.finite_extent)
        fates = separatrix_classification_trial(E, F, G, eta0, s["offset"])
        h = 1e-3
        slope_err = max(slope_err, abs((curve(h) - curve(0.0)) / h + F / (E + G)))
        if fates != ("converges", "diverges") or curve.anchor != -E:
            fails.append({"E": E, "F": F, "G": G, "eta0": eta0, "fates": list(fates)})
    return {"passed": not fails and slope_err <= s["slope_tol"], "failures": fails,
            "max_slope_error": slope_err}


def check_riccati(s, rng, params=None):
    bad = []
    for _ in range(s["instances"]):
        g = rng.uniform(0.1, 3.0)
        Gm = g * rng.uniform(1.0, 3.0)
        c = rng.uniform(0.0, 0.4 * g * g)
        d0 = rng.uniform(-Gm - 2.0, 1.0)
        if not riccati_agrees(g, Gm, c, d0):
            bad.append([g, Gm, c, d0])
    return {"passed": not bad, "disagreements": bad}


def check_gap(s, rng, params=None):
    worst = 0.0
    for k in range(s["trials"]):
        mp = _random_mp(rng)
        B = rng.uniform(0.1, 1.0)
        ratio, _ = gap_trial_max_ratio(mp, B, random_gap_trial(mp, B, rng, fast=bool(k % 2)))
        worst = max(worst, ratio)
    return {"passed": worst <= 1.0 + s["rel_tol"], "max_ratio": worst}


def check_zeta(s, rng, params=None):
    """Jump between the flat and decreasing branches, and the zero at the domain end."""
    worst = 0.0
    for k in range(s["sets"]):
        delta, B, C = rng.uniform(0.1, 2.0, size=3)
        G = delta if k % 4 == 0 else rng.uniform(0.1, 2.0)
        x0 = delta * B / (2 * C)
        worst = max(worst, abs(zeta_curve(delta, B, C, G, x0)
                               - zeta_middle_branch(delta, B, C, G, x0)))
        worst = max(worst, abs(zeta_curve(delta, B, C, G, zeta_domain_end(delta, B, C, G))))
    return {"passed": worst <= s["tol"], "max_jump": worst}


def _cs_params(params):
    if params is not None and params.model == "CS":
        return params
    return ModelParams("CS", 1.0, PowerLaw(0.5))


def check_conservation(s, rng, params=None):
    cs = _cs_params(params)
    ens = initial_data_1d(0.2, -0.4, (-0.5, 0.5), "Sine", s["N"], cs.mass)
    res = run_simulation(ens, cs, StepConfig(s["dt"], adaptive=False), s["t_end"],
                         record_dt=s["t_end"])
    P0 = float(ens.w @ ens.u)
    drift = abs(float(res.final.w @ res.final.u) - P0)
    mass_ok = float(res.final.w.sum()) == float(ens.w.sum())
    ok = drift <= s["momentum_tol"] * (1 + abs(P0)) and mass_ok and res.blowup is None
    return {"passed": ok, "momentum_drift": drift, "mass_exact": mass_ok}


def check_flocking(s, rng, params=None):
    model = params or ModelParams("CS", 1.0, PowerLaw(0.5))
    ens = initial_data_1d(s["V0"], s["d0"], tuple(s["support"]), "NShape", s["N"], model.mass)
    res = run_simulation(ens, model, StepConfig(s["dt"]), s["t_end"])
    S0, V0 = res.records[0].S, res.records[0].V
    D = flock_diameter(model, S0, V0)
    rep = flocking_check(res.records, model, D, N=s["N"])
    energy = [r.energy for r in res.records]
    rises = float(np.max(np.diff(energy))) if len(energy) > 1 else 0.0
    ok = rep.passed and res.blowup is None and rises <= s["energy_tol"]
    return {"passed": ok, "violations": rep.violations[:5], "fitted_rate": rep.fitted_rate,
            "guaranteed_rate": rep.guaranteed_rate, "max_energy_increase": rises}


def mat_square_variant(M):
    """M @ M with M11 + M12 in place of the trace in the off-diagonal entries.

    Kept as a contrast for the trace check: this variant breaks the identities.
    """
    out = M @ M
    out[:, 0, 1] = M[:, 0, 1] * (M[:, 0, 0] + M[:, 0, 1])
    out[:, 1, 0] = M[:, 1, 0] * (M[:, 0, 0] + M[:, 0, 1])
    return out


def check_trace(s, rng, params=None):
    """M' against the (d, q, r, s) form: d' + (d^2 + eta^2)/2 and x' + x d for x = q, r, s.

    The residual of :func:`mat_square_variant` is reported alongside; it does
    not vanish.
    """
    cs = _cs_params(params)
    ens = initial_data_2d(0.3, -0.2, 0.2, "disk", s["n_axis"], cs.mass)
    ens.u = ens.u + 0.05 * rng.standard_normal(ens.u.shape)
    ens.M = ens.M + 0.3 * rng.standard_normal(ens.M.shape)
    res = run_simulation(ens, cs, StepConfig(s["dt"]), s["t_end"], frame_dt=0.0)
    worst = worst_variant = 0.0
    for e in res.frames:
        rate = gradient_rhs_2d(e, cs)
        lin = rate + e.M @ e.M
        dg = dqrs_diagnostics(e.M)
        d = dg["d"]
        pred = {
            "d": -(d * d + dg["eta2"]) / 2 + lin[:, 0, 0] + lin[:, 1, 1],
            "q": -dg["q"] * d + lin[:, 0, 0] - lin[:, 1, 1],
            "r": -dg["r"] * d + lin[:, 0, 1],
            "s": -dg["s"] * d + lin[:, 1, 0],
        }
        for M_rate, acc in ((rate, "true"), (-mat_square_variant(e.M) + lin, "variant")):
            got = dqrs_diagnostics(M_rate)
            res_max = max(float(np.max(np.abs(got[k] - pred[k]))) for k in pred)
            if acc == "true":
                worst = max(worst, res_max)
            else:
                worst_variant = max(worst_variant, res_max)
    return {"passed": worst <= s["tol"], "max_identity_residual": worst,
            "variant_square_residual": worst_variant, "frames": len(res.frames)}


def check_h_curve(s, rng, params=None):
    """2D runs certified by (zeta, h) keep the gap bound and stay regular."""
    cs = _cs_params(params)
    results = []
    for V0, d0, B0 in [(0.02, -0.05, 0.02), (0.05, -0.1, 0.05), (0.03, 0.0, 0.1)]:
        ens = initial_data_2d(V0, d0, B0, "disk", s["n_axis"], cs.mass)
        V, dmin, K = measure_initial_2d(ens)
        S0, _ = diameters(ens)
        mp = cs_majorant_params(cs, flock_diameter(cs, S0, V))
        cert = None
        for B in np.linspace(max(K, 1e-3), mp.gamma / math.sqrt(2), 6)[:-1]:
            for frac in (0.25, 0.5, 0.75, 1.0):
                gp = GapParams(frac * math.sqrt(mp.gamma ** 2 - 2 * B * B), float(B))
                z = zeta_curve(gp.delta, gp.B, mp.C, mp.G, V)
                if not z or K > z:
                    continue
                try:
                    h = h_curve_2d(mp, gp, max(V, EPS))
                except (ValueError, StiffCurveError):
                    continue
                if dmin >= h(V) + h.margin(V):
                    cert = gp
                    break
            if cert:
                break
        if cert is None:
            results.append({"V0": V0, "d0": d0, "B0": B0, "certified": False})
            continue
        res = run_simulation(ens, cs, StepConfig(s["dt"]), s["t_end"], frame_dt=0.0)
        worst = max(float(np.max(np.maximum(np.abs(dg["q"]), 2 * np.maximum(np.abs(dg["r"]), np.abs(dg["s"])))))
                    for dg in (dqrs_diagnostics(e.M) for e in res.frames))
        results.append({"V0": V0, "d0": d0, "B0": B0, "certified": True, "delta": cert.delta,
                        "B": cert.B, "blowup": res.blowup is not None,
                        "max_qrs_over_B": worst / cert.B})
    ok = all(not r["certified"] or (not r["blowup"] and r["max_qrs_over_B"] <= 1 + 1e-9)
             for r in results)
    return {"passed": ok, "runs": results,
            "note": "h is integrated without sign adjustment; consistency is judged by these runs"}


CHECKS = {
    "comparison": check_comparison,
    "separatrix": check_separatrix,
    "riccati": check_riccati,
    "gap": check_gap,
    "zeta": check_zeta,
    "conservation": check_conservation,
    "flocking": check_flocking,
    "trace": check_trace,
    "h_curve": check_h_curve,
}


def run_validation(seed: int = 0, overrides: dict | None = None, only=None,
                   params: ModelParams | None = None) -> dict:
    """Run the suite; every check draws from its own stream derived from ``seed``."""
    settings = merged_settings(overrides)
    names = list(CHECKS) if only is None else list(only)
    report = {"seed": seed, "checks": {}}
    order = list(CHECKS)
    for name in names:
        # streams keyed by check, so --only reproduces the full run's verdicts
        rng = np.random.default_rng([seed, order.index(name)])
        t0 = time.perf_counter()
        result = CHECKS[name](settings[name], rng, params)
        result["settings"] = settings[name]
        result["seconds"] = round(time.perf_counter() - t0, 3)
        report["checks"][name] = result
    report["all_passed"] = all(r["passed"] for r in report["checks"].values())
    return report
