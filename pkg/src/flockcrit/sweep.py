"""Phase-diagram sweeps over initial data and their consistency checks.

Every grid point is built, run to a finite horizon and labelled
``GloballyRegular``, ``BlowUp`` or ``Undecided``. The empirical label is set
against the closed-form and fast-alignment predictions; a sound theory
never predicts Subcritical for a blow-up nor Supercritical for a survivor.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import diameters
from .dynamics1d import Ensemble1D, InfeasibleInitialData, initial_data_1d
from .dynamics2d import initial_data_2d, measure_initial_2d
from .kernels import ModelParams, NoFlockingGuarantee, flock_diameter
from .majorant import (EPS, Classification, GapParams, classify_fast_1d, classify_fast_2d,
                       closed_threshold_1d, closed_threshold_2d, cs_majorant_params, mt_sigma,
                       mt_majorant_params, sigma_minus_1d, sigma_plus_1d)
from .simulate import run_simulation
from .stepping import NumericalFailure, StepConfig

__all__ = [
    "SweepConfig",
    "PhasePoint",
    "majorant_for",
    "predict_1d",
    "predict_2d",
    "classify_point",
    "phase_diagram",
    "summarize",
    "write_sweep_csv",
    "write_summary_json",
]

GLOBALLY_REGULAR = "GloballyRegular"
BLOW_UP = "BlowUp"
UNDECIDED = "Undecided"


@dataclass(frozen=True)
class SweepConfig:
    params: ModelParams
    dimension: int = 1
    V0_grid: tuple = ()
    d0_grid: tuple = ()
    B0_grid: tuple = (0.0,)
    horizon: float | None = None   # None: 50 / (m phi(D)) per point
    solver: StepConfig = StepConfig(dt_base=0.05)
    N: int = 100
    profile: str = "NShape"
    support: tuple = (-0.5, 0.5)   # 1D interval; in 2D the shape name is used
    support_2d: str = "disk"
    regular_factor: float = 1e-6   # V(T) < factor * V0 counts as aligned

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        for g in (self.V0_grid, self.d0_grid, self.B0_grid):
            if list(g) != sorted(g):
                raise ValueError("grids must be sorted")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def points(self):
        B0s = self.B0_grid if self.dimension == 2 else (0.0,)
        return [(float(v), float(d), float(b)) for b in B0s for v in self.V0_grid
                for d in self.d0_grid]


@dataclass
class PhasePoint:
    V0: float
    d0: float
    B0: float
    outcome: str
    T: float | None = None          # horizon reached, or blow-up time
    predicted_closed: str = Classification.INDETERMINATE.value
    predicted_fast: str = Classification.INDETERMINATE.value
    reason: str = ""
    measured: dict = field(default_factory=dict)

    @property
    def T_c(self):
        return self.T if self.outcome == BLOW_UP else None


def majorant_for(params: ModelParams, D: float):
    if params.model == "CS":
        return cs_majorant_params(params, D)
    return mt_majorant_params(params.kernel, D)


def predict_1d(params: ModelParams, D: float, V0: float, d0: float):
    """(closed, fast) classifications of 1D data with measured (V0, d0)."""
    mp = majorant_for(params, D)
    closed = closed_threshold_1d(mp, V0, d0)
    x_max = max(V0, EPS)
    if params.model == "CS":
        upper, lower = sigma_plus_1d(mp, x_max), sigma_minus_1d(mp, x_max)
    else:
        upper, lower = mt_sigma(mp, x_max, True), mt_sigma(mp, x_max, False)
    return closed, classify_fast_1d(upper, lower, V0, d0)


def _gap_candidates(gamma: float, B0: float, n: int = 4):
    """Admissible (delta, B) pairs with B >= B0 to try for a sub-critical certificate."""
    b_max = gamma / math.sqrt(2.0)
    if B0 >= b_max:
        return []
    out = []
    for B in np.linspace(max(B0, 1e-3 * gamma), b_max, n + 1)[:-1]:
        d_max = math.sqrt(gamma ** 2 - 2 * B * B)
        for frac in np.linspace(1.0 / n, 1.0, n):
            out.append(GapParams(float(frac * d_max), float(B)))
    return out


def predict_2d(params: ModelParams, D: float, V0: float, d0: float, B0: float, off_diag):
    mp = majorant_for(params, D)
    closed = closed_threshold_2d(mp, V0, d0, B0, off_diag)
    fast = Classification.INDETERMINATE
    for gp in _gap_candidates(mp.gamma, B0):
        try:
            if classify_fast_2d(mp, gp, V0, d0, B0) is Classification.SUBCRITICAL:
                fast = Classification.SUBCRITICAL
                break
        except ValueError:
            continue
    if closed is Classification.SUPERCRITICAL:
        fast = Classification.SUPERCRITICAL
    return closed, fast


def _build(V0, d0, B0, cfg: SweepConfig):
    if cfg.dimension == 1:
        return initial_data_1d(V0, d0, cfg.support, cfg.profile, cfg.N, cfg.params.mass)
    return initial_data_2d(V0, d0, B0, cfg.support_2d, cfg.N, cfg.params.mass)


def _measure(ens):
    S, V = diameters(ens)
    if isinstance(ens, Ensemble1D):
        m = ens.massive
        return {"S0": S, "V0": V, "d0": float(np.min(ens.e[m])), "B0": 0.0}
    _, d, K = measure_initial_2d(ens)
    M = ens.M[ens.massive]
    a12 = float(np.min(np.abs(M[:, 1, 0])) * np.sign(M[0, 1, 0]))  # du1/dx2
    a21 = float(np.min(np.abs(M[:, 0, 1])) * np.sign(M[0, 0, 1]))  # du2/dx1
    return {"S0": S, "V0": V, "d0": d, "B0": K, "off_diag": (a12, a21)}


def _settled(ens, params: ModelParams, V0: float, factor: float) -> bool:
    """Velocities aligned to ``factor * V0`` and every gradient decaying."""
    S, V = diameters(ens)
    if V >= factor * V0:
        return False
    floor = 0.5 * params.m * float(params.kernel.phi(S))
    if isinstance(ens, Ensemble1D):
        return float(np.min(ens.e)) > -floor
    return float(np.max(np.abs(ens.M))) < 0.5 * floor


def classify_point(V0: float, d0: float, B0: float, cfg: SweepConfig) -> PhasePoint:
    pt = PhasePoint(V0, d0, B0, UNDECIDED)
    try:
        ens = _build(V0, d0, B0, cfg)
    except InfeasibleInitialData as exc:
        pt.reason = f"infeasible: {exc}"
        return pt
    meas = _measure(ens)
    pt.measured = {k: v for k, v in meas.items() if k != "off_diag"}
    try:
        D = flock_diameter(cfg.params, meas["S0"], meas["V0"])
    except NoFlockingGuarantee as exc:
        pt.reason = f"no flocking guarantee: {exc}"
        D = None
    if D is not None:
        if cfg.dimension == 1:
            closed, fast = predict_1d(cfg.params, D, meas["V0"], meas["d0"])
        else:
            closed, fast = predict_2d(cfg.params, D, meas["V0"], meas["d0"], meas["B0"],
                                      meas["off_diag"])
        pt.predicted_closed, pt.predicted_fast = closed.value, fast.value
        pt.measured["D"] = D
    rate = cfg.params.m * float(cfg.params.kernel.phi(D if D is not None else meas["S0"] + 1.0))
    T = cfg.horizon if cfg.horizon is not None else 50.0 / rate
    scale = max(meas["V0"], 1e-300)
    try:
        res = run_simulation(ens, cfg.params, cfg.solver, T, record_dt=T,
                             stop=lambda e: _settled(e, cfg.params, scale, cfg.regular_factor))
    except NumericalFailure as exc:
        pt.reason = f"numerical failure at t={exc.t_last:g}"
        return pt
    if res.blowup is not None:
        pt.outcome, pt.T = BLOW_UP, res.blowup.T_c
        return pt
    final = res.final
    if meas["V0"] == 0 or _settled(final, cfg.params, scale, cfg.regular_factor):
        pt.outcome, pt.T = GLOBALLY_REGULAR, float(final.t)
        if res.stopped_early:
            pt.reason = "aligned before the horizon"
    else:
        pt.reason = "survived the horizon without aligning"
        pt.T = float(final.t)
    return pt


def _classify_star(args):
    return classify_point(*args)


def phase_diagram(cfg: SweepConfig, threads: int = 1):
    """Classify every grid point; returns (points, summary)."""
    jobs = [(v, d, b, cfg) for v, d, b in cfg.points()]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(_classify_star, jobs, chunksize=1))
    else:
        points = [_classify_star(j) for j in jobs]
    return points, summarize(points)


def summarize(points) -> dict:
    sub = Classification.SUBCRITICAL.value
    sup = Classification.SUPERCRITICAL.value
    summary = {"n_points": len(points),
               "outcomes": {k: sum(p.outcome == k for p in points)
                            for k in (GLOBALLY_REGULAR, BLOW_UP, UNDECIDED)}}
    for variant in ("closed", "fast"):
        pred = [getattr(p, f"predicted_{variant}") for p in points]
        summary[variant] = {
            "subcritical": pred.count(sub),
            "supercritical": pred.count(sup),
            "indeterminate": len(pred) - pred.count(sub) - pred.count(sup),
            "subcritical_blowups": sum(c == sub and p.outcome == BLOW_UP for c, p in zip(pred, points)),
            "supercritical_survivors": sum(c == sup and p.outcome == GLOBALLY_REGULAR
                                           for c, p in zip(pred, points)),
            "indeterminate_band": {k: sum(c not in (sub, sup) and p.outcome == k
                                          for c, p in zip(pred, points))
                                   for k in (GLOBALLY_REGULAR, BLOW_UP, UNDECIDED)},
        }
    closed_sub = {(p.V0, p.d0, p.B0) for p in points if p.predicted_closed == sub}
    fast_sub = {(p.V0, p.d0, p.B0) for p in points if p.predicted_fast == sub}
    summary["closed_sub_not_fast"] = len(closed_sub - fast_sub)
    summary["closed_strictly_inside_fast"] = closed_sub < fast_sub
    summary["sound"] = all(summary[v]["subcritical_blowups"] == 0
                           and summary[v]["supercritical_survivors"] == 0
                           for v in ("closed", "fast"))
    return summary


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_sweep_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["V0", "d0", "B0", "outcome", "T_c", "predicted_closed", "predicted_fast"])
        for p in points:
            out.writerow([_fmt(p.V0), _fmt(p.d0), _fmt(p.B0), p.outcome, _fmt(p.T_c),
                          p.predicted_closed, p.predicted_fast])


def write_summary_json(path, summary, points=None) -> None:
    payload = dict(summary)
    if points is not None:
        payload["undecided_reasons"] = [
            {"V0": p.V0, "d0": p.d0, "B0": p.B0, "reason": p.reason}
            for p in points if p.outcome == UNDECIDED
        ]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
