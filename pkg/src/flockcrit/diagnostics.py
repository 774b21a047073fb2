"""Flocking metrics, conservation monitors, decay fits and level-set diagnostics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .kernels import ModelParams, psi, psi_inverse

__all__ = [
    "DiagnosticsRecord",
    "FlockingReport",
    "diameters",
    "free_energy",
    "record",
    "flocking_check",
    "fit_decay_rate",
    "vacuum_level_diagnostics",
    "level_set_diameter",
    "vacuum_check",
    "write_diagnostics_csv",
    "write_report_json",
]


def _positions(ens):
    x = np.asarray(ens.x, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def _velocities(ens):
    u = np.asarray(ens.u, dtype=float)
    return u.reshape(-1, 1) if u.ndim == 1 else u


def _max_pair_distance(a, b) -> float:
    """max |a_i - b_j| over rows, blockwise to bound memory."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        return 0.0
    if a.shape[1] == 1:
        return float(max(a.max() - b.min(), b.max() - a.min(), 0.0))
    best = 0.0
    for s in range(0, a.shape[0], 512):
        blk = a[s:s + 512, None, :] - b[None, :, :]
        best = max(best, float(np.max(np.einsum("ijk,ijk->ij", blk, blk))))
    return math.sqrt(best)


def diameters(ens):
    """(S, V): spatial and velocity diameters over massive particles."""
    m = np.asarray(ens.w) > 0
    if not np.any(m):
        raise ValueError("ensemble has no massive particles")
    x, u = _positions(ens)[m], _velocities(ens)[m]
    return _max_pair_distance(x, x), _max_pair_distance(u, u)


def free_energy(ens, params: ModelParams) -> float:
    """V + psi(S), nonincreasing along the flow."""
    S, V = diameters(ens)
    return V + float(psi(params, S))


def vacuum_level_diagnostics(ens, lambdas, tol: float = 1e-12):
    """{lam: (S^lam, V^lam)} between the lam-level set and the massive support.

    The level set at ``lam`` is the massive particles plus every tracer whose
    initial offset is at most ``lam``.
    """
    level = getattr(ens, "level", None)
    m = np.asarray(ens.w) > 0
    x, u = _positions(ens), _velocities(ens)
    out = {}
    for lam in lambdas:
        if level is None or not np.any(~m & (np.abs(level - lam) <= tol * max(1.0, lam))):
            raise KeyError(f"no tracers seeded at level {lam}")
        sel = m | (~m & (level <= lam + tol * max(1.0, lam)))
        out[float(lam)] = (_max_pair_distance(x[sel], x[m]), _max_pair_distance(u[sel], u[m]))
    return out


def level_set_diameter(params: ModelParams, S0: float, lam: float, V_lam0: float) -> float:
    """D^lam = psi^-1(V^lam(0) + psi(S0 + lam))."""
    return psi_inverse(params, V_lam0 + float(psi(params, S0 + lam)))


def vacuum_check(records, frames, params: ModelParams, D: float, N: int | None = None,
                 tol: float = 0.0) -> dict:
    """Tracer slope floor and level-set decay along a run with vacuum tracers.

    Every tracer in every frame must keep ``e >= -(m/2) phi(L + D) (1 + tol_eff)``
    with L its current distance to the support, and every level ``lam`` must
    satisfy ``V^lam(t) <= V^lam(0) exp(-m phi(D^lam) t) (1 + tol_eff)``, where
    ``tol_eff = tol + 5/N``.
    """
    from .dynamics1d import distance_to_support

    tol_eff = tol + (5.0 / N if N else 0.0)
    worst_slope = math.inf
    slope_violations = []
    for ens in frames:
        tr = ens.tracers
        if not np.any(tr):
            continue
        L = distance_to_support(ens, ens.x[tr])
        floor = -0.5 * params.m * np.asarray(params.kernel.phi(L + D), dtype=float)
        ratio = ens.e[tr] / floor          # <= 1 + tol_eff when the floor holds
        k = int(np.argmax(ratio))
        worst_slope = min(worst_slope, float(1 + tol_eff - ratio[k]))
        if ratio[k] > 1 + tol_eff:
            slope_violations.append({"t": float(ens.t), "e": float(ens.e[tr][k]),
                                     "floor": float(floor[k])})
    levels = {}
    S0 = records[0].S
    for lam in sorted(records[0].V_lambda):
        V_l0 = records[0].V_lambda[lam]
        D_l = level_set_diameter(params, S0, lam, V_l0)
        rate = params.m * float(params.kernel.phi(D_l))
        bad = [r.t for r in records
               if r.V_lambda[lam] > V_l0 * math.exp(-rate * r.t) * (1 + tol_eff)]
        levels[lam] = {"D_lambda": D_l, "rate": rate, "V_lambda0": V_l0,
                       "S_lambda0": records[0].S_lambda[lam], "violation_times": bad[:5],
                       "passed": not bad}
    passed = not slope_violations and all(v["passed"] for v in levels.values())
    return {"passed": passed, "tol": tol_eff, "slope_margin": worst_slope,
            "slope_violations": slope_violations[:5], "levels": levels}


@dataclass
class DiagnosticsRecord:
    t: float
    S: float
    V: float
    mass: float
    momentum: tuple
    grad_min: float  # min e in 1D, min div u in 2D
    energy: float
    S_lambda: dict = field(default_factory=dict)
    V_lambda: dict = field(default_factory=dict)


def record(ens, params: ModelParams, lambdas=()) -> DiagnosticsRecord:
    S, V = diameters(ens)
    w = np.asarray(ens.w)
    mom = tuple(float(v) for v in np.atleast_1d(w @ _velocities(ens)))
    if hasattr(ens, "M"):
        gmin = float(np.min(ens.M[:, 0, 0] + ens.M[:, 1, 1]))
    else:
        gmin = float(np.min(ens.e))
    levels = vacuum_level_diagnostics(ens, lambdas) if lambdas else {}
    return DiagnosticsRecord(
        t=float(ens.t), S=S, V=V, mass=float(w.sum()), momentum=mom, grad_min=gmin,
        energy=V + float(psi(params, S)),
        S_lambda={k: v[0] for k, v in levels.items()},
        V_lambda={k: v[1] for k, v in levels.items()},
    )


def fit_decay_rate(t, V, floor: float = 1e-12) -> float:
    """Least-squares slope of log V against t, using points above ``floor * V[0]``.

    Returns NaN when fewer than two usable points remain.
    """
    t, V = np.asarray(t, dtype=float), np.asarray(V, dtype=float)
    if V.size == 0 or V[0] <= 0:
        return math.nan
    ok = V > floor * V[0]
    if ok.sum() < 2:
        return math.nan
    slope, _ = np.polyfit(t[ok], np.log(V[ok]), 1)
    return float(slope)


@dataclass
class FlockingReport:
    passed: bool
    D: float
    V0: float
    guaranteed_rate: float
    fitted_rate: float
    rate_ok: bool
    tol: float
    violations: list

    def to_dict(self) -> dict:
        return asdict(self)


def flocking_check(records, params: ModelParams, D: float, N: int | None = None,
                   V0: float | None = None, tol: float = 1e-6,
                   rate_slack: float = 0.1) -> FlockingReport:
    """Check S <= D (1 + tol) and V <= V0 exp(-m phi(D) t) (1 + tol) on every record.

    ``tol`` is widened by ``5 / N`` when a particle count is given. ``V0``
    defaults to the first record's velocity diameter.
    """
    tol_eff = tol + (5.0 / N if N else 0.0)
    rate = params.m * float(params.kernel.phi(D))
    V0 = records[0].V if V0 is None else V0
    violations = []
    for r in records:
        if r.S > D * (1 + tol_eff):
            violations.append({"t": r.t, "kind": "S", "value": r.S, "bound": D})
        bound = V0 * math.exp(-rate * r.t)
        if r.V > bound * (1 + tol_eff):
            violations.append({"t": r.t, "kind": "V", "value": r.V, "bound": bound})
    fitted = fit_decay_rate([r.t for r in records], [r.V for r in records])
    rate_ok = math.isnan(fitted) or fitted <= -rate * (1 - rate_slack)
    return FlockingReport(not violations, D, V0, rate, fitted, rate_ok, tol_eff, violations)


def write_diagnostics_csv(path, records) -> None:
    """One row per record; momentum and level-set maps are flattened into columns."""
    records = list(records)
    dim = len(records[0].momentum) if records else 1
    lams = sorted({k for r in records for k in r.V_lambda})
    mom_cols = ["momentum"] if dim == 1 else [f"momentum{k + 1}" for k in range(dim)]
    header = (["t", "S", "V", "mass"] + mom_cols + ["grad_min", "energy"]
              + [f"S_lambda_{lam:g}" for lam in lams] + [f"V_lambda_{lam:g}" for lam in lams])
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for r in records:
            row = [r.t, r.S, r.V, r.mass, *r.momentum, r.grad_min, r.energy]
            row += [r.S_lambda[lam] for lam in lams] + [r.V_lambda[lam] for lam in lams]
            out.writerow([repr(float(v)) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_report_json(path, report) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
