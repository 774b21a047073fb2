"""Threshold curves defined by implicit first-order ODEs in the diameter variable.

Every curve starts from a singular point at ``x = 0`` where the ODE is 0/0.
Integration begins at ``x = EPS`` from the first-order series value and runs
on a geometric grid. Curves that escape to infinity at a finite abscissa are
recorded up to a cap and carry ``inf`` beyond it.

The upper curves switch the damping coefficient on the sign of the current
value (gamma below zero, Gamma above). The right-hand side is continuous
across the switch, so the curve is C^1 there with a jump in curvature.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..ode import StepTooSmall, dopri5
from .riccati import Classification, GapParams, MajorantParams

__all__ = [
    "EPS",
    "N_NODES",
    "CurveKind",
    "ThresholdCurve",
    "StiffCurveError",
    "OUT_OF_DOMAIN",
    "curve_grid",
    "integrate_separatrix",
    "sigma_plus_1d",
    "sigma_minus_1d",
    "mt_sigma",
    "zeta_curve",
    "zeta_domain_end",
    "zeta_middle_branch",
    "zeta_threshold_curve",
    "h_flat_width",
    "h_curve_2d",
    "classify_fast_1d",
    "classify_fast_2d",
    "write_curves_csv",
]

EPS = 1e-6
N_NODES = 512
RTOL = 1e-9
ATOL = 1e-12
CAP = 1e6


class CurveKind(str, Enum):
    SIGMA_PLUS_1D = "SigmaPlus1D"
    SIGMA_MINUS_1D = "SigmaMinus1D"
    ZETA_2D = "Zeta2D"
    H_2D = "H2D"
    SEPARATRIX_F = "SeparatrixF"
    MT_SIGMA = "MTSigma"


class _OutOfDomain:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "OUT_OF_DOMAIN"

    def __bool__(self):
        return False


OUT_OF_DOMAIN = _OutOfDomain()


class StiffCurveError(RuntimeError):
    def __init__(self, message, partial: "ThresholdCurve"):
        super().__init__(message)
        self.partial = partial


@dataclass
class ThresholdCurve:
    xs: np.ndarray
    values: np.ndarray
    kind: CurveKind
    params: MajorantParams | None = None
    gap: GapParams | None = None
    label: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.xs[0] != 0 or np.any(np.diff(self.xs) <= 0):
            raise ValueError("curve nodes must start at 0 and increase strictly")

    @property
    def anchor(self) -> float:
        return float(self.values[0])

    @property
    def finite_extent(self) -> float:
        """Largest node with a finite value."""
        ok = np.isfinite(self.values)
        return float(self.xs[ok][-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        ok = np.isfinite(self.values)
        xf, vf = self.xs[ok], self.values[ok]
        out = np.interp(x, xf, vf)
        beyond = x > xf[-1]
        if np.any(beyond):
            tail = self.values[~ok]
            fill = tail[0] if tail.size else vf[-1]
            out = np.where(beyond, fill, out)
        return out if out.ndim else float(out)

    def margin(self, x: float) -> float:
        """Interpolation safety margin: local node gap times local slope bound."""
        xs, vs = self.xs, self.values
        k = int(np.searchsorted(xs, x, side="right")) - 1
        if k < 0 or k >= xs.size - 1 or xs[k] == x:
            return 0.0
        lo, hi = max(k - 1, 0), min(k + 2, xs.size - 1)
        seg = np.diff(vs[lo:hi + 1]) / np.diff(xs[lo:hi + 1])
        seg = seg[np.isfinite(seg)]
        if seg.size == 0:
            return math.inf
        return float((xs[k + 1] - xs[k]) * np.max(np.abs(seg)))

    def header_params(self):
        if self.params is not None:
            p = self.params.as_tuple()
        elif "E" in self.extra:
            # separatrix: E fills both damping columns, F the forcing column
            p = (self.extra["E"], self.extra["E"], self.extra["F"], self.extra["G"])
        else:
            p = (math.nan,) * 4
        g = (self.gap.delta, self.gap.B) if self.gap else ()
        return p + g


def curve_grid(x_max: float, n: int = N_NODES) -> np.ndarray:
    """0 followed by ``n - 1`` geometric nodes from EPS to ``x_max``."""
    if x_max <= 0:
        raise ValueError("x_max must be positive")
    if x_max <= EPS:
        return np.array([0.0, x_max])
    return np.concatenate([[0.0], np.geomspace(EPS, x_max, n - 1)])


def _integrate(rhs, x_start, f_start, xs, direction_cap=CAP):
    """Integrate ``f' = rhs(x, f)`` from (x_start, f_start) onto nodes ``xs > x_start``.

    Returns values at those nodes; nodes past an escape to +-inf get +-inf.
    Raises StepTooSmall (with the partial arrays attached) on step collapse.
    """
    nodes = xs[xs > x_start]
    out = np.full(nodes.size, np.nan)
    if nodes.size == 0:
        return out
    escaped = {}

    def stop(x, y):
        if abs(y[0]) > direction_cap:
            escaped["sign"] = math.copysign(1.0, y[0])
            return True
        return False

    res = dopri5(lambda x, y: np.array([rhs(x, y[0])]), x_start, [f_start], nodes[-1],
                 rtol=RTOL, atol=ATOL, t_eval=nodes, stop=stop)
    k = len(res.t)
    if res.status == "stopped":
        # the final (unrecorded-node) state is the escape point; drop it
        hit = np.isin(res.t, nodes)
        vals = res.y[hit, 0]
        out[:vals.size] = vals
        out[vals.size:] = escaped["sign"] * math.inf
    else:
        out[:k] = res.y[:, 0]
    return out


def _build(rhs, anchor, slope, xs, kind, params, gap=None, label="", x_start=None,
           f_start=None):
    values = np.empty(xs.size)
    if x_start is None:
        x_start = min(EPS, xs[-1])
        f_start = anchor + slope * x_start
    before = xs <= x_start
    values[before] = np.where(xs[before] == 0, anchor, anchor + slope * xs[before])
    try:
        values[~before] = _integrate(rhs, x_start, f_start, xs)
    except StepTooSmall as exc:
        part = exc.partial
        values[~before] = np.nan
        if len(part.t):
            ys = np.asarray(part.y).reshape(len(part.t), -1)
            got = np.isin(xs, part.t)
            values[got & ~before] = ys[np.isin(part.t, xs), 0]
        partial = ThresholdCurve(xs, values, kind, params, gap, label)
        raise StiffCurveError(f"{kind.value}: {exc}", partial) from exc
    return ThresholdCurve(xs, values, kind, params, gap, label)


def _separatrix_rhs(E, F, G):
    return lambda x, f: (f * f + E * f - F * x) / (G * x)


def integrate_separatrix(E: float, F: float, G: float, x_max: float,
                         n: int = N_NODES) -> ThresholdCurve:
    """Stable manifold of the saddle (0, -E) of ``w' = -w^2 - E w + F n, n' = -G n``."""
    if not (E > 0 and G > 0):
        raise ValueError("E and G must be positive")
    xs = curve_grid(x_max, n)
    curve = _build(_separatrix_rhs(E, F, G), -E, -F / (E + G), xs, CurveKind.SEPARATRIX_F,
                   None, label=f"E={E},F={F},G={G}")
    curve.extra.update(E=E, F=F, G=G)
    return curve


def sigma_plus_1d(mp: MajorantParams, x_max: float, n: int = N_NODES,
                  kind=CurveKind.SIGMA_PLUS_1D) -> ThresholdCurve:
    """Upper threshold of the fast-alignment majorant; data above it stay bounded."""
    g, Gm, C, G = mp.as_tuple()

    def rhs(x, f):
        p = g if f < 0 else Gm
        return (f * f + p * f + C * x) / (G * x)

    return _build(rhs, -g, C / (g + G), curve_grid(x_max, n), kind, mp)


def sigma_minus_1d(mp: MajorantParams, x_max: float, n: int = N_NODES,
                   kind=CurveKind.SIGMA_MINUS_1D) -> ThresholdCurve:
    """Lower threshold; data below it blow up in finite time."""
    _, Gm, C, G = mp.as_tuple()
    return _build(_separatrix_rhs(Gm, C, G), -Gm, -C / (Gm + G), curve_grid(x_max, n),
                  kind, mp)


def mt_sigma(mp: MajorantParams, x_max: float, upper: bool = True,
             n: int = N_NODES) -> ThresholdCurve:
    """Motsch-Tadmor thresholds; ``mp`` from :func:`mt_majorant_params` (gamma = Gamma = 1)."""
    if upper:
        curve = sigma_plus_1d(mp, x_max, n, kind=CurveKind.MT_SIGMA)
    else:
        curve = sigma_minus_1d(mp, x_max, n, kind=CurveKind.MT_SIGMA)
    curve.label = "upper" if upper else "lower"
    return curve


def zeta_domain_end(delta: float, B: float, C: float, G: float) -> float:
    x0 = delta * B / (2.0 * C)
    if delta == G:
        return x0 * math.e
    return (delta / G) ** (G / (delta - G)) * x0


def zeta_curve(delta: float, B: float, C: float, G: float, x: float):
    """Largest initial off-trace size keeping (q, 2r, 2s) within B.

    Returns :data:`OUT_OF_DOMAIN` right of the zero of the curve.
    """
    if x < 0:
        raise ValueError("zeta is defined for x >= 0")
    if not (delta > 0 and B > 0 and C > 0 and G > 0):
        raise ValueError("delta, B, C, G must be positive")
    x0 = delta * B / (2.0 * C)
    if x <= x0:
        return B
    if x > zeta_domain_end(delta, B, C, G):
        return OUT_OF_DOMAIN
    return zeta_middle_branch(delta, B, C, G, x)


def zeta_middle_branch(delta: float, B: float, C: float, G: float, x: float) -> float:
    """The decreasing branch of zeta, evaluated without domain checks."""
    x0 = delta * B / (2.0 * C)
    y = x / x0
    if delta == G:
        return (2.0 * C / delta) * (1.0 - math.log(y)) * x
    return B / (delta - G) * (-G * y ** (delta / G) + delta * y)


def zeta_threshold_curve(mp: MajorantParams, gp: GapParams, x_max: float | None = None,
                         n: int = N_NODES) -> ThresholdCurve:
    """Sampled zeta on [0, x_max] (default: its whole domain); NaN off-domain."""
    end = zeta_domain_end(gp.delta, gp.B, mp.C, mp.G)
    xs = np.linspace(0.0, end if x_max is None else x_max, n)
    vals = [zeta_curve(gp.delta, gp.B, mp.C, mp.G, x) for x in xs]
    vals = np.array([math.nan if v is OUT_OF_DOMAIN else v for v in vals])
    return ThresholdCurve(xs, vals, CurveKind.ZETA_2D, mp, gp, extra={"domain_end": end})


def h_flat_width(gamma: float, delta: float, B: float, C: float) -> float:
    return (gamma ** 2 - delta ** 2 - 2.0 * B ** 2) / (4.0 * C)


def h_curve_2d(mp: MajorantParams, gp: GapParams, x_max: float,
               n: int = N_NODES) -> ThresholdCurve:
    """Divergence threshold keeping d >= -gamma + delta under a gap bound B."""
    g, Gm, C, G = mp.as_tuple()
    delta, B = gp.delta, gp.B
    if not (B <= g / math.sqrt(2.0) and 0 < delta <= math.sqrt(max(g * g - 2 * B * B, 0.0))):
        raise ValueError("need B <= gamma/sqrt(2) and 0 < delta <= sqrt(gamma^2 - 2B^2)")
    flat = -g + delta
    width = h_flat_width(g, delta, B, C) if C > 0 else math.inf
    xs = curve_grid(x_max, n)
    if 0 < width < x_max and width not in xs:
        xs = np.sort(np.append(xs, width))

    def rhs(x, f):
        p = g if f < 0 else Gm
        return (f * f + 2.0 * p * f + 4.0 * C * x + 2.0 * B * B) / (2.0 * G * x)

    if width >= x_max:
        return ThresholdCurve(xs, np.full(xs.size, flat), CurveKind.H_2D, mp, gp)
    x_start = max(width, min(EPS, xs[-1]))
    return _build(rhs, flat, 0.0, xs, CurveKind.H_2D, mp, gp, x_start=x_start, f_start=flat)


def classify_fast_1d(upper: ThresholdCurve, lower: ThresholdCurve, V0: float,
                     d0: float) -> Classification:
    """Classify (V0, d0) against a pair of fast-alignment curves, conservatively."""
    su = upper(V0)
    if d0 >= su + upper.margin(V0):
        return Classification.SUBCRITICAL
    sl = lower(V0)
    if d0 < sl - lower.margin(V0):
        return Classification.SUPERCRITICAL
    return Classification.INDETERMINATE


def classify_fast_2d(mp: MajorantParams, gp: GapParams, V0: float, d0: float, B0: float,
                     h: ThresholdCurve | None = None) -> Classification:
    """Sub-critical when B0 <= zeta(V0) and d0 >= h(V0); never claims blow-up."""
    if not gp.admissible(mp.gamma):
        return Classification.INDETERMINATE
    z = zeta_curve(gp.delta, gp.B, mp.C, mp.G, V0) if mp.C > 0 else gp.B
    if z is OUT_OF_DOMAIN or B0 > z:
        return Classification.INDETERMINATE
    if h is None:
        h = h_curve_2d(mp, gp, max(V0, EPS))
    if d0 >= h(V0) + h.margin(V0):
        return Classification.SUBCRITICAL
    return Classification.INDETERMINATE


def write_curves_csv(path, curves) -> None:
    """Write curves as rows ``x,value,kind,gamma,Gamma,C,G[,delta,B]``."""
    curves = list(curves)
    with_gap = any(c.gap is not None for c in curves)
    header = ["x", "value", "kind", "gamma", "Gamma", "C", "G"] + (["delta", "B"] if with_gap else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for c in curves:
            tail = [repr(float(v)) for v in c.header_params()]
            if with_gap and c.gap is None:
                tail += ["", ""]
            for x, v in zip(c.xs, c.values):
                w.writerow([repr(float(x)), repr(float(v)), c.kind.value] + tail)
