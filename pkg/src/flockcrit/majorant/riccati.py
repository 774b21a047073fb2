"""Majorant constants and closed-form critical thresholds."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from ..kernels import InfluenceKernel, ModelParams

__all__ = [
    "MajorantParams",
    "GapParams",
    "RiccatiOutcome",
    "Classification",
    "riccati_classify",
    "riccati_blowup_time",
    "cs_majorant_params",
    "mt_majorant_params",
    "closed_threshold_1d",
    "closed_bounds_1d",
    "closed_threshold_2d",
    "vacuum_bound",
    "vacuum_condition_check",
]


class RiccatiOutcome(str, Enum):
    BOUNDED_FOR_ALL = "BoundedForAll"
    BLOW_UP = "BlowUp"
    INDETERMINATE = "Indeterminate"


class Classification(str, Enum):
    SUBCRITICAL = "Subcritical"
    SUPERCRITICAL = "Supercritical"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class MajorantParams:
    """Bounds of a majorant ``M' = -M^2 - pM + V Q``.

    ``gamma <= p <= Gamma``, ``|Q_ij| <= C`` and ``V' <= -G V``.
    """

    gamma: float
    Gamma: float
    C: float
    G: float

    def __post_init__(self):
        if not 0 < self.gamma <= self.Gamma:
            raise ValueError(f"need 0 < gamma <= Gamma, got {self.gamma}, {self.Gamma}")
        if self.C < 0:
            raise ValueError("C must be nonnegative")
        if not self.G > 0:
            raise ValueError("G must be positive")

    def as_tuple(self):
        return (self.gamma, self.Gamma, self.C, self.G)


@dataclass(frozen=True)
class GapParams:
    delta: float
    B: float

    def __post_init__(self):
        if not (self.delta > 0 and self.B > 0):
            raise ValueError("delta and B must be positive")

    def admissible(self, gamma: float) -> bool:
        return self.delta ** 2 + 2 * self.B ** 2 <= gamma ** 2


def riccati_classify(gamma: float, Gamma: float, c: float, d0: float) -> RiccatiOutcome:
    """Fate of ``d' = -d^2 - p d + Q`` with p in [gamma, Gamma], |Q| <= c."""
    if not 0 < gamma <= Gamma or c < 0:
        raise ValueError("need 0 < gamma <= Gamma and c >= 0")
    disc = gamma * gamma - 4.0 * c
    if disc >= 0 and d0 >= -(gamma + math.sqrt(disc)) / 2:
        return RiccatiOutcome.BOUNDED_FOR_ALL
    if d0 < -(Gamma + math.sqrt(Gamma * Gamma + 4.0 * c)) / 2:
        return RiccatiOutcome.BLOW_UP
    return RiccatiOutcome.INDETERMINATE


def riccati_blowup_time(p: float, q: float, d0: float) -> float:
    """Blow-up time of ``d' = -d^2 - p d + q`` (q >= 0) from d0 below the lower root.

    Returns ``inf`` when d0 is not below the lower root.
    """
    disc = p * p + 4.0 * q
    lower = (-p - math.sqrt(disc)) / 2
    upper = (-p + math.sqrt(disc)) / 2
    if d0 >= lower:
        return math.inf
    if disc == 0:
        return 1.0 / (lower - d0)
    return math.log((d0 - upper) / (d0 - lower)) / (upper - lower)


def cs_majorant_params(params: ModelParams, D: float) -> MajorantParams:
    m = params.m
    phiD = float(params.kernel.phi(D))
    return MajorantParams(phiD * m, m, params.kernel.lip * m, phiD * m)


def mt_majorant_params(kernel: InfluenceKernel, D: float) -> MajorantParams:
    phiD = float(kernel.phi(D))
    return MajorantParams(1.0, 1.0, 2.0 * kernel.lip / phiD, phiD)


def closed_bounds_1d(mp: MajorantParams, V0: float):
    """(sub_threshold, super_threshold) on d0; sub_threshold is None when V0 is too large."""
    c = V0 * mp.C
    disc = mp.gamma ** 2 - 4.0 * c
    sub = -(mp.gamma + math.sqrt(disc)) / 2 if disc >= 0 else None
    sup = -(mp.Gamma + math.sqrt(mp.Gamma ** 2 + 4.0 * c)) / 2
    return sub, sup


def closed_threshold_1d(mp: MajorantParams, V0: float, d0: float) -> Classification:
    """Closed-form 1D classification; ``mp`` carries the fast-alignment CS constants."""
    sub, sup = closed_bounds_1d(mp, V0)
    if sub is not None and d0 >= sub:
        return Classification.SUBCRITICAL
    if d0 < sup:
        return Classification.SUPERCRITICAL
    return Classification.INDETERMINATE


def closed_threshold_2d(mp: MajorantParams, V0: float, d0: float, B0: float,
                        off_diag=None) -> Classification:
    """Closed-form 2D classification.

    ``off_diag`` is ``(du1/dx2, du2/dx1)`` taken at their smallest magnitude over
    the support; without it the super-critical side cannot be certified.
    """
    gamma, Gamma, C = mp.gamma, mp.Gamma, mp.C
    c = V0 * C
    A = gamma ** 2 - 4.0 * c
    v_ok = C == 0 or V0 <= (math.sqrt(2.0) - 1.0) * gamma ** 2 / (4.0 * C)
    inner = A - 2.0 * B0 ** 2
    d_ok = inner >= 0 and d0 >= -0.5 * (gamma + math.sqrt(inner))
    outer = A * A - 32.0 * c * c
    b_ok = A >= 0 and outer >= 0 and B0 <= 0.5 * math.sqrt(A + math.sqrt(outer))
    if v_ok and d_ok and b_ok:
        return Classification.SUBCRITICAL
    if d0 < -0.5 * (Gamma + math.sqrt(Gamma ** 2 + 4.0 * c)) and off_diag is not None:
        a12, a21 = off_diag
        floor = c / math.sqrt(Gamma ** 2 + 4.0 * c)
        if abs(a12) >= floor and abs(a21) >= floor and a12 * a21 > 0:
            return Classification.SUPERCRITICAL
    return Classification.INDETERMINATE


def vacuum_bound(params: ModelParams, D: float, lam: float) -> float:
    """Largest admissible V0^lambda at level ``lam`` (``inf`` if phi is flat there)."""
    k = params.kernel
    denom = 4.0 * abs(float(k.dphi(lam))) + 2.0 * abs(float(k.dphi(lam + D)))
    num = params.m * float(k.phi(lam + D)) ** 2
    return math.inf if denom == 0 else num / denom


def vacuum_condition_check(params: ModelParams, D: float, lam: float, V0_lambda: float,
                           u0x_min: float, dist: float) -> bool:
    if lam < 0 or dist < 0:
        raise ValueError("lambda and dist must be nonnegative")
    slope_floor = -0.5 * params.m * float(params.kernel.phi(dist + D))
    return V0_lambda <= vacuum_bound(params, D, lam) and u0x_min >= slope_floor
