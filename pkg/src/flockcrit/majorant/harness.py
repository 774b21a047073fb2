"""Randomized property harnesses for the majorant systems.

Each harness integrates a system with randomly drawn admissible coefficients
and checks a predicted ordering or bound at every accepted step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..ode import StepTooSmall, dopri5
from .curves import integrate_separatrix
from .riccati import MajorantParams, RiccatiOutcome, riccati_classify

__all__ = [
    "BoundedSignal",
    "ComparisonTrial",
    "COMPARISON_CASES",
    "random_comparison_trial",
    "comparison_harness",
    "run_comparison_trials",
    "separatrix_fate",
    "separatrix_classification_trial",
    "riccati_direct_fate",
    "GapTrial",
    "random_gap_trial",
    "gap_trial_max_ratio",
]

BLOWUP_CAP = 1e6
HARNESS_RTOL = 1e-11
HARNESS_ATOL = 1e-13


@dataclass(frozen=True)
class BoundedSignal:
    """Smooth signal confined to [lo, hi]; constant when ``w1 == w2 == 0``."""

    lo: float
    hi: float
    w1: float = 0.0
    w2: float = 0.0
    ph1: float = 0.0
    ph2: float = 0.0

    def __call__(self, t: float) -> float:
        s = 0.5 + 0.5 * math.sin(self.w1 * t + self.ph1) * math.cos(self.w2 * t + self.ph2)
        return self.lo + (self.hi - self.lo) * s

    @classmethod
    def constant(cls, value: float) -> "BoundedSignal":
        return cls(value, value)

    @classmethod
    def random(cls, lo, hi, rng: np.random.Generator, p_extreme=0.2) -> "BoundedSignal":
        u = rng.random()
        if u < p_extreme / 2:
            return cls.constant(lo)
        if u < p_extreme:
            return cls.constant(hi)
        w1, w2 = rng.uniform(0.1, 6.0, size=2)
        ph1, ph2 = rng.uniform(0, 2 * math.pi, size=2)
        return cls(lo, hi, w1, w2, ph1, ph2)


# case -> (E is gamma?, F sign, required sign of omega, ordering of d vs omega)
COMPARISON_CASES = {
    "1a": ("gamma", +1, +1, "le"),
    "1b": ("Gamma", -1, +1, "ge"),
    "2a": ("Gamma", +1, -1, "le"),
    "2b": ("gamma", -1, -1, "ge"),
}


@dataclass(frozen=True)
class ComparisonTrial:
    p: BoundedSignal        # damping in [gamma, Gamma]
    c: BoundedSignal        # forcing coefficient in [-C, C]
    g: BoundedSignal        # decay rate of V, >= G
    d0: float
    V0: float
    omega0: float
    eta0: float
    T: float


def random_comparison_trial(mp: MajorantParams, case: str,
                            rng: np.random.Generator) -> ComparisonTrial:
    if case not in COMPARISON_CASES:
        raise ValueError(f"unknown comparison case {case!r}")
    _, _, sign, order = COMPARISON_CASES[case]
    if sign > 0:
        omega0 = rng.uniform(0.0, 3.0) if case == "1a" else rng.uniform(0.5, 4.0)
        eta0 = rng.uniform(0.0, 2.0) if case == "1a" else rng.uniform(0.0, 0.5)
    else:
        omega0 = -rng.uniform(0.2, 4.0) if case == "2a" else -rng.uniform(0.0, 4.0)
        eta0 = rng.uniform(0.0, 1.0) if case == "2a" else rng.uniform(0.0, 2.0)
    gap = 0.0 if rng.random() < 0.2 else rng.uniform(0.0, 2.0)
    d0 = omega0 - gap if order == "le" else omega0 + gap
    V0 = eta0 if rng.random() < 0.2 else eta0 * rng.random()
    return ComparisonTrial(
        p=BoundedSignal.random(mp.gamma, mp.Gamma, rng),
        c=BoundedSignal.random(-mp.C, mp.C, rng),
        g=BoundedSignal.random(mp.G, 3.0 * mp.G, rng),
        d0=d0, V0=V0, omega0=omega0, eta0=eta0,
        T=rng.uniform(0.5, 5.0),
    )


def comparison_harness(mp: MajorantParams, case: str, trial: ComparisonTrial,
                       tol: float = 1e-9):
    """Integrate the inequality and equality systems side by side.

    Returns ``True``/``False`` for the ordering verdict, or ``None`` when the
    sign condition on omega fails somewhere on the horizon (trial discarded).
    """
    e_name, f_sign, sign, order = COMPARISON_CASES[case]
    E = mp.gamma if e_name == "gamma" else mp.Gamma
    F = f_sign * mp.C
    G = mp.G
    p, c, g = trial.p, trial.c, trial.g

    def rhs(t, y):
        d, V, w, eta = y
        return np.array([
            -d * d - p(t) * d + c(t) * V,
            -g(t) * V,
            -w * w - E * w + F * eta,
            -G * eta,
        ])

    def stop(t, y):
        return min(y[0], y[2]) < -BLOWUP_CAP

    y0 = [trial.d0, trial.V0, trial.omega0, trial.eta0]
    try:
        res = dopri5(rhs, 0.0, y0, trial.T, rtol=HARNESS_RTOL, atol=HARNESS_ATOL, stop=stop)
    except StepTooSmall:
        return None
    d, V, w, eta = res.y.T
    live = (d > -BLOWUP_CAP) & (w > -BLOWUP_CAP)
    if np.any(sign * w[live] < -tol * np.maximum(1.0, np.abs(w[live]))):
        return None
    scale = tol * np.maximum(1.0, np.abs(w[live]))
    gap = (d - w)[live] if order == "le" else (w - d)[live]
    ok_d = np.all(gap <= scale)
    ok_v = np.all(V - eta <= tol * np.maximum(1.0, eta))
    return bool(ok_d and ok_v)


@dataclass
class TrialReport:
    accepted: int
    discarded: int
    violations: int


def run_comparison_trials(mp: MajorantParams, case: str, n_trials: int,
                          rng: np.random.Generator, tol: float = 1e-9,
                          max_attempts: int | None = None) -> TrialReport:
    max_attempts = max_attempts or 20 * n_trials
    accepted = discarded = violations = 0
    while accepted < n_trials and accepted + discarded < max_attempts:
        verdict = comparison_harness(mp, case, random_comparison_trial(mp, case, rng), tol)
        if verdict is None:
            discarded += 1
            continue
        accepted += 1
        violations += not verdict
    return TrialReport(accepted, discarded, violations)


def separatrix_fate(E: float, F: float, G: float, eta0: float, omega0: float,
                    t_max: float | None = None) -> str:
    """Forward fate of ``w' = -w^2 - E w + F eta, eta' = -G eta``.

    Returns ``"converges"`` (to the origin), ``"diverges"`` (w below -1e6) or
    ``"undecided"``.
    """
    t_max = t_max or 200.0 / min(E, G)

    def rhs(t, y):
        w, eta = y
        return np.array([-w * w - E * w + F * eta, -G * eta])

    def stop(t, y):
        return y[0] < -BLOWUP_CAP or (abs(y[0]) < 1e-8 and abs(y[1]) < 1e-8)

    res = dopri5(rhs, 0.0, [omega0, eta0], t_max, rtol=1e-10, atol=1e-14, stop=stop)
    w, eta = res.y[-1]
    if w < -BLOWUP_CAP:
        return "diverges"
    if abs(w) < 1e-6 and abs(eta) < 1e-6:
        return "converges"
    return "undecided"


def separatrix_classification_trial(E, F, G, eta0, offset=0.1, x_max=None):
    """Fates from f(eta0) + offset and f(eta0) - offset; expects (converges, diverges)."""
    curve = integrate_separatrix(E, F, G, x_max or eta0)
    f0 = curve(eta0)
    return (separatrix_fate(E, F, G, eta0, f0 + offset),
            separatrix_fate(E, F, G, eta0, f0 - offset))


def riccati_direct_fate(p: float, q: float, d0: float, T: float = 200.0) -> str:
    """Integrate ``d' = -d^2 - p d + q`` with constant coefficients."""
    res = dopri5(lambda t, y: np.array([-y[0] ** 2 - p * y[0] + q]), 0.0, [d0], T,
                 rtol=1e-10, atol=1e-13, stop=lambda t, y: y[0] < -BLOWUP_CAP)
    return "blowup" if res.y[-1, 0] < -BLOWUP_CAP else "bounded"


def riccati_agrees(gamma, Gamma, c, d0) -> bool:
    """Classification versus adversarial constant-coefficient integration."""
    verdict = riccati_classify(gamma, Gamma, c, d0)
    if verdict is RiccatiOutcome.BOUNDED_FOR_ALL:
        return riccati_direct_fate(gamma, -c, d0) == "bounded"
    if verdict is RiccatiOutcome.BLOW_UP:
        return riccati_direct_fate(Gamma, c, d0) == "blowup"
    return True


__all__.append("riccati_agrees")
__all__.append("TrialReport")


@dataclass(frozen=True)
class GapTrial:
    d: BoundedSignal        # prescribed divergence, above the floor
    p: BoundedSignal
    Q: tuple                # (Q11 - Q22, Q12, Q21) signals
    q0: float
    r0: float
    s0: float
    T: float
    V0: float = 1.0         # V0 * exp(-G t) multiplies Q in the fast variant
    fast: bool = False


def random_gap_trial(mp: MajorantParams, B: float, rng: np.random.Generator,
                     fast: bool = False) -> GapTrial:
    floor = -mp.gamma + 2.0 * mp.C / B
    d = BoundedSignal.random(floor, floor + rng.uniform(0.0, 2.0), rng, p_extreme=0.3)
    C = mp.C
    Q = (BoundedSignal.random(-2 * C, 2 * C, rng, p_extreme=0.4),
         BoundedSignal.random(-C, C, rng, p_extreme=0.4),
         BoundedSignal.random(-C, C, rng, p_extreme=0.4))
    q0, r0, s0 = rng.uniform(-1, 1, size=3) * np.array([B, B / 2, B / 2])
    if rng.random() < 0.3:
        q0 = math.copysign(B, q0)
    return GapTrial(d, BoundedSignal.random(mp.gamma, mp.Gamma, rng), Q, q0, r0, s0,
                    T=rng.uniform(1.0, 10.0), V0=rng.uniform(0.0, 1.0) if fast else 1.0,
                    fast=fast)


def gap_trial_max_ratio(mp: MajorantParams, B: float, trial: GapTrial):
    """Integrate (q, r, s) and return (max of max{|q|,2|r|,2|s|}/B, max |eta|^2/(2B^2))."""
    G = mp.G
    dq, d12, d21 = trial.Q

    def rhs(t, y):
        q, r, s = y
        k = trial.d(t) + trial.p(t)
        v = trial.V0 * math.exp(-G * t) if trial.fast else 1.0
        return np.array([-q * k + dq(t) * v, -r * k + d12(t) * v, -s * k + d21(t) * v])

    res = dopri5(rhs, 0.0, [trial.q0, trial.r0, trial.s0], trial.T,
                 rtol=HARNESS_RTOL, atol=HARNESS_ATOL)
    q, r, s = res.y.T
    size = np.maximum(np.abs(q), np.maximum(2 * np.abs(r), 2 * np.abs(s)))
    eta2 = q * q + 4 * r * s
    return float(np.max(size) / B), float(np.max(np.abs(eta2)) / (2 * B * B))
