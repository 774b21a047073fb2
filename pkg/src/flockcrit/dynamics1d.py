"""Lagrangian solver for the 1D alignment system.

Each characteristic carries position, velocity, slope ``e = u_x`` and
density. Massive particles discretize the density; zero-mass tracers follow
the same characteristic equations in the vacuum and contribute nothing to
the nonlocal sums.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .kernels import ModelParams
from .stepping import BlowUpDetected, NumericalFailure, StepConfig

__all__ = [
    "Ensemble1D",
    "DegenerateNormalization",
    "InfeasibleInitialData",
    "velocity_rhs",
    "slope_rhs",
    "density_rhs",
    "step",
    "velocity_profile_1d",
    "initial_data_1d",
    "profile_centre",
    "two_blob_data",
    "support_intervals",
    "distance_to_support",
    "seed_tracers",
    "write_trajectory_csv",
]


class DegenerateNormalization(ZeroDivisionError):
    """Motsch-Tadmor normalization vanished at some characteristic."""


class InfeasibleInitialData(ValueError):
    """Requested (V0, d0, ...) cannot be realized on the given support."""


@dataclass
class Ensemble1D:
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    e: np.ndarray
    rho: np.ndarray
    t: float = 0.0
    level: np.ndarray | None = None  # tracer offset lambda; NaN for massive particles

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=float) for a in (self.x, self.u, self.w, self.e, self.rho)]
        n = arrs[0].shape
        if any(a.shape != n or a.ndim != 1 for a in arrs):
            raise ValueError("ensemble arrays must be 1-d with equal lengths")
        if np.any(arrs[2] < 0):
            raise ValueError("masses must be nonnegative")
        self.x, self.u, self.w, self.e, self.rho = arrs
        if self.level is None:
            self.level = np.where(self.w > 0, np.nan, 0.0)
        self.level = np.asarray(self.level, dtype=float)

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def massive(self) -> np.ndarray:
        return self.w > 0

    @property
    def tracers(self) -> np.ndarray:
        return ~self.massive

    def copy(self) -> "Ensemble1D":
        return Ensemble1D(self.x.copy(), self.u.copy(), self.w.copy(), self.e.copy(),
                          self.rho.copy(), self.t, self.level.copy())


def _kernel_matrices(x, w, model: ModelParams):
    """Weighted phi and signed phi' against the massive particles."""
    m = w > 0
    if m.all():
        xm, wm = x, w
    else:
        xm, wm = x[m], w[m]
    dx = x[:, None] - xm[None, :]
    phi, dphi = model.kernel.phi_and_dphi(np.abs(dx))
    return phi * wm, dphi * np.sign(dx) * wm, m


def _forces(x, u, w, e, model: ModelParams):
    """(acceleration, linear part of the slope rate) for every characteristic.

    Pairwise sums use matrix-vector products: sum_j K_ij (u_j - u_i) is
    ``K @ u_m - u * K.sum(1)``.
    """
    K, dK, m = _kernel_matrices(x, w, model)
    # alignment is invariant under a constant shift of u; shifting makes a flock exact
    ref = u[np.argmax(m)] if u.size else 0.0
    u = u - ref
    um = u if m.all() else u[m]
    Phi = K.sum(axis=1)
    Ku = K @ um
    dPhi = dK.sum(axis=1)
    dKu = dK @ um
    if model.model == "CS":
        return Ku - u * Phi, dKu - u * dPhi - e * Phi
    if np.any(Phi <= 0):
        raise DegenerateNormalization("Motsch-Tadmor normalization vanished")
    # gradient of phi/Phi; its row sums vanish identically
    return Ku / Phi - u, (Phi * dKu - dPhi * Ku) / (Phi * Phi) - e


def velocity_rhs(ens: Ensemble1D, model: ModelParams) -> np.ndarray:
    acc, _ = _forces(ens.x, ens.u, ens.w, ens.e, model)
    return acc


def slope_rhs(ens: Ensemble1D, model: ModelParams) -> np.ndarray:
    _, lin = _forces(ens.x, ens.u, ens.w, ens.e, model)
    return -ens.e * ens.e + lin


def density_rhs(ens: Ensemble1D) -> np.ndarray:
    return -ens.rho * ens.e


def _deriv(x, u, e, rho, w, model):
    acc, lin = _forces(x, u, w, e, model)
    return u, acc, -e * e + lin, -rho * e


def _rk4(ens: Ensemble1D, model: ModelParams, dt: float):
    x, u, e, rho, w = ens.x, ens.u, ens.e, ens.rho, ens.w
    k1 = _deriv(x, u, e, rho, w, model)
    s = [a + 0.5 * dt * k for a, k in zip((x, u, e, rho), k1)]
    k2 = _deriv(*s, w, model)
    s = [a + 0.5 * dt * k for a, k in zip((x, u, e, rho), k2)]
    k3 = _deriv(*s, w, model)
    s = [a + dt * k for a, k in zip((x, u, e, rho), k3)]
    k4 = _deriv(*s, w, model)
    out = [a + dt / 6.0 * (p + 2 * q + 2 * r + z)
           for a, p, q, r, z in zip((x, u, e, rho), k1, k2, k3, k4)]
    return replace(ens, x=out[0], u=out[1], e=out[2], rho=out[3], t=ens.t + dt,
                   w=ens.w, level=ens.level)


def step(ens: Ensemble1D, model: ModelParams, cfg: StepConfig, t_max: float | None = None):
    """One RK4 step; returns the new ensemble or :class:`BlowUpDetected`.

    Under ``cfg.adaptive`` the step is ``min(dt_base, 0.1 / max(1, max|e|))``.
    """
    if not all(np.all(np.isfinite(a)) for a in (ens.x, ens.u, ens.e, ens.rho)):
        raise NumericalFailure("non-finite state", ens.t)
    dt = cfg.dt_for(float(np.max(np.abs(ens.e))) if ens.n else 0.0)
    if t_max is not None:
        dt = min(dt, t_max - ens.t)
    with np.errstate(over="ignore", invalid="ignore"):
        new = _rk4(ens, model, dt)
    cut = -cfg.blowup_cutoff
    crossed = not np.all(np.isfinite(new.e)) or np.min(new.e) < cut
    if crossed:
        # one bisection pass on the last step
        with np.errstate(over="ignore", invalid="ignore"):
            half = _rk4(ens, model, 0.5 * dt)
        if np.all(np.isfinite(half.e)) and np.min(half.e) < cut:
            i = int(np.argmin(half.e))
            return BlowUpDetected(ens.t + 0.5 * dt, float(half.x[i]), i)
        i = int(np.argmin(np.where(np.isfinite(new.e), new.e, -np.inf)))
        return BlowUpDetected(ens.t + dt, float(ens.x[i]), i)
    if not (np.all(np.isfinite(new.x)) and np.all(np.isfinite(new.u))
            and np.all(np.isfinite(new.rho))):
        raise NumericalFailure("non-finite state", ens.t)
    return new


# ---------------------------------------------------------------- initial data

def velocity_profile_1d(V0: float, d0: float, support=(-1.0, 1.0), profile: str = "NShape",
                        centre: float | None = None):
    """Velocity ``u0`` and slope ``u0'`` with diameter V0 and minimum slope d0 on support.

    ``NShape`` is piecewise linear: rise, descent of width ``V0/|d0|`` centred
    at ``centre``, rise. ``Sine`` is a sine wave whose steepest descent sits at
    ``centre``. Both extend as constants outside the support.
    """
    a, b = map(float, support)
    L = b - a
    if not L > 0:
        raise InfeasibleInitialData("support must have positive length")
    if V0 < 0:
        raise InfeasibleInitialData("V0 must be nonnegative")
    mid = 0.5 * (a + b)
    c = mid if centre is None else float(centre)

    if V0 == 0:
        if d0 != 0:
            raise InfeasibleInitialData("V0 = 0 forces a constant velocity, so d0 must be 0")
        return (lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                lambda x: np.zeros_like(np.asarray(x, dtype=float)))

    if d0 >= 0:
        if profile != "NShape" or d0 * L > V0 * (1 + 1e-12):
            raise InfeasibleInitialData(
                f"a nondecreasing profile with slope >= {d0} cannot have diameter {V0}")
        # slope d0 outside the middle half, steeper inside
        lo, hi = a + L / 4, b - L / 4
        s_hi = (V0 - d0 * L / 2) / (L / 2)
        xs = np.array([a, lo, hi, b])
        us = np.cumsum([0.0, d0 * (lo - a), s_hi * (hi - lo), d0 * (b - hi)]) - V0 / 2
        return _piecewise(xs, us)

    width = V0 / abs(d0)
    if profile == "NShape":
        if width > L * (1 + 1e-12):
            raise InfeasibleInitialData(f"descent width V0/|d0| = {width:g} exceeds support {L:g}")
        if c - width / 2 < a or c + width / 2 > b:
            c = mid
        left, right = max(a, c - width / 2), min(b, c + width / 2)
        xs = [a, left, right, b]
        us = [-V0 / 2, V0 / 2, -V0 / 2, V0 / 2]
        if left == a:
            us[0] = V0 / 2
        if right == b:
            us[3] = -V0 / 2
        return _piecewise(np.array(xs), np.array(us))
    if profile == "Sine":
        k = 2.0 * abs(d0) / V0
        half = np.pi / (2.0 * k)
        if c - half < a or c + half > b:
            c = mid
        if c - half < a - 1e-12 * L or c + half > b + 1e-12 * L:
            raise InfeasibleInitialData(
                f"sine descent needs length pi*V0/(2|d0|) = {2 * half:g} > support {L:g}")
        amp = V0 / 2

        def u0(x):
            z = np.clip(np.asarray(x, dtype=float) - c, -half, half)
            return -amp * np.sin(k * z)

        def du0(x):
            z = np.asarray(x, dtype=float) - c
            return np.where(np.abs(z) <= half, -amp * k * np.cos(k * z), 0.0)

        return u0, du0
    raise ValueError(f"unknown profile {profile!r}")


def _piecewise(xs, us):
    """Piecewise-linear function through (xs, us), constant outside; slopes take the min at kinks."""
    keep = np.concatenate([[True], np.diff(xs) > 0])
    xs, us = xs[keep], us[keep]
    slopes = np.diff(us) / np.diff(xs) if xs.size > 1 else np.zeros(0)

    def u0(x):
        return np.interp(np.asarray(x, dtype=float), xs, us)

    def du0(x):
        x = np.asarray(x, dtype=float)
        if slopes.size == 0:
            return np.zeros_like(x)
        padded = np.concatenate([[0.0], slopes, [0.0]])
        k_right = np.searchsorted(xs, x, side="right")
        k_left = np.searchsorted(xs, x, side="left")
        return np.minimum(padded[k_right], padded[k_left])

    return u0, du0


def _particles(support, N: int, mass: float):
    a, b = map(float, support)
    x = a + (np.arange(N) + 0.5) * (b - a) / N
    return x, np.full(N, mass / N), np.full(N, mass / (b - a))


def initial_data_1d(V0: float, d0: float, support=(-1.0, 1.0), profile: str = "NShape",
                    N: int = 200, mass: float = 1.0) -> Ensemble1D:
    """Uniform density on ``support`` with the velocity of :func:`velocity_profile_1d`.

    Particles sit at cell midpoints; the descent is centred on the particle
    nearest the middle of the support.
    """
    if N < 1:
        raise ValueError("N must be positive")
    x, w, rho = _particles(support, N, mass)
    u0, du0 = velocity_profile_1d(V0, d0, support, profile, centre=profile_centre(support, N))
    return Ensemble1D(x, u0(x), w, du0(x), rho)


def profile_centre(support, N: int) -> float:
    """Midpoint particle used by :func:`initial_data_1d` to centre the descent."""
    x, _, _ = _particles(support, N, 1.0)
    return float(x[np.argmin(np.abs(x - 0.5 * sum(support)))])


def two_blob_data(blobs=((-1.5, -0.5), (0.5, 1.5)), N: int = 200, mass: float = 1.0,
                  u0=None, du0=None) -> Ensemble1D:
    """Uniform density split evenly across disjoint intervals, velocity ``u0``."""
    if u0 is None:
        u0 = lambda x: -0.05 * np.tanh(x)          # noqa: E731
        du0 = lambda x: -0.05 / np.cosh(x) ** 2    # noqa: E731
    total = sum(b - a for a, b in blobs)
    xs, ws = [], []
    for a, b in blobs:
        n = max(1, round(N * (b - a) / total))
        x, w, _ = _particles((a, b), n, mass * (b - a) / total)
        xs.append(x)
        ws.append(w)
    x, w = np.concatenate(xs), np.concatenate(ws)
    return Ensemble1D(x, u0(x), w, du0(x), np.full(x.size, mass / total))


# ------------------------------------------------------------------- vacuum

def support_intervals(ens: Ensemble1D, gap_factor: float = 3.0):
    """Connected components of the discrete support as (left, right) particle positions.

    A gap between consecutive massive particles wider than ``gap_factor`` times
    the median spacing splits the support.
    """
    xm = np.sort(ens.x[ens.massive])
    if xm.size == 0:
        raise ValueError("ensemble has no massive particles")
    if xm.size == 1:
        return [(float(xm[0]), float(xm[0]))]
    gaps = np.diff(xm)
    cut = gap_factor * np.median(gaps)
    breaks = np.flatnonzero(gaps > cut)
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [xm.size - 1]])
    return [(float(xm[s]), float(xm[e])) for s, e in zip(starts, ends)]


def _half_spacing(ens: Ensemble1D) -> float:
    xm = np.sort(ens.x[ens.massive])
    return 0.5 * float(np.median(np.diff(xm))) if xm.size > 1 else 0.0


def distance_to_support(ens: Ensemble1D, x=None) -> np.ndarray:
    """Distance to the nearest massive particle minus half a spacing, floored at 0."""
    x = ens.x if x is None else np.asarray(x, dtype=float)
    xm = np.sort(ens.x[ens.massive])
    k = np.clip(np.searchsorted(xm, x), 1, xm.size - 1) if xm.size > 1 else np.zeros(x.shape, int)
    near = np.minimum(np.abs(x - xm[k - 1 if xm.size > 1 else 0]), np.abs(x - xm[k]))
    return np.maximum(near - _half_spacing(ens), 0.0)


def seed_tracers(ens: Ensemble1D, offsets, u0, du0) -> Ensemble1D:
    """Append zero-mass tracers at distance ``lam`` outside every support component.

    Tracers are placed at ``lam`` beyond the outer particles of each component,
    on both sides, skipping positions that would land inside another component
    or past the middle of an interior gap.
    """
    offsets = [float(v) for v in offsets]
    if any(v < 0 for v in offsets):
        raise ValueError("tracer offsets must be nonnegative")
    comps = support_intervals(ens)
    xs, lv = [], []
    for lam in offsets:
        for j, (lo, hi) in enumerate(comps):
            left_room = lo - comps[j - 1][1] if j > 0 else np.inf
            right_room = comps[j + 1][0] - hi if j + 1 < len(comps) else np.inf
            if lam <= 0.5 * left_room:
                xs.append(lo - lam)
                lv.append(lam)
            if lam <= 0.5 * right_room:
                xs.append(hi + lam)
                lv.append(lam)
    x = np.array(xs, dtype=float)
    return Ensemble1D(
        np.concatenate([ens.x, x]),
        np.concatenate([ens.u, u0(x)]),
        np.concatenate([ens.w, np.zeros(x.size)]),
        np.concatenate([ens.e, du0(x)]),
        np.concatenate([ens.rho, np.zeros(x.size)]),
        ens.t,
        np.concatenate([ens.level, np.array(lv, dtype=float)]),
    )


def write_trajectory_csv(path, frames) -> None:
    """Rows ``t,i,x,u,e,rho,w`` for each ensemble snapshot in ``frames``."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "i", "x", "u", "e", "rho", "w"])
        for ens in frames:
            for i in range(ens.n):
                out.writerow([repr(float(ens.t)), i, repr(float(ens.x[i])), repr(float(ens.u[i])),
                              repr(float(ens.e[i])), repr(float(ens.rho[i])), repr(float(ens.w[i]))])
