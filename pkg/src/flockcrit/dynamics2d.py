"""Lagrangian solver for the 2D alignment system with gradient tracking.

Each characteristic carries ``M = grad u`` with ``M[k, l] = d u_l / d x_k``.
Along a characteristic ``M' = -M @ M + forcing - p M``; the divergence
``d = tr M`` is the blow-up indicator.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics1d import DegenerateNormalization, InfeasibleInitialData
from .kernels import ModelParams
from .stepping import BlowUpDetected, NumericalFailure, StepConfig

__all__ = [
    "Ensemble2D",
    "velocity_rhs_2d",
    "gradient_rhs_2d",
    "dqrs_diagnostics",
    "initial_data_2d",
    "ensemble_from_field_2d",
    "support_points_2d",
    "measure_initial_2d",
    "step_2d",
    "write_trajectory_csv_2d",
]


@dataclass
class Ensemble2D:
    x: np.ndarray    # (n, 2)
    u: np.ndarray    # (n, 2)
    w: np.ndarray    # (n,)
    M: np.ndarray    # (n, 2, 2)
    rho: np.ndarray  # (n,)
    t: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1, 2)
        self.u = np.asarray(self.u, dtype=float).reshape(-1, 2)
        self.w = np.asarray(self.w, dtype=float)
        self.M = np.asarray(self.M, dtype=float).reshape(-1, 2, 2)
        self.rho = np.asarray(self.rho, dtype=float)
        n = self.x.shape[0]
        if not (self.u.shape[0] == self.w.size == self.M.shape[0] == self.rho.size == n):
            raise ValueError("ensemble arrays must have equal lengths")
        if np.any(self.w < 0):
            raise ValueError("masses must be nonnegative")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def massive(self) -> np.ndarray:
        return self.w > 0


def _kernel_terms(x, w, model: ModelParams):
    """Weighted phi and the two components of grad_x phi against massive particles."""
    m = w > 0
    xm, wm = (x, w) if m.all() else (x[m], w[m])
    d1 = x[:, 0, None] - xm[None, :, 0]
    d2 = x[:, 1, None] - xm[None, :, 1]
    r = np.hypot(d1, d2)
    phi, dphi = model.kernel.phi_and_dphi(r)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(r > 0, dphi * wm / r, 0.0)
    return phi * wm, (g * d1, g * d2), m


def _forces_2d(x, u, w, M, model: ModelParams):
    """(acceleration, linear part of M') for every characteristic."""
    K, (G1, G2), m = _kernel_terms(x, w, model)
    u = u - u[np.argmax(m)] if len(u) else u    # shift invariance, exact for a flock
    um = u if m.all() else u[m]
    Phi = K.sum(axis=1)
    Ku = K @ um                                       # (n, 2)
    gPhi = np.column_stack([G1.sum(axis=1), G2.sum(axis=1)])
    gKu = np.stack([G1 @ um, G2 @ um], axis=1)        # [i, k, l] = sum_j dk phi_ij w_j u_jl
    if model.model == "CS":
        acc = Ku - u * Phi[:, None]
        forcing = gKu - gPhi[:, :, None] * u[:, None, :]
        return acc, forcing - M * Phi[:, None, None]
    if np.any(Phi <= 0):
        raise DegenerateNormalization("Motsch-Tadmor normalization vanished")
    acc = Ku / Phi[:, None] - u
    # grad(phi/Phi) tensor (u_j - u_i); the u_i part has zero weight
    forcing = (Phi[:, None, None] * gKu - gPhi[:, :, None] * Ku[:, None, :]) / (Phi ** 2)[:, None, None]
    return acc, forcing - M


def velocity_rhs_2d(ens: Ensemble2D, model: ModelParams) -> np.ndarray:
    acc, _ = _forces_2d(ens.x, ens.u, ens.w, ens.M, model)
    return acc


def gradient_rhs_2d(ens: Ensemble2D, model: ModelParams) -> np.ndarray:
    _, lin = _forces_2d(ens.x, ens.u, ens.w, ens.M, model)
    return -ens.M @ ens.M + lin


def dqrs_diagnostics(M) -> dict:
    """Per-characteristic d, q, r, s and the signed squared spectral gap."""
    M = np.asarray(M, dtype=float).reshape(-1, 2, 2)
    d = M[:, 0, 0] + M[:, 1, 1]
    q = M[:, 0, 0] - M[:, 1, 1]
    r = M[:, 0, 1]
    s = M[:, 1, 0]
    return {"d": d, "q": q, "r": r, "s": s, "eta2": q * q + 4.0 * r * s}


def _deriv(x, u, M, rho, w, model):
    acc, lin = _forces_2d(x, u, w, M, model)
    trace = M[:, 0, 0] + M[:, 1, 1]
    return u, acc, -M @ M + lin, -rho * trace


def _rk4(ens: Ensemble2D, model, dt):
    y = (ens.x, ens.u, ens.M, ens.rho)
    k1 = _deriv(*y, ens.w, model)
    k2 = _deriv(*[a + 0.5 * dt * k for a, k in zip(y, k1)], ens.w, model)
    k3 = _deriv(*[a + 0.5 * dt * k for a, k in zip(y, k2)], ens.w, model)
    k4 = _deriv(*[a + dt * k for a, k in zip(y, k3)], ens.w, model)
    out = [a + dt / 6.0 * (p + 2 * q + 2 * r + z) for a, p, q, r, z in zip(y, k1, k2, k3, k4)]
    return replace(ens, x=out[0], u=out[1], M=out[2], rho=out[3], t=ens.t + dt)


def step_2d(ens: Ensemble2D, model: ModelParams, cfg: StepConfig, t_max: float | None = None):
    """One RK4 step; :class:`BlowUpDetected` once min div u drops below the cutoff."""
    if not all(np.all(np.isfinite(a)) for a in (ens.x, ens.u, ens.M, ens.rho)):
        raise NumericalFailure("non-finite state", ens.t)
    dt = cfg.dt_for(float(np.max(np.abs(ens.M))) if ens.n else 0.0)
    if t_max is not None:
        dt = min(dt, t_max - ens.t)
    with np.errstate(over="ignore", invalid="ignore"):
        new = _rk4(ens, model, dt)
    cut = -cfg.blowup_cutoff
    d = new.M[:, 0, 0] + new.M[:, 1, 1]
    if not np.all(np.isfinite(new.M)) or np.min(d) < cut:
        with np.errstate(over="ignore", invalid="ignore"):
            half = _rk4(ens, model, 0.5 * dt)
        dh = half.M[:, 0, 0] + half.M[:, 1, 1]
        if np.all(np.isfinite(half.M)) and np.min(dh) < cut:
            i = int(np.argmin(dh))
            return BlowUpDetected(ens.t + 0.5 * dt, tuple(half.x[i]), i)
        i = int(np.argmin(np.where(np.isfinite(d), d, -np.inf)))
        return BlowUpDetected(ens.t + dt, tuple(ens.x[i]), i)
    if not (np.all(np.isfinite(new.x)) and np.all(np.isfinite(new.u))
            and np.all(np.isfinite(new.rho))):
        raise NumericalFailure("non-finite state", ens.t)
    return new


# ---------------------------------------------------------------- initial data

def support_points_2d(shape: str, size: float, n_axis: int):
    """Cell midpoints of an ``n_axis`` x ``n_axis`` grid on a square of side ``size``.

    For ``shape == "disk"`` the grid covers the bounding square of a disk of
    radius ``size`` and only midpoints inside the disk are kept.
    Returns (points, area).
    """
    if n_axis < 1 or not size > 0:
        raise ValueError("need n_axis >= 1 and positive size")
    if shape == "square":
        h = size / n_axis
        g = -size / 2 + (np.arange(n_axis) + 0.5) * h
        X, Y = np.meshgrid(g, g, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()]), size * size
    if shape == "disk":
        h = 2 * size / n_axis
        g = -size + (np.arange(n_axis) + 0.5) * h
        X, Y = np.meshgrid(g, g, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        return pts[np.hypot(pts[:, 0], pts[:, 1]) <= size], math.pi * size * size
    raise ValueError(f"unknown support shape {shape!r}")


def ensemble_from_field_2d(points, u0, grad_u0, area: float, mass: float = 1.0) -> Ensemble2D:
    """Uniform density over ``points`` with velocity ``u0`` and gradient ``grad_u0``.

    ``grad_u0(points)`` returns an (n, 2, 2) array with ``[k, l] = d u_l / d x_k``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    return Ensemble2D(pts, u0(pts), np.full(n, mass / n), grad_u0(pts), np.full(n, mass / area))


def initial_data_2d(V0: float, d0: float, B0: float, support: str = "disk", N: int = 20,
                    mass: float = 1.0, antisymmetric: bool = False) -> Ensemble2D:
    """Affine data ``u0 = A x`` with ``A = [[d0/2, B0/2], [+-B0/2, d0/2]]``.

    The divergence is ``d0`` everywhere and the off-trace measure is ``B0``.
    The support size is chosen so the velocity diameter equals ``V0``: a disk
    of radius ``V0 / (|d0| + B0)`` or a square of side
    ``sqrt(2) V0 / (|d0| + B0)``. With ``antisymmetric`` the shear is a
    rotation and the spectrum is complex. ``N`` is the resolution per axis.
    """
    if V0 < 0 or B0 < 0:
        raise InfeasibleInitialData("V0 and B0 must be nonnegative")
    spread = abs(d0) + B0
    if spread == 0 or V0 == 0:
        if V0 != 0 or spread != 0:
            raise InfeasibleInitialData("V0 = 0 requires d0 = B0 = 0 and vice versa")
        pts, area = support_points_2d(support, 1.0, N)
        zero = lambda p: np.zeros((p.shape[0], 2))              # noqa: E731
        grad = lambda p: np.zeros((p.shape[0], 2, 2))           # noqa: E731
        return ensemble_from_field_2d(pts, zero, grad, area, mass)
    sign = -1.0 if antisymmetric else 1.0
    A = np.array([[d0 / 2, B0 / 2], [sign * B0 / 2, d0 / 2]])  # A[k, l] = d u_l / d x_k
    if antisymmetric:
        # singular values of [[a, b], [-b, a]] are both sqrt(a^2 + b^2)
        spread = 2 * math.hypot(d0 / 2, B0 / 2)
    size = V0 / spread if support == "disk" else math.sqrt(2.0) * V0 / spread
    pts, area = support_points_2d(support, size, N)
    return ensemble_from_field_2d(
        pts,
        lambda p: p @ A,
        lambda p: np.broadcast_to(A, (p.shape[0], 2, 2)).copy(),
        area, mass,
    )


def measure_initial_2d(ens: Ensemble2D):
    """(V0, d0, B0) of an ensemble: velocity diameter, min divergence, off-trace measure."""
    m = ens.massive
    u = ens.u[m]
    diff = u[:, None, :] - u[None, :, :]
    V = float(np.sqrt(np.max(np.sum(diff * diff, axis=-1)))) if u.shape[0] > 1 else 0.0
    dg = dqrs_diagnostics(ens.M[m])
    K = np.maximum(np.maximum(2 * np.abs(dg["r"]), 2 * np.abs(dg["s"])), np.abs(dg["q"]))
    return V, float(np.min(dg["d"])), float(np.max(K))


def write_trajectory_csv_2d(path, frames) -> None:
    """Rows ``t,i,x1,x2,u1,u2,M11,M12,M21,M22,rho,w`` per ensemble snapshot."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "i", "x1", "x2", "u1", "u2", "M11", "M12", "M21", "M22", "rho", "w"])
        for ens in frames:
            for i in range(ens.n):
                vals = (ens.x[i, 0], ens.x[i, 1], ens.u[i, 0], ens.u[i, 1], ens.M[i, 0, 0],
                        ens.M[i, 0, 1], ens.M[i, 1, 0], ens.M[i, 1, 1], ens.rho[i], ens.w[i])
                out.writerow([repr(float(ens.t)), i] + [repr(float(v)) for v in vals])
