"""Influence functions, their primitives and the flocking diameter.

Two kernel families are supported: the power law ``phi(r) = (1 + r)**-alpha``
and a tabulated, piecewise-linear kernel. Tabulated kernels are held constant
at their last tabulated value beyond the end of the table.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InfluenceKernel",
    "ModelParams",
    "PowerLaw",
    "Tabulated",
    "KernelError",
    "UndecidableNonlocality",
    "NoFlockingGuarantee",
    "phi_eval",
    "check_nonlocal",
    "psi",
    "psi_inverse",
    "flock_diameter",
    "kernel_from_config",
]


class KernelError(ValueError):
    """Invalid kernel data or an argument outside the kernel's domain."""


class UndecidableNonlocality(KernelError):
    """Divergence of the kernel tail cannot be decided from a finite table."""


class NoFlockingGuarantee(ValueError):
    """The initial diameters are too large for an integrable kernel."""


@dataclass(frozen=True)
class InfluenceKernel:
    """Base class; subclasses implement ``phi``, ``dphi`` and ``integral``."""

    @property
    def lip(self) -> float:
        raise NotImplementedError

    def phi(self, r):
        raise NotImplementedError

    def dphi(self, r):
        """Derivative of phi (right derivative at kinks)."""
        raise NotImplementedError

    def integral(self, t):
        """int_0^t phi(s) ds."""
        raise NotImplementedError

    def phi_and_dphi(self, r):
        return self.phi(r), self.dphi(r)

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PowerLaw(InfluenceKernel):
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise KernelError(f"power-law exponent must be positive, got {self.alpha}")

    @property
    def lip(self) -> float:
        return float(self.alpha)

    def phi(self, r):
        return (1.0 + np.asarray(r, dtype=float)) ** (-self.alpha)

    def dphi(self, r):
        return -self.alpha * (1.0 + np.asarray(r, dtype=float)) ** (-self.alpha - 1.0)

    def phi_and_dphi(self, r):
        one_r = 1.0 + np.asarray(r, dtype=float)
        f = np.exp(-self.alpha * np.log(one_r))
        return f, -self.alpha * f / one_r

    def integral(self, t):
        t = np.asarray(t, dtype=float)
        if self.alpha == 1.0:
            return np.log1p(t)
        return np.expm1((1.0 - self.alpha) * np.log1p(t)) / (1.0 - self.alpha)

    def tail_integral(self, s: float) -> float:
        """int_s^inf phi, infinite when alpha <= 1."""
        if self.alpha <= 1.0:
            return math.inf
        return (1.0 + s) ** (1.0 - self.alpha) / (self.alpha - 1.0)

    def to_config(self) -> dict:
        return {"family": "power_law", "alpha": self.alpha}


@dataclass(frozen=True)
class Tabulated(InfluenceKernel):
    """Piecewise-linear kernel through ``(grid[k], values[k])``.

    The grid must start at 0 with value 1 and the values must be
    nonincreasing and positive at the origin; anything else is rejected.
    """

    grid: tuple
    values: tuple
    _cum: np.ndarray = field(init=False, repr=False, compare=False)
    _slopes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        r = np.asarray(self.grid, dtype=float)
        f = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or r.shape != f.shape or r.size < 2:
            raise KernelError("tabulated kernel needs matching 1-d arrays of length >= 2")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(f))):
            raise KernelError("tabulated kernel contains non-finite entries")
        if r[0] != 0.0:
            raise KernelError("tabulated kernel grid must start at r = 0")
        if np.any(np.diff(r) <= 0):
            raise KernelError("tabulated kernel grid must be strictly increasing")
        if f[0] != 1.0:
            raise KernelError("tabulated kernel must satisfy phi(0) = 1")
        if np.any(np.diff(f) > 0):
            raise KernelError("tabulated kernel values must be nonincreasing")
        if np.any(f < 0):
            raise KernelError("tabulated kernel values must be nonnegative")
        object.__setattr__(self, "grid", tuple(r.tolist()))
        object.__setattr__(self, "values", tuple(f.tolist()))
        slopes = np.diff(f) / np.diff(r)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(r))])
        object.__setattr__(self, "_slopes", slopes)
        object.__setattr__(self, "_cum", cum)

    @property
    def lip(self) -> float:
        return float(np.max(np.abs(self._slopes)))

    def phi(self, r):
        return np.interp(np.asarray(r, dtype=float), self.grid, self.values)

    def dphi(self, r):
        r = np.asarray(r, dtype=float)
        k = np.searchsorted(self.grid, r, side="right") - 1
        inside = k < len(self._slopes)
        out = np.where(inside, self._slopes[np.clip(k, 0, len(self._slopes) - 1)], 0.0)
        return out if out.ndim else float(out)

    def integral(self, t):
        t = np.asarray(t, dtype=float)
        grid = np.asarray(self.grid)
        k = np.clip(np.searchsorted(grid, t, side="right") - 1, 0, grid.size - 1)
        r0 = grid[k]
        f0 = np.asarray(self.values)[k]
        f1 = self.phi(t)
        out = self._cum[k] + 0.5 * (f0 + f1) * (t - r0)
        return out if out.ndim else float(out)

    def tail_integral(self, s: float) -> float:
        if self.values[-1] > 0:
            return math.inf
        return float(self.integral(self.grid[-1]) - self.integral(min(s, self.grid[-1])))

    def to_config(self) -> dict:
        return {"family": "tabulated", "r": list(self.grid), "phi": list(self.values)}


@dataclass(frozen=True)
class ModelParams:
    """Alignment model: ``model`` is ``"CS"`` or ``"MT"``."""

    model: str
    mass: float
    kernel: InfluenceKernel

    def __post_init__(self):
        if self.model not in ("CS", "MT"):
            raise ValueError(f"model must be 'CS' or 'MT', got {self.model!r}")
        if not self.mass > 0:
            raise ValueError("total mass must be positive")

    @property
    def m(self) -> float:
        """Interaction bound used in every estimate (1 for MT)."""
        return self.mass if self.model == "CS" else 1.0


def phi_eval(kernel: InfluenceKernel, r: float) -> float:
    if r < 0:
        raise KernelError(f"phi is defined for r >= 0, got {r}")
    return float(kernel.phi(r))


def check_nonlocal(kernel: InfluenceKernel) -> bool:
    """Whether int^inf phi diverges.

    Raises :class:`UndecidableNonlocality` for tabulated kernels: a finite
    table says nothing about the true tail.
    """
    if isinstance(kernel, PowerLaw):
        return kernel.alpha <= 1.0
    raise UndecidableNonlocality("tail divergence is undecidable from a finite table")


def psi(params: ModelParams, t):
    """m * int_0^t phi."""
    if np.any(np.asarray(t) < 0):
        raise KernelError("psi is defined for t >= 0")
    return params.m * params.kernel.integral(t)


def psi_inverse(params: ModelParams, value: float, rtol: float = 1e-12) -> float:
    """Invert psi by bisection; the upper bracket is grown by doubling."""
    if value < 0:
        raise KernelError("psi takes nonnegative values only")
    if value == 0:
        return 0.0
    sup = params.m * params.kernel.tail_integral(0.0)
    if value >= sup:
        raise NoFlockingGuarantee(f"psi is bounded by {sup} < {value}")
    lo, hi = 0.0, 1.0
    while psi(params, hi) < value:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if psi(params, mid) < value:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    return 0.5 * (lo + hi)


def flock_diameter(params: ModelParams, S0: float, V0: float) -> float:
    """Uniform bound D on the support diameter: psi(D) = V0 + psi(S0)."""
    if S0 < 0 or V0 < 0:
        raise ValueError("diameters must be nonnegative")
    if V0 == 0:
        return float(S0)
    tail = params.m * params.kernel.tail_integral(S0)
    if not V0 < tail:
        raise NoFlockingGuarantee(
            f"V0 = {V0} is not below m * int_S0^inf phi = {tail}; no flocking guarantee"
        )
    return max(float(S0), psi_inverse(params, V0 + float(psi(params, S0))))


def kernel_from_config(cfg: dict) -> InfluenceKernel:
    family = cfg.get("family")
    if family == "power_law":
        return PowerLaw(float(cfg["alpha"]))
    if family == "tabulated":
        return Tabulated(tuple(cfg["r"]), tuple(cfg["phi"]))
    raise KernelError(f"unknown kernel family {family!r}")
