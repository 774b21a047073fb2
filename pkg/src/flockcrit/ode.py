"""Dormand-Prince 5(4) integrator with exact output nodes and stop hooks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["OdeResult", "StepTooSmall", "dopri5"]

# Butcher tableau (Dormand & Prince 1980)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = np.array(_A[6] + (0.0,))
_E = _B - np.array((5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40))

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


@dataclass
class OdeResult:
    t: np.ndarray
    y: np.ndarray  # shape (len(t), n)
    status: str  # "done" or "stopped"
    nsteps: int


class StepTooSmall(RuntimeError):
    """Step size fell below the floor; carries the partial solution."""

    def __init__(self, message: str, partial: OdeResult):
        super().__init__(message)
        self.partial = partial


def dopri5(fun, t0, y0, t_end, *, rtol=1e-9, atol=1e-12, t_eval=None, h0=None,
           stop=None, h_min_rel=1e-13, max_steps=1_000_000) -> OdeResult:
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t_end``.

    Steps are clipped so every entry of ``t_eval`` is hit exactly; without
    ``t_eval`` every accepted step is recorded. ``stop(t, y)`` is checked after
    each accepted step and ends the run when it returns true.
    """
    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    t = float(t0)
    direction = 1.0 if t_end >= t0 else -1.0
    if t_eval is None:
        nodes = None
    else:
        nodes = [float(s) for s in t_eval if direction * (s - t0) > 0]
    include_start = t_eval is None or (len(t_eval) and float(t_eval[0]) == t0)
    ts, ys = ([t], [y.copy()]) if include_start else ([], [])
    k_idx = 0

    k1 = np.asarray(fun(t, y), dtype=float)
    if h0 is None:
        scale = atol + rtol * np.abs(y)
        d0 = np.sqrt(np.mean((y / scale) ** 2))
        d1 = np.sqrt(np.mean((k1 / scale) ** 2))
        h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h = min(h, abs(t_end - t0))
    else:
        h = float(h0)
    h = max(h, 1e-300)

    ks = [k1] + [None] * 6
    nsteps = 0
    status = "done"
    while direction * (t_end - t) > 0:
        if nsteps >= max_steps:
            raise StepTooSmall("maximum number of steps exceeded",
                               OdeResult(np.array(ts), np.array(ys), "failed", nsteps))
        target = t_end if nodes is None or k_idx >= len(nodes) else nodes[k_idx]
        hit = False
        if h >= abs(target - t):
            h_try = abs(target - t)
            hit = True
        else:
            h_try = h
        if h_try <= h_min_rel * max(1.0, abs(t)):
            raise StepTooSmall(f"step size {h_try:.3e} below floor at t={t:.6g}",
                               OdeResult(np.array(ts), np.array(ys), "failed", nsteps))
        hs = direction * h_try
        for s in range(1, 7):
            yi = y.copy()
            for j, a in enumerate(_A[s]):
                if a:
                    yi += hs * a * ks[j]
            ks[s] = np.asarray(fun(t + _C[s] * hs, yi), dtype=float)
        y_new = yi  # the 7th stage argument is the 5th-order solution (FSAL)
        err_vec = hs * sum(e * k for e, k in zip(_E, ks) if e)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        if not np.isfinite(err):
            h = h_try * MIN_FACTOR
            continue
        if err <= 1.0:
            nsteps += 1
            t = target if hit else t + hs
            y = y_new
            ks[0] = ks[6]
            recorded = nodes is None or hit
            if recorded:
                ts.append(t)
                ys.append(y.copy())
            if hit and nodes is not None:
                k_idx += 1
            factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
            if not hit:
                h = h_try * factor
            else:
                h = max(h, h_try * factor) if h_try < h else h_try * factor
            if stop is not None and stop(t, y):
                status = "stopped"
                if not recorded:
                    ts.append(t)
                    ys.append(y.copy())
                break
        else:
            h = h_try * max(MIN_FACTOR, SAFETY * err ** -0.2)
    return OdeResult(np.array(ts), np.array(ys), status, nsteps)
