"""Run a particle ensemble to a horizon while collecting diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field

from .diagnostics import DiagnosticsRecord, record
from .dynamics1d import Ensemble1D, step
from .dynamics2d import step_2d
from .kernels import ModelParams
from .stepping import BlowUpDetected, StepConfig, evolve

__all__ = ["SimulationResult", "run_simulation"]


@dataclass
class SimulationResult:
    final: object
    records: list
    frames: list = field(default_factory=list)
    blowup: BlowUpDetected | None = None
    nsteps: int = 0
    stopped_early: bool = False


def run_simulation(ens, params: ModelParams, cfg: StepConfig, t_end: float, *,
                   record_dt: float = 0.0, frame_dt: float | None = None, lambdas=(),
                   stop=None) -> SimulationResult:
    """Integrate to ``t_end`` and record diagnostics.

    Diagnostics are taken at t = 0 and then at the first step reaching each
    multiple of ``record_dt`` (every step when 0). Snapshots for trajectory
    output follow ``frame_dt`` the same way; none are kept when it is None.
    """
    stepper = step if isinstance(ens, Ensemble1D) else step_2d
    records: list[DiagnosticsRecord] = [record(ens, params, lambdas)]
    frames = [ens] if frame_dt is not None else []
    next_rec = [record_dt]
    next_frame = [frame_dt or 0.0]

    def callback(e):
        if e.t >= next_rec[0] - 1e-12 or e.t >= t_end - 1e-12:
            records.append(record(e, params, lambdas))
            while next_rec[0] <= e.t + 1e-12 and record_dt > 0:
                next_rec[0] += record_dt
        if frame_dt is not None and (e.t >= next_frame[0] - 1e-12 or e.t >= t_end - 1e-12):
            frames.append(e)
            while next_frame[0] <= e.t + 1e-12 and frame_dt > 0:
                next_frame[0] += frame_dt

    out = evolve(ens, lambda e, tm: stepper(e, params, cfg, tm), t_end, callback, stop)
    return SimulationResult(out.ensemble, records, frames, out.blowup, out.nsteps,
                            out.stopped_early)
