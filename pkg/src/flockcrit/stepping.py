"""Shared time-stepping plumbing for the particle solvers."""
from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "StepConfig",
    "BlowUpDetected",
    "NumericalFailure",
    "RunOutcome",
    "evolve",
]


@dataclass(frozen=True)
class StepConfig:
    """``dt_base`` is the nominal step; ``adaptive`` shrinks it as gradients grow."""

    dt_base: float = 1e-2
    blowup_cutoff: float = 1e6
    adaptive: bool = True

    def __post_init__(self):
        if not self.dt_base > 0:
            raise ValueError("dt_base must be positive")
        if not self.blowup_cutoff > 0:
            raise ValueError("blowup_cutoff must be positive")

    def dt_for(self, rate: float) -> float:
        """Step size given the current gradient magnitude."""
        if not self.adaptive:
            return self.dt_base
        return min(self.dt_base, 0.1 / max(1.0, rate))


@dataclass(frozen=True)
class BlowUpDetected:
    """The gradient indicator crossed ``-blowup_cutoff`` at time ``T_c``."""

    T_c: float
    location: object
    index: int


class NumericalFailure(RuntimeError):
    """The state became non-finite; ``t_last`` is the last valid time."""

    def __init__(self, message: str, t_last: float):
        super().__init__(message)
        self.t_last = t_last


@dataclass
class RunOutcome:
    ensemble: object
    blowup: BlowUpDetected | None
    nsteps: int
    stopped_early: bool = False


def evolve(ens, step_fn, t_end: float, callback=None, stop=None,
           max_steps: int = 10_000_000) -> RunOutcome:
    """Advance ``ens`` with ``step_fn(ens, t_max)`` until ``t_end``.

    ``step_fn`` returns either the next ensemble (never past ``t_max``) or a
    :class:`BlowUpDetected`. ``callback(ens)`` runs after every accepted step;
    ``stop(ens)`` returning true ends the run early.
    """
    nsteps = 0
    while ens.t < t_end - 1e-12 * max(1.0, abs(t_end)):
        if nsteps >= max_steps:
            raise NumericalFailure("maximum number of steps exceeded", ens.t)
        nxt = step_fn(ens, t_end)
        nsteps += 1
        if isinstance(nxt, BlowUpDetected):
            return RunOutcome(ens, nxt, nsteps)
        ens = nxt
        if callback is not None:
            callback(ens)
        if stop is not None and stop(ens):
            return RunOutcome(ens, None, nsteps, stopped_early=True)
    return RunOutcome(ens, None, nsteps)
