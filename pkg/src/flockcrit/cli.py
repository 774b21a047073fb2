"""Command line entry point: ``flockcrit {simulate,thresholds,sweep,validate}``."""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, grid_values, load_config
from .diagnostics import (flocking_check, vacuum_check, write_diagnostics_csv,
                          write_report_json)
from .dynamics1d import (initial_data_1d, profile_centre, seed_tracers, two_blob_data,
                         velocity_profile_1d, write_trajectory_csv)
from .dynamics1d import InfeasibleInitialData
from .dynamics2d import initial_data_2d, write_trajectory_csv_2d
from .kernels import KernelError, NoFlockingGuarantee, flock_diameter
from .majorant import (GapParams, StiffCurveError, closed_bounds_1d, integrate_separatrix,
                       h_curve_2d, mt_majorant_params, mt_sigma, sigma_minus_1d, sigma_plus_1d,
                       write_curves_csv, zeta_threshold_curve)
from .properties import CHECKS, run_validation
from .simulate import run_simulation
from .stepping import NumericalFailure, StepConfig
from .sweep import SweepConfig, majorant_for, phase_diagram, write_summary_json, write_sweep_csv

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_ERROR", "EXIT_BLOWUP", "EXIT_VALIDATION"]

EXIT_OK, EXIT_ERROR, EXIT_BLOWUP, EXIT_VALIDATION = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 so that 2 always means blow-up."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- simulate

def _tanh_field(amplitude: float):
    return (lambda x: -amplitude * np.tanh(x),
            lambda x: -amplitude / np.cosh(x) ** 2)


def build_initial(cfg: RunConfig):
    """Ensemble described by ``simulate.initial`` (tracers included in 1D)."""
    sim = cfg.get("simulate")
    init = sim["initial"]
    mass = float(cfg.get("model", "mass"))
    try:
        if init["kind"] == "affine":
            return initial_data_2d(float(init.get("V0", 0.1)), float(init.get("d0", -0.3)),
                                   float(init.get("B0", 0.0)), init.get("support", "disk"),
                                   int(init.get("N", 20)), mass,
                                   bool(init.get("antisymmetric", False)))
        if init["kind"] == "profile":
            V0, d0 = float(init.get("V0", 0.1)), float(init.get("d0", -0.3))
            support = tuple(init.get("support", (-0.5, 0.5)))
            profile, N = init.get("profile", "NShape"), int(init.get("N", 200))
            ens = initial_data_1d(V0, d0, support, profile, N, mass)
            u0, du0 = velocity_profile_1d(V0, d0, support, profile,
                                          centre=profile_centre(support, N))
        else:
            blobs = tuple(tuple(b) for b in init.get("blobs", ((-1.5, -0.5), (0.5, 1.5))))
            u0, du0 = _tanh_field(float(init.get("amplitude", 0.05)))
            ens = two_blob_data(blobs, int(init.get("N", 200)), mass, u0, du0)
    except (InfeasibleInitialData, ValueError, TypeError, KeyError) as exc:
        raise cfg.error(f"invalid initial data: {exc}", "simulate", "initial") from exc
    if sim["tracers"]:
        ens = seed_tracers(ens, sim["tracers"], u0, du0)
    return ens


def cmd_simulate(cfg: RunConfig, out: Path, args) -> int:
    params = cfg.model_params()
    sim = cfg.get("simulate")
    ens = build_initial(cfg)
    solver = StepConfig(float(sim["dt"]), float(sim["blowup_cutoff"]), sim["adaptive"])
    lambdas = sorted(set(float(v) for v in sim["tracers"]))
    try:
        res = run_simulation(ens, params, solver, float(sim["t_end"]),
                             record_dt=float(sim["record_dt"]), frame_dt=sim["frame_dt"],
                             lambdas=lambdas)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_ERROR
    writer = write_trajectory_csv if ens.x.ndim == 1 else write_trajectory_csv_2d
    writer(out / "trajectory.csv", res.frames)
    write_diagnostics_csv(out / "diagnostics.csv", res.records)

    first = res.records[0]
    N = int(np.count_nonzero(ens.w > 0))
    energy = np.array([r.energy for r in res.records])
    report = {
        "t_final": float(res.final.t),
        "steps": res.nsteps,
        "blowup": None,
        "S0": first.S,
        "V0": first.V,
        "max_energy_increase": float(np.max(np.diff(energy))) if energy.size > 1 else 0.0,
    }
    try:
        D = flock_diameter(params, first.S, first.V)
    except NoFlockingGuarantee as exc:
        D = None
        report["flocking"] = {"skipped": str(exc)}
    if res.blowup is not None:
        b = res.blowup
        report["blowup"] = {"T_c": b.T_c, "location": b.location, "index": b.index}
    elif D is not None:
        report["flocking"] = flocking_check(res.records, params, D, N=N).to_dict()
        if lambdas:
            report["vacuum"] = vacuum_check(res.records, res.frames, params, D, N)
    if D is not None:
        report["D"] = D
    write_report_json(out / "report.json", report)
    if res.blowup is not None:
        print(f"blow-up detected at T_c = {res.blowup.T_c:.6g}")
        return EXIT_BLOWUP
    print(f"reached t = {res.final.t:g} without blow-up")
    return EXIT_OK


# -------------------------------------------------------------- thresholds

def _default_gap(gamma: float):
    B = gamma / 4.0
    return GapParams(0.5 * math.sqrt(gamma ** 2 - 2 * B * B), B)


def cmd_thresholds(cfg: RunConfig, out: Path, args) -> int:
    params = cfg.model_params()
    th = cfg.get("thresholds")
    try:
        D = flock_diameter(params, float(th["S0"]), float(th["V0"]))
    except NoFlockingGuarantee as exc:
        raise cfg.error(str(exc), "thresholds", "V0") from exc
    x_max = th["x_max"] if th["x_max"] is not None else (th["V0"] or 1.0)
    mp = majorant_for(params, D)
    mt = mt_majorant_params(params.kernel, D)
    gp = _default_gap(mp.gamma)
    if th["delta"] is not None or th["B"] is not None:
        gp = GapParams(th["delta"] if th["delta"] is not None else gp.delta,
                       th["B"] if th["B"] is not None else gp.B)
    if not gp.admissible(mp.gamma):
        raise cfg.error(f"gap parameters {gp} not admissible for gamma = {mp.gamma:g}",
                        "thresholds", "delta" if th["delta"] is not None else "B")
    sep = th["separatrix"]
    builders = {
        "sigma_plus": lambda: sigma_plus_1d(mp, x_max),
        "sigma_minus": lambda: sigma_minus_1d(mp, x_max),
        "mt_upper": lambda: mt_sigma(mt, x_max, True),
        "mt_lower": lambda: mt_sigma(mt, x_max, False),
        "zeta": lambda: zeta_threshold_curve(mp, gp),
        "h": lambda: h_curve_2d(mp, gp, x_max),
        "separatrix": lambda: integrate_separatrix(float(sep["E"]), float(sep["F"]),
                                                   float(sep["G"]), x_max),
    }
    summary = {"D": D, "x_max": x_max, "majorant": mp.as_tuple(), "mt_majorant": mt.as_tuple(),
               "gap": {"delta": gp.delta, "B": gp.B}, "curves": {}}
    lo, hi = closed_bounds_1d(mp, float(th["V0"]))
    summary["closed_1d"] = {"bounded_if_d0_at_least": lo, "blowup_if_d0_below": hi}
    for name, build in builders.items():
        try:
            curve = build()
            status = "ok"
        except StiffCurveError as exc:
            curve, status = exc.partial, f"stiff: {exc}"
        write_curves_csv(out / f"{name}.csv", [curve])
        summary["curves"][name] = {"anchor": curve.anchor, "status": status,
                                   "finite_extent": curve.finite_extent}
    write_report_json(out / "thresholds.json", summary)
    print(f"wrote {len(builders)} curves for D = {D:.6g}")
    return EXIT_OK


# ------------------------------------------------------------------- sweep

def sweep_config(cfg: RunConfig) -> SweepConfig:
    sw = cfg.get("sweep")
    return SweepConfig(
        params=cfg.model_params(),
        dimension=sw["dimension"],
        V0_grid=grid_values(sw["V0_grid"]),
        d0_grid=grid_values(sw["d0_grid"]),
        B0_grid=grid_values(sw["B0_grid"]),
        horizon=sw["horizon"],
        solver=StepConfig(float(sw["dt"])),
        N=sw["N"],
        profile=sw["profile"],
        support=tuple(sw["support"]),
        support_2d=sw["support_2d"],
    )


def cmd_sweep(cfg: RunConfig, out: Path, args) -> int:
    points, summary = phase_diagram(sweep_config(cfg), threads=args.threads)
    write_sweep_csv(out / "sweep.csv", points)
    write_summary_json(out / "sweep_summary.json", summary, points)
    print(f"{summary['n_points']} points, sound = {summary['sound']}")
    return EXIT_OK


# ---------------------------------------------------------------- validate

def cmd_validate(cfg: RunConfig, out: Path, args) -> int:
    params = cfg.model_params()
    report = run_validation(args.seed, cfg.get("validate"), only=args.only, params=params)
    write_report_json(out / "validation.json", report)
    for name, res in report["checks"].items():
        print(f"{'PASS' if res['passed'] else 'FAIL'} {name}")
    return EXIT_OK if report["all_passed"] else EXIT_VALIDATION


COMMANDS = {"simulate": cmd_simulate, "thresholds": cmd_thresholds, "sweep": cmd_sweep,
            "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flockcrit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, default=None, help="JSON run configuration")
        s.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        s.add_argument("--seed", type=int, default=0, help="seed for randomized trials")
        s.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
        if name == "validate":
            s.add_argument("--only", nargs="+", default=None, choices=list(CHECKS),
                           help="subset of checks to run")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed < 0 or args.seed >= 2 ** 64:
        print("flockcrit: error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_ERROR
    if args.threads < 1:
        print("flockcrit: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "config.resolved.json").write_text(cfg.to_json())
        return COMMANDS[args.command](cfg, args.out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (KernelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
