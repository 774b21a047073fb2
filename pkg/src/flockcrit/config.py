"""JSON run configuration with defaults, validation and line-precise errors."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass

import numpy as np

from .kernels import KernelError, ModelParams, kernel_from_config

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "DEFAULTS", "grid_values"]


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


DEFAULTS = {
    "model": {"type": "CS", "mass": 1.0, "kernel": {"family": "power_law", "alpha": 0.5}},
    "simulate": {
        "dimension": 1,
        "initial": {"kind": "profile", "V0": 0.1, "d0": -0.3, "support": [-0.5, 0.5],
                    "profile": "NShape", "N": 200},
        "t_end": 20.0,
        "dt": 0.02,
        "adaptive": True,
        "blowup_cutoff": 1e6,
        "record_dt": 0.0,
        "frame_dt": 1.0,
        "tracers": [],
    },
    "thresholds": {"S0": 1.0, "V0": 0.5, "x_max": None, "delta": None, "B": None,
                   "separatrix": {"E": 1.0, "F": 1.0, "G": 1.0}},
    "sweep": {
        "dimension": 1,
        "V0_grid": {"start": 0.05, "stop": 1.0, "num": 20},
        "d0_grid": {"start": -3.0, "stop": -0.05, "num": 20},
        "B0_grid": [0.0],
        "horizon": None,
        "dt": 0.05,
        "N": 100,
        "profile": "NShape",
        "support": [-0.5, 0.5],
        "support_2d": "disk",
    },
    "validate": {},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("initial", "kernel"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _locate(text: str, path) -> int | None:
    """Line of the last key in ``path``, found by scanning for each key in turn."""
    if not text:
        return None
    pos = 0
    found = None
    for key in path:
        if isinstance(key, int):
            continue
        idx = text.find(f'"{key}"', pos)
        if idx < 0:
            break
        found, pos = idx, idx + 1
    return None if found is None else text.count("\n", 0, found) + 1


def grid_values(spec) -> tuple:
    """A grid given as a list or as ``{"start", "stop", "num"}``."""
    if isinstance(spec, dict):
        return tuple(float(v) for v in np.linspace(spec["start"], spec["stop"], int(spec["num"])))
    return tuple(float(v) for v in spec)


@dataclass
class RunConfig:
    data: dict
    text: str = ""
    source: str = "<config>"

    def error(self, message: str, *path) -> ConfigError:
        return ConfigError(message, _locate(self.text, path), self.source)

    def get(self, *path):
        node = self.data
        for k in path:
            node = node[k]
        return node

    def model_params(self) -> ModelParams:
        m = self.data["model"]
        try:
            kernel = kernel_from_config(m["kernel"])
        except (KernelError, KeyError, TypeError) as exc:
            raise self.error(f"invalid kernel: {exc}", "model", "kernel") from exc
        return ModelParams(m["type"], float(m["mass"]), kernel)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    # ------------------------------------------------------------ validation
    def _number(self, path, *, positive=False, nonneg=False, allow_none=False):
        v = self.get(*path)
        if v is None and allow_none:
            return
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise self.error(f"{'.'.join(map(str, path))} must be a finite number, got {v!r}", *path)
        if positive and not v > 0:
            raise self.error(f"{'.'.join(map(str, path))} must be positive", *path)
        if nonneg and v < 0:
            raise self.error(f"{'.'.join(map(str, path))} must be nonnegative", *path)

    def _choice(self, path, options):
        v = self.get(*path)
        if v not in options:
            raise self.error(f"{'.'.join(map(str, path))} must be one of {list(options)}, got {v!r}",
                             *path)

    def _grid(self, path):
        v = self.get(*path)
        try:
            g = grid_values(v)
        except (KeyError, TypeError, ValueError) as exc:
            raise self.error(f"{'.'.join(path)} must be a list or {{start, stop, num}}: {exc}",
                             *path) from exc
        if list(g) != sorted(g):
            raise self.error(f"{'.'.join(path)} must be sorted", *path)

    def validate(self) -> "RunConfig":
        known = set(DEFAULTS)
        for k in self.data:
            if k not in known:
                raise self.error(f"unknown section {k!r}", k)
        self._choice(("model", "type"), ("CS", "MT"))
        self._number(("model", "mass"), positive=True)
        self.model_params()

        sim = ("simulate",)
        self._choice(sim + ("dimension",), (1, 2))
        for key in ("t_end", "dt", "blowup_cutoff"):
            self._number(sim + (key,), positive=True)
        self._number(sim + ("record_dt",), nonneg=True)
        self._number(sim + ("frame_dt",), nonneg=True, allow_none=True)
        if not isinstance(self.get(*sim, "adaptive"), bool):
            raise self.error("simulate.adaptive must be true or false", *sim, "adaptive")
        tr = self.get(*sim, "tracers")
        if not isinstance(tr, list) or any(isinstance(v, bool) or not isinstance(v, (int, float))
                                           or v < 0 for v in tr):
            raise self.error("simulate.tracers must be a list of nonnegative offsets",
                             *sim, "tracers")
        init = self.get(*sim, "initial")
        kinds = ("profile", "two_blob") if self.get(*sim, "dimension") == 1 else ("affine",)
        if not isinstance(init, dict) or init.get("kind") not in kinds:
            raise self.error(f"simulate.initial.kind must be one of {list(kinds)}",
                             *sim, "initial")
        if "N" in init:
            n = init["N"]
            if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                raise self.error("simulate.initial.N must be a positive integer",
                                 *sim, "initial", "N")

        th = ("thresholds",)
        self._number(th + ("S0",), nonneg=True)
        self._number(th + ("V0",), nonneg=True)
        for key in ("x_max", "delta", "B"):
            self._number(th + (key,), positive=True, allow_none=True)
        sep = self.get(*th, "separatrix")
        for key in ("E", "G"):
            self._number(th + ("separatrix", key), positive=True)
        self._number(th + ("separatrix", "F"))
        if set(sep) - {"E", "F", "G"}:
            raise self.error("thresholds.separatrix takes E, F, G only", *th, "separatrix")

        sw = ("sweep",)
        self._choice(sw + ("dimension",), (1, 2))
        for key in ("V0_grid", "d0_grid", "B0_grid"):
            self._grid(sw + (key,))
        self._number(sw + ("horizon",), positive=True, allow_none=True)
        self._number(sw + ("dt",), positive=True)
        self._choice(sw + ("profile",), ("NShape", "Sine"))
        self._choice(sw + ("support_2d",), ("disk", "square"))
        n = self.get(*sw, "N")
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise self.error("sweep.N must be a positive integer", *sw, "N")

        if not isinstance(self.get("validate"), dict):
            raise self.error("validate must be an object", "validate")
        from .properties import merged_settings
        try:
            merged_settings(self.get("validate"))
        except KeyError as exc:
            raise self.error(str(exc.args[0]), "validate") from exc
        return self


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno, source)
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", 1, source)
    return RunConfig(_merge(DEFAULTS, raw), text, source).validate()


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig(copy.deepcopy(DEFAULTS)).validate()
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, str(path))
