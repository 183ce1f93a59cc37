"""Run configuration: a YAML document mapped onto nested dataclasses.

Every section is a dataclass; unknown keys, wrong types and out-of-range
values raise :class:`ConfigError` naming the offending key path.
"""
from __future__ import annotations

import dataclasses
import hashlib
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .epi import DEFAULT_SERIAL, MATRICES, SerialInterval
from .fit import FitOptions
from .nelder_mead import NMOptions
from .observe import NoiseParams, ReportingModel

SPEC_VERSION = 1
SEEDING_MODES = ("frac", "counts", "prior_window")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class Groups:
    names: list[str] = field(default_factory=lambda: ["children", "adults"])
    pop: list[float] = field(default_factory=lambda: [1e6, 2e6])

    def check(self, path):
        if len(self.names) != len(self.pop) or not self.names:
            raise ConfigError(path, "names and pop must be non-empty and of equal length")
        if len(set(self.names)) != len(self.names):
            raise ConfigError(path + ".names", "group names must be unique")
        if any(p <= 0 for p in self.pop):
            raise ConfigError(path + ".pop", "group sizes must be positive")


@dataclass
class Seeding:
    """``frac``: ``frac * s0 * N`` seeds on day 0 (needs known s0).
    ``counts``: explicit day-0 seeds per group, one row per season or one
    row shared by all.  ``prior_window``: the first ``d`` observed days of
    each season act as the seeding history and are not fitted."""

    mode: str = "frac"
    frac: float = 1e-3
    counts: list | None = None

    def check(self, path):
        if self.mode not in SEEDING_MODES:
            raise ConfigError(path + ".mode", f"must be one of {SEEDING_MODES}")
        if not 0 < self.frac < 1:
            raise ConfigError(path + ".frac", "must lie in (0, 1)")
        if self.mode == "counts" and self.counts is None:
            raise ConfigError(path + ".counts", "required when mode is 'counts'")


@dataclass
class Noise:
    """Fixed ``phi_a``/``phi_b``, or ``estimate: true`` to fit them."""

    estimate: bool = True
    phi_a: float = 10.0
    phi_b: float = 0.1

    def check(self, path):
        if self.phi_a < 0 or self.phi_b < 0 or (self.phi_a == 0 and self.phi_b == 0):
            raise ConfigError(path, "phi_a, phi_b must be >= 0 and not both zero")

    def params(self) -> NoiseParams:
        return NoiseParams(self.phi_a, self.phi_b)


@dataclass
class Reporting:
    """Per-group rates, either one value per group or a groups x seasons table."""

    eta: list
    theta: list


@dataclass
class Free:
    s0: bool = False
    r: bool = True


@dataclass
class Known:
    """Known s0: one row per season, or one row shared by all seasons."""

    s0: list | None = None
    r: list[float] | None = None


@dataclass
class Ingest:
    weekend_window: int = 1
    start_day: int | None = None
    end_day: int | None = None
    negative_floor: float | None = None

    def check(self, path):
        if self.weekend_window < 1 or self.weekend_window % 2 == 0:
            raise ConfigError(path + ".weekend_window", "must be a positive odd integer")


@dataclass
class Optimizer:
    xtol: float = 1e-8
    ftol: float = 1e-10
    max_iter_factor: int = 200
    restarts: int = 1
    block_cycles: int = 100
    block_tol: float = 1e-5
    polish_tol: float = 1e-3

    def options(self) -> FitOptions:
        nm = NMOptions(self.xtol, self.ftol, self.max_iter_factor, self.restarts)
        return FitOptions(nm=nm, block_cycles=self.block_cycles, block_tol=self.block_tol,
                          polish_tol=self.polish_tol)


@dataclass
class Simulation:
    """Truth for ``simulate``: the NGM, per-season s0 and factors r."""

    matrix: typing.Any = "matrix1"
    s0: list = field(default_factory=lambda: [[0.4, 0.4]])
    r: list[float] | None = None
    horizon: int | None = None
    noise: bool = True

    def beta(self, path="simulation.matrix") -> np.ndarray:
        if isinstance(self.matrix, str):
            if self.matrix not in MATRICES:
                raise ConfigError(path, f"unknown matrix {self.matrix!r}; choose from {sorted(MATRICES)}")
            return np.array(MATRICES[self.matrix])
        return np.array(self.matrix, dtype=float)


@dataclass
class Scenario:
    """Monte Carlo study settings (see :class:`ngmfit.montecarlo.ScenarioSpec`)."""

    matrix: typing.Any = "matrix1"
    scenario: str = "i"
    replicates: int = 500
    n_years: int = 10
    start: str = "two-stage"
    workers: int | None = None


@dataclass
class RunConfig:
    spec_version: int = SPEC_VERSION
    seed: int = 0
    output_dir: str | None = None
    groups: Groups = field(default_factory=Groups)
    serial: list[float] = field(default_factory=lambda: list(DEFAULT_SERIAL))
    seeding: Seeding = field(default_factory=Seeding)
    free: Free = field(default_factory=Free)
    known: Known = field(default_factory=Known)
    noise: Noise = field(default_factory=Noise)
    reporting: Reporting | None = None
    window: int = 7
    ingest: Ingest = field(default_factory=Ingest)
    optimizer: Optimizer = field(default_factory=Optimizer)
    simulation: Simulation = field(default_factory=Simulation)
    scenario: Scenario = field(default_factory=Scenario)
    source: str = field(default="", repr=False, compare=False)

    @property
    def m(self) -> int:
        return len(self.groups.names)

    @property
    def serial_interval(self) -> SerialInterval:
        return SerialInterval(np.array(self.serial, dtype=float))

    def digest(self) -> str:
        return hashlib.sha256(self.source.encode()).hexdigest()

    def season_rows(self, value, L: int, path: str) -> np.ndarray:
        """Broadcast a per-group row (or one row per season) to ``(L, m)``."""
        arr = np.array(value, dtype=float)
        if arr.ndim == 1:
            arr = np.tile(arr, (L, 1))
        if arr.shape != (L, self.m):
            raise ConfigError(path, f"expected {self.m} values per season for {L} seasons, got shape {arr.shape}")
        return arr

    def reporting_model(self, L: int) -> ReportingModel | None:
        if self.reporting is None:
            return None
        tabs = []
        for name in ("eta", "theta"):
            arr = np.array(getattr(self.reporting, name), dtype=float)
            if arr.ndim == 1:
                arr = np.tile(arr[:, None], (1, L))
            if arr.shape != (self.m, L):
                raise ConfigError(f"reporting.{name}", f"expected {self.m} values or a {self.m}x{L} table")
            tabs.append(arr)
        try:
            return ReportingModel(*tabs)
        except ValueError as err:
            raise ConfigError("reporting", str(err)) from None


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.name != "source"}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(hints[key], value, f"{path}.{key}" if path else key)
    try:
        obj = cls(**kwargs)
    except TypeError as err:
        raise ConfigError(path, str(err)) from None
    if hasattr(obj, "check"):
        obj.check(path)
    return obj


def _coerce(hint, value, path):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or origin is types.UnionType:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    if hint is typing.Any or hint is list or origin is list and not args:
        return value
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, "expected a list")
        return [_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true or false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "expected an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "expected a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(path, "expected a string")
        return value
    return value


def parse_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError("", f"invalid YAML: {err}") from None
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("", "config must be a mapping")
    if "spec_version" not in data:
        raise ConfigError("spec_version", "required key missing")
    if data["spec_version"] != SPEC_VERSION:
        raise ConfigError("spec_version", f"unsupported version {data['spec_version']!r}; expected {SPEC_VERSION}")
    cfg = _build(RunConfig, data, "")
    try:
        cfg.serial_interval
    except ValueError as err:
        raise ConfigError("serial", str(err)) from None
    if cfg.window < 1 or cfg.window % 2 == 0:
        raise ConfigError("window", "must be a positive odd integer")
    cfg.source = text
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
