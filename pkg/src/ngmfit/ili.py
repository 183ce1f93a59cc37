"""Synthetic surveillance-style data: eleven seasons sharing one NGM.

The observation side mimics insurer ILI counts: a fraction ``eta`` of each
group is covered and only a fraction ``theta`` of infections present as ILI.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .epi import DEFAULT_SERIAL, IncidenceSeries, OutbreakConfig, SerialInterval, simulate, spectral_radius
from .likelihood import FitProblem
from .observe import NoiseParams, ReportingModel, observe_reported

ILI_BETA = ((2.05, 0.11), (0.30, 1.85))
ILI_R = (1.0, 1.39, 1.14, 1.53, 1.27, 1.96, 2.33, 1.65, 1.88, 0.88, 1.25)
ILI_NOISE = (12.6, 0.05)


@dataclass(frozen=True)
class IliSpec:
    """``re`` sets each season's effective reproduction number; children
    carry ``child_excess`` more susceptibility than adults."""

    beta: tuple = ILI_BETA
    r: tuple = ILI_R
    pop: tuple = (2.7e6, 5.6e6)
    re: tuple = (1.35, 1.25, 1.3, 1.2, 1.4, 1.3, 1.25, 1.35, 1.3, 1.2, 1.3)
    child_excess: float = 1.3
    eta: tuple = (0.25, 0.25)
    theta: tuple = (0.35, 0.2)
    seed_frac: float = 1e-3
    phi: tuple = ILI_NOISE
    serial: tuple = DEFAULT_SERIAL
    window: int = 7
    seed: int = 0

    def __post_init__(self):
        if len(self.r) != len(self.re) or self.r[0] != 1.0:
            raise ValueError("need one Re per season and r[0] == 1")


@dataclass
class IliData:
    spec: IliSpec
    configs: list[OutbreakConfig]
    truth: list[np.ndarray]
    observed: list[np.ndarray]
    reporting: ReportingModel
    s0: np.ndarray = field(repr=False)


def season_s0(beta: np.ndarray, r: float, re: float, child_excess: float) -> np.ndarray:
    """Susceptible fractions with the given child/adult ratio reaching ``re``."""
    shape = np.array([child_excess, 1.0])
    k = re / spectral_radius(r * shape[:, None] * beta)
    return k * shape


def make_ili(spec: IliSpec | None = None) -> IliData:
    spec = spec or IliSpec()
    beta = np.array(spec.beta, dtype=float)
    serial = SerialInterval(np.array(spec.serial))
    L = len(spec.r)
    s0 = np.array([season_s0(beta, r, re, spec.child_excess) for r, re in zip(spec.r, spec.re)])
    configs, truth = [], []
    for y in range(L):
        cfg = OutbreakConfig(np.array(spec.pop, float), s0[y], spec.seed_frac, serial)
        inc, _ = simulate(beta, cfg, scale=spec.r[y])
        configs.append(OutbreakConfig(cfg.pop, cfg.s0, cfg.seed_frac, serial, horizon=inc.days))
        truth.append(np.asarray(inc.values))
    rep = ReportingModel(np.tile(np.array(spec.eta)[:, None], (1, L)), np.tile(np.array(spec.theta)[:, None], (1, L)))
    noise = NoiseParams(*spec.phi)
    observed = [np.asarray(o.values) for o in observe_reported([IncidenceSeries(t) for t in truth], rep, noise, spec.seed)]
    return IliData(spec, configs, truth, observed, rep, s0)


def ili_problem(data: IliData, known_s0: bool = False) -> FitProblem:
    """Fit problem with free r, free noise and (by default) free s0."""
    return FitProblem.from_series(data.observed, data.configs, known_s0=known_s0,
                                  reporting=data.reporting, window=data.spec.window)
