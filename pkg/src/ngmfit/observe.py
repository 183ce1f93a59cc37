"""Noisy observation of incidence and moving-average smoothing.

Observations follow ``Y = mean + eps`` with ``eps ~ N(0, (phi_a + phi_b * mean)^2)``.
For surveillance data the mean is ``eta * theta * i``, i.e. true incidence
scaled by the surveillance and reporting rates.

Random draws come from numpy's PCG64 generator seeded with a single integer;
Monte Carlo replicate ``k`` uses ``seed + k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .epi import IncidenceSeries, _frozen


@dataclass(frozen=True)
class NoiseParams:
    phi_a: float
    phi_b: float

    def __post_init__(self):
        if self.phi_a < 0 or self.phi_b < 0:
            raise ValueError("noise parameters must be >= 0")
        if self.phi_a + self.phi_b <= 0:
            raise ValueError("phi_a and phi_b cannot both be zero")

    def sd(self, mean):
        return self.phi_a + self.phi_b * np.asarray(mean)


@dataclass(frozen=True)
class ReportingModel:
    """Surveillance rates ``eta`` and reporting rates ``theta``, each ``(m, L)``."""

    eta: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        eta = _frozen(np.atleast_2d(self.eta))
        theta = _frozen(np.atleast_2d(self.theta))
        if eta.shape != theta.shape:
            raise ValueError("eta and theta must have the same shape")
        if np.any(eta <= 0) or np.any(eta > 1):
            raise ValueError("surveillance rates must lie in (0, 1]")
        if np.any(theta <= 0):
            raise ValueError("reporting rates must be positive")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "theta", theta)

    @property
    def L(self) -> int:
        return self.eta.shape[1]

    def scale(self, year: int) -> np.ndarray:
        return self.eta[:, year] * self.theta[:, year]


def _noisy(mean: np.ndarray, noise: NoiseParams, rng: np.random.Generator) -> np.ndarray:
    return mean + noise.sd(mean) * rng.standard_normal(mean.shape)


def observe(truth: IncidenceSeries, noise: NoiseParams, rng_seed: int) -> IncidenceSeries:
    """One noisy realisation of ``truth``.  Negative draws are kept."""
    rng = np.random.default_rng(rng_seed)
    return IncidenceSeries(_noisy(np.asarray(truth.values), noise, rng), history=truth.history)


def observe_reported(
    truths: Sequence[IncidenceSeries], rep: ReportingModel, noise: NoiseParams, rng_seed: int
) -> list[IncidenceSeries]:
    if rep.L != len(truths):
        raise ValueError(f"reporting model covers {rep.L} seasons, got {len(truths)} series")
    rng = np.random.default_rng(rng_seed)
    out = []
    for y, truth in enumerate(truths):
        scale = rep.scale(y)
        if scale.shape[0] != truth.m:
            raise ValueError("reporting rates do not match the number of groups")
        mean = scale[:, None] * np.asarray(truth.values)
        out.append(IncidenceSeries(_noisy(mean, noise, rng)))
    return out


def smooth(values, window: int) -> np.ndarray:
    """Centred moving average along the last axis, clamped at zero.

    Near the edges the window shrinks symmetrically so it stays centred on
    the day being smoothed.
    """
    x = np.atleast_2d(np.asarray(values, dtype=float))
    T = x.shape[-1]
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if window > T:
        raise ValueError(f"window {window} exceeds series length {T}")
    half = window // 2
    t = np.arange(T)
    h = np.minimum(half, np.minimum(t, T - 1 - t))
    total = x.copy()
    for k in range(1, half + 1):
        inside = h >= k
        total[..., inside] += x[..., t[inside] - k] + x[..., t[inside] + k]
    out = total / (2 * h + 1)
    return np.maximum(out, 0.0)


def moving_average(series: IncidenceSeries, window: int) -> IncidenceSeries:
    return IncidenceSeries(smooth(series.values, window), history=series.history)
