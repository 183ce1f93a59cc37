"""Gaussian log-likelihood of observed incidence under the transmission model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import expit, logit

from .epi import IncidenceSeries, OutbreakConfig, SerialInterval, initial_susceptibles, renewal
from .observe import NoiseParams, ReportingModel

# Returned in place of -inf so simplex geometry stays finite.
PENALTY = -1e12

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class FitProblem:
    """Observed series plus everything treated as known.

    ``s0``, ``r`` and ``phi`` set to ``None`` are estimated.  ``r`` of the
    first season is always 1; with a single season ``r`` is ignored.
    ``history[y]`` is the true-scale seeding incidence for days ``-(d-1)..0``.
    """

    observed: tuple[np.ndarray, ...]
    pop: tuple[np.ndarray, ...]
    history: tuple[np.ndarray, ...]
    serial: SerialInterval = field(default_factory=SerialInterval)
    s0: np.ndarray | None = None
    r: np.ndarray | None = None
    phi: NoiseParams | None = None
    reporting: ReportingModel | None = None
    window: int = 7

    def __post_init__(self):
        obs = tuple(np.asarray(o, dtype=float) for o in self.observed)
        L = len(obs)
        if L == 0:
            raise ValueError("need at least one season of observations")
        m = obs[0].shape[0]
        pop = tuple(np.ascontiguousarray(np.broadcast_to(np.asarray(p, float), (m,))) for p in self.pop)
        if len(pop) == 1 and L > 1:
            pop = pop * L
        hist = tuple(np.ascontiguousarray(np.asarray(h, dtype=float)) for h in self.history)
        if len(pop) != L or len(hist) != L:
            raise ValueError("need one pop and history entry per season")
        for y, (o, h) in enumerate(zip(obs, hist)):
            if o.ndim != 2 or o.shape[0] != m:
                raise ValueError(f"season {y}: observations must be ({m}, T)")
            if h.shape != (m, self.serial.d):
                raise ValueError(f"season {y}: history must have shape {(m, self.serial.d)}")
            if not np.all(np.isfinite(o)):
                raise ValueError(f"season {y}: observations must be finite")
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "pop", pop)
        object.__setattr__(self, "history", hist)
        if self.s0 is not None:
            s0 = np.asarray(self.s0, dtype=float).reshape(L, m)
            if np.any(s0 <= 0) or np.any(s0 > 1):
                raise ValueError("known s0 must lie in (0, 1]")
            object.__setattr__(self, "s0", s0)
        if self.r is not None:
            r = np.asarray(self.r, dtype=float).reshape(L)
            if r[0] != 1.0 or np.any(r <= 0):
                raise ValueError("known r must be positive with r[0] == 1")
            object.__setattr__(self, "r", r)
        if self.reporting is not None and (self.reporting.L != L or self.reporting.eta.shape[0] != m):
            raise ValueError("reporting model does not match the observations")

    @classmethod
    def from_series(
        cls,
        observed: Sequence[IncidenceSeries | np.ndarray],
        configs: Sequence[OutbreakConfig],
        *,
        known_s0: bool = True,
        known_r: Sequence[float] | None = None,
        phi: NoiseParams | None = None,
        reporting: ReportingModel | None = None,
        window: int = 7,
    ) -> "FitProblem":
        """Problem whose seeds (and optionally s0) come from simulation configs."""
        vals = [np.asarray(getattr(o, "values", o)) for o in observed]
        return cls(
            observed=tuple(vals),
            pop=tuple(c.pop for c in configs),
            history=tuple(c.seed_history() for c in configs),
            serial=configs[0].serial,
            s0=np.array([c.s0 for c in configs]) if known_s0 else None,
            r=None if known_r is None else np.asarray(known_r, float),
            phi=phi,
            reporting=reporting,
            window=window,
        )

    @property
    def L(self) -> int:
        return len(self.observed)

    @property
    def m(self) -> int:
        return self.observed[0].shape[0]

    @property
    def days(self) -> tuple[int, ...]:
        return tuple(o.shape[1] for o in self.observed)

    def scale(self, y: int) -> np.ndarray:
        if self.reporting is None:
            return np.ones(self.m)
        return self.reporting.scale(y)

    @property
    def free_r(self) -> bool:
        return self.L > 1 and self.r is None


@dataclass(frozen=True)
class ModelParams:
    """Natural-space parameters: beta (m, m), r (L,), s0 (L, m), noise."""

    beta: np.ndarray
    r: np.ndarray
    s0: np.ndarray
    phi_a: float
    phi_b: float

    @property
    def noise(self) -> NoiseParams:
        return NoiseParams(self.phi_a, self.phi_b)

    def with_beta(self, beta) -> "ModelParams":
        return replace(self, beta=np.asarray(beta, dtype=float))


def _logit(p):
    return logit(np.asarray(p, dtype=float))


def _expit(z):
    return expit(np.asarray(z, dtype=float))


class ParamLayout:
    """Maps free parameters to an unconstrained vector and back.

    beta, r and the noise parameters are optimised on the log scale, s0 on
    the logit scale.  The order is beta (row-major), r[1:], s0 (season-major),
    phi_a, phi_b; fixed quantities are taken from ``base``.
    """

    def __init__(self, problem: FitProblem, include_beta: bool = True, include_phi: bool | None = None):
        self.problem = problem
        m, L = problem.m, problem.L
        self.include_beta = include_beta
        self.n_beta = m * m if include_beta else 0
        self.n_r = L - 1 if problem.free_r else 0
        self.n_s0 = L * m if problem.s0 is None else 0
        if include_phi is None:
            include_phi = problem.phi is None
        self.n_phi = 2 if include_phi else 0
        self.size = self.n_beta + self.n_r + self.n_s0 + self.n_phi
        self._one = np.ones(1)

    def names(self) -> list[str]:
        m, L = self.problem.m, self.problem.L
        out = []
        if self.include_beta:
            out += [f"beta{j + 1}{k + 1}" for j in range(m) for k in range(m)]
        out += [f"r{y + 1}" for y in range(1, L)][: self.n_r]
        if self.n_s0:
            out += [f"s0_{y + 1}_{j + 1}" for y in range(L) for j in range(m)]
        if self.n_phi:
            out += ["phi_a", "phi_b"]
        return out

    def season_blocks(self) -> tuple[np.ndarray, list[np.ndarray]]:
        """Indices of the shared coordinates and of each season's own coordinates."""
        names = self.names()
        shared, seasons = [], [[] for _ in range(self.problem.L)]
        for i, name in enumerate(names):
            if name.startswith("r"):
                seasons[int(name[1:]) - 1].append(i)
            elif name.startswith("s0_"):
                seasons[int(name.split("_")[1]) - 1].append(i)
            else:
                shared.append(i)
        return np.array(shared, dtype=int), [np.array(b, dtype=int) for b in seasons]

    def pack(self, params: ModelParams) -> np.ndarray:
        parts = []
        if self.include_beta:
            parts.append(np.log(np.asarray(params.beta, float).ravel()))
        if self.n_r:
            parts.append(np.log(np.asarray(params.r, float)[1:]))
        if self.n_s0:
            parts.append(_logit(np.asarray(params.s0, float).ravel()))
        if self.n_phi:
            parts.append(np.log([params.phi_a, params.phi_b]))
        return np.concatenate(parts) if parts else np.zeros(0)

    def unpack(self, x: np.ndarray, base: ModelParams) -> ModelParams:
        m, L = self.problem.m, self.problem.L
        i = 0
        beta = base.beta
        if self.include_beta:
            beta = np.exp(x[: m * m]).reshape(m, m)
            i = m * m
        r = base.r
        if self.n_r:
            r = np.concatenate((self._one, np.exp(x[i : i + self.n_r])))
            i += self.n_r
        s0 = base.s0
        if self.n_s0:
            s0 = _expit(x[i : i + self.n_s0]).reshape(L, m)
            i += self.n_s0
        phi_a, phi_b = base.phi_a, base.phi_b
        if self.n_phi:
            phi_a, phi_b = np.exp(x[i : i + 2])
        return ModelParams(beta, r, s0, float(phi_a), float(phi_b))


@njit(cache=True)
def season_loglik(beta_eff, pop, s_init, hist, p, Y, scale, phi_a, phi_b):
    m, T = Y.shape
    for j in range(m):
        if s_init[j] < 0:
            return -1e12
    inc, S, clamped = renewal(beta_eff, pop, s_init, hist, p, T)
    if clamped:
        return -1e12
    ll = 0.0
    for j in range(m):
        for t in range(T):
            mu = scale[j] * inc[j, t]
            sd = phi_a + phi_b * mu
            if not sd > 0:
                return -1e12
            z = Y[j, t] - mu
            ll -= 0.9189385332046727 + math.log(sd) + z * z / (2.0 * sd * sd)
    return ll


def season_mean(params: ModelParams, problem: FitProblem, y: int) -> np.ndarray:
    """Model-predicted observation mean for season ``y``, shape ``(m, T_y)``."""
    hist = problem.history[y]
    s_init = initial_susceptibles(problem.pop[y], params.s0[y], hist)
    inc, _, _ = renewal(
        np.ascontiguousarray(params.r[y] * params.beta), problem.pop[y], s_init, hist,
        np.asarray(problem.serial.p), problem.days[y],
    )
    return problem.scale(y)[:, None] * inc


def season_log_likelihood(params: ModelParams, problem: FitProblem, y: int) -> float:
    hist = problem.history[y]
    s_init = params.s0[y] * problem.pop[y] - hist.sum(axis=1)
    return season_loglik(
        params.r[y] * params.beta, problem.pop[y], s_init, hist, problem.serial.p,
        problem.observed[y], problem.scale(y), params.phi_a, params.phi_b,
    )


def log_likelihood(params: ModelParams, problem: FitProblem) -> float:
    """Sum of Gaussian log-densities over seasons, groups and days.

    The noise sd is ``phi_a + phi_b * mean`` where ``mean`` is the model
    prediction on the observation scale.  Parameter sets whose trajectory
    would exhaust the susceptibles score :data:`PENALTY`.
    """
    total = 0.0
    for y in range(problem.L):
        ll = season_log_likelihood(params, problem, y)
        if ll <= PENALTY:
            return PENALTY
        total += ll
    return total if np.isfinite(total) else PENALTY


def gaussian_loglik(Y: np.ndarray, mean: np.ndarray, noise: NoiseParams) -> float:
    """Vectorised log-likelihood for one block of observations (reference path)."""
    sd = noise.sd(mean)
    return float(-np.sum(_LOG_SQRT_2PI + np.log(sd) + (Y - mean) ** 2 / (2 * sd**2)))
