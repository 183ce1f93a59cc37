"""Discrete-time age-of-infection transmission model.

Storage convention for the next-generation matrix: ``beta[j, k]`` multiplies
the lagged incidence of group ``k`` when computing new infections *in*
group ``j``::

    i_j(t) = S_j(t-1) / N_j * sum_k beta[j, k] * sum_tau P_tau * i_k(t - tau)
    S_j(t) = S_j(t-1) - i_j(t)

Under this orientation column ``j`` collects the infections caused by one
group-``j`` infective, so the group reproduction number R0_j is the j-th
column sum, and the effective reproduction number row-scales ``beta`` by the
initial susceptible fractions.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

# Discretised gamma (mean 3 d, sd 1.5 d) on days 1..7.  The published study
# used an influenza profile whose values were not reported.
DEFAULT_SERIAL = (0.047, 0.236, 0.293, 0.216, 0.122, 0.060, 0.026)

MATRICES = {
    "matrix1": ((2.50, 0.75), (1.00, 1.50)),
    "matrix2": ((2.00, 1.00), (1.00, 2.00)),
    "matrix3": ((1.50, 1.00), (1.00, 2.33)),
}

MAX_AUTO_HORIZON = 365


class ClampWarning(RuntimeWarning):
    """Incidence exceeded the available susceptibles and was clamped."""


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class NextGenMatrix:
    beta: np.ndarray

    def __post_init__(self):
        b = _frozen(self.beta)
        if b.ndim != 2 or b.shape[0] != b.shape[1] or b.shape[0] < 1:
            raise ValueError(f"next-generation matrix must be square, got shape {b.shape}")
        if not np.all(np.isfinite(b)) or np.any(b < 0):
            raise ValueError("next-generation matrix entries must be finite and >= 0")
        object.__setattr__(self, "beta", b)

    @classmethod
    def named(cls, name: str) -> "NextGenMatrix":
        return cls(np.array(MATRICES[name]))

    @property
    def m(self) -> int:
        return self.beta.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.beta, dtype=dtype)


@dataclass(frozen=True)
class SerialInterval:
    """Probability mass of transmission on infection-age days 1..d."""

    p: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_SERIAL))

    def __post_init__(self):
        p = _frozen(self.p)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("serial interval must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("serial interval masses must be finite and >= 0")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"serial interval must sum to 1 (got {p.sum():.15g})")
        object.__setattr__(self, "p", p)

    @property
    def d(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class OutbreakConfig:
    """One outbreak: group sizes, initial susceptibility, seeding, horizon.

    ``horizon=None`` picks the first day after the epidemic peak at which
    total daily incidence drops below one person, capped at 365 days.
    ``history`` overrides the default seeding (all seeds on day 0) with an
    explicit ``m x d`` block of incidence for days ``-(d-1)..0``.
    """

    pop: np.ndarray
    s0: np.ndarray
    seed_frac: float = 1e-3
    serial: SerialInterval = field(default_factory=SerialInterval)
    horizon: int | None = None
    history: np.ndarray | None = None

    def __post_init__(self):
        pop = _frozen(self.pop)
        s0 = _frozen(self.s0)
        if pop.ndim != 1 or s0.shape != pop.shape:
            raise ValueError("pop and s0 must be vectors of equal length")
        if np.any(pop <= 0):
            raise ValueError("group sizes must be positive")
        if np.any(s0 <= 0) or np.any(s0 > 1):
            raise ValueError("s0 must lie in (0, 1]")
        if not 0 < self.seed_frac < 1:
            raise ValueError("seed_frac must lie in (0, 1)")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        object.__setattr__(self, "pop", pop)
        object.__setattr__(self, "s0", s0)
        if self.history is not None:
            h = _frozen(self.history)
            if h.shape != (pop.size, self.serial.d):
                raise ValueError(f"history must have shape {(pop.size, self.serial.d)}")
            object.__setattr__(self, "history", h)

    @property
    def m(self) -> int:
        return self.pop.size

    def seed_history(self) -> np.ndarray:
        if self.history is not None:
            return np.array(self.history)
        h = np.zeros((self.m, self.serial.d))
        h[:, -1] = self.seed_frac * self.s0 * self.pop
        return h


@dataclass(frozen=True)
class IncidenceSeries:
    """New infections per group and day, shape ``(m, T)`` for days 1..T."""

    values: np.ndarray
    history: np.ndarray | None = None
    clamped: bool = False

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2:
            raise ValueError("incidence values must be an (m, T) matrix")
        if np.any(np.isnan(v)):
            raise ValueError("incidence contains NaN")
        object.__setattr__(self, "values", v)
        if self.history is not None:
            object.__setattr__(self, "history", _frozen(self.history))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def days(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SusceptibleSeries:
    """Susceptible counts S_j(t) for t = 0..T, shape ``(m, T + 1)``."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))


@dataclass(frozen=True)
class SeasonSet:
    configs: tuple[OutbreakConfig, ...]
    r: np.ndarray

    def __post_init__(self):
        r = _frozen(self.r)
        object.__setattr__(self, "configs", tuple(self.configs))
        if r.shape != (len(self.configs),):
            raise ValueError("need one scaling factor per season")
        if r[0] != 1.0:
            raise ValueError("r of the first season is fixed to 1")
        if np.any(r <= 0):
            raise ValueError("scaling factors must be positive")
        object.__setattr__(self, "r", r)

    @property
    def L(self) -> int:
        return len(self.configs)


@njit(cache=True)
def renewal(beta, pop, s_init, hist, p, T):
    """Run the recurrence for ``T`` days.

    Returns ``(incidence (m, T), susceptible (m, T + 1), clamped)``.
    """
    m = beta.shape[0]
    d = p.shape[0]
    H = hist.shape[1]
    full = np.zeros((m, H + T))
    full[:, :H] = hist
    S = np.empty((m, T + 1))
    S[:, 0] = s_init
    lag = np.empty(m)
    clamped = False
    for t in range(1, T + 1):
        now = H - 1 + t
        for k in range(m):
            acc = 0.0
            for tau in range(1, d + 1):
                if now - tau >= 0:
                    acc += p[tau - 1] * full[k, now - tau]
            lag[k] = acc
        for j in range(m):
            force = 0.0
            for k in range(m):
                force += beta[j, k] * lag[k]
            new = S[j, t - 1] / pop[j] * force
            if new > S[j, t - 1]:
                new = S[j, t - 1]
                clamped = True
            full[j, now] = new
            S[j, t] = S[j, t - 1] - new
    return full[:, H:], S, clamped


def initial_susceptibles(pop, s0, hist) -> np.ndarray:
    # Every infection in the seeding history depletes the susceptible pool.
    return np.asarray(s0, float) * np.asarray(pop, float) - np.asarray(hist, float).sum(axis=1)


def _auto_horizon(inc: np.ndarray) -> int:
    total = inc.sum(axis=0)
    peak = int(np.argmax(total))
    below = np.nonzero(total[peak:] < 1.0)[0]
    if below.size == 0:
        return inc.shape[1]
    return peak + int(below[0]) + 1


def _check_dims(beta: np.ndarray, cfg: OutbreakConfig):
    if beta.ndim != 2 or beta.shape[0] != beta.shape[1]:
        raise ValueError(f"beta must be square, got shape {beta.shape}")
    if beta.shape[0] != cfg.m:
        raise ValueError(f"beta is {beta.shape[0]}x{beta.shape[0]} but the outbreak has {cfg.m} groups")


def simulate(beta, cfg: OutbreakConfig, scale: float = 1.0) -> tuple[IncidenceSeries, SusceptibleSeries]:
    """Deterministic incidence and susceptible curves for one outbreak.

    ``scale`` multiplies ``beta`` (the season factor r^y of a recurrent
    outbreak).  If incidence ever had to be clamped to the remaining
    susceptibles, the returned series has ``clamped=True`` and a
    :class:`ClampWarning` is emitted.
    """
    b = np.ascontiguousarray(np.asarray(beta, dtype=float))
    _check_dims(b, cfg)
    hist = cfg.seed_history()
    s_init = initial_susceptibles(cfg.pop, cfg.s0, hist)
    T = cfg.horizon if cfg.horizon is not None else MAX_AUTO_HORIZON
    inc, S, clamped = renewal(scale * b, np.asarray(cfg.pop), s_init, hist, np.asarray(cfg.serial.p), T)
    if cfg.horizon is None:
        T = _auto_horizon(inc)
        inc, S = inc[:, :T], S[:, : T + 1]
    if clamped:
        warnings.warn("incidence clamped to available susceptibles", ClampWarning, stacklevel=2)
    return IncidenceSeries(inc, history=hist, clamped=bool(clamped)), SusceptibleSeries(S)


def simulate_recurrent(beta, seasons: SeasonSet) -> list[tuple[IncidenceSeries, SusceptibleSeries]]:
    """Simulate each season independently with NGM ``r[y] * beta``."""
    return [simulate(beta, cfg, scale=float(r)) for cfg, r in zip(seasons.configs, seasons.r)]


def _check_square(mat: np.ndarray):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError("matrix has non-finite entries")


def _rho_2x2(mat: np.ndarray) -> float:
    (a, b), (c, d) = mat
    half_tr = 0.5 * (a + d)
    disc = half_tr * half_tr - (a * d - b * c)
    if disc < 0:
        # complex pair; both have modulus sqrt(det)
        return float(np.sqrt(a * d - b * c))
    root = np.sqrt(disc)
    return float(max(abs(half_tr + root), abs(half_tr - root)))


def _rho_power(mat: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    # Shifting by the identity makes the iteration aperiodic without moving the
    # Perron vector; Collatz-Wielandt ratios bracket the root at every step.
    n = mat.shape[0]
    shifted = mat + np.eye(n)
    x = np.ones(n)
    lo, hi = 0.0, np.inf
    for _ in range(max_iter):
        y = shifted @ x
        ratios = y / x
        lo, hi = ratios.min(), ratios.max()
        if hi - lo <= tol * hi:
            break
        x = y / y.max()
    return float(0.5 * (lo + hi) - 1.0)


def spectral_radius(mat, method: str = "auto") -> float:
    """Largest eigenvalue modulus.

    ``method`` is "closed" (2x2 trace/determinant formula), "power"
    (Perron root of a nonnegative matrix), "eig" (LAPACK), or "auto", which
    uses the closed form for 2x2, power iteration for other nonnegative
    matrices, and LAPACK otherwise.
    """
    a = np.asarray(mat, dtype=float)
    _check_square(a)
    if method == "auto":
        if a.shape == (2, 2):
            method = "closed"
        elif np.all(a >= 0):
            method = "power"
        else:
            method = "eig"
    if method == "closed":
        if a.shape != (2, 2):
            raise ValueError("closed form is only available for 2x2 matrices")
        return _rho_2x2(a)
    if method == "power":
        if np.any(a < 0):
            raise ValueError("power iteration requires a nonnegative matrix")
        return _rho_power(a)
    if method == "eig":
        return float(np.max(np.abs(np.linalg.eigvals(a))))
    raise ValueError(f"unknown method {method!r}")


def group_r0(beta, y_scale: float = 1.0) -> np.ndarray:
    """Per-group basic reproduction numbers (column sums of ``y_scale * beta``)."""
    if not y_scale > 0:
        raise ValueError("y_scale must be positive")
    return y_scale * np.asarray(beta, dtype=float).sum(axis=0)


def next_gen_effective(beta, s0, y_scale: float = 1.0) -> np.ndarray:
    s0 = np.asarray(s0, dtype=float)
    if np.any(s0 <= 0) or np.any(s0 > 1):
        raise ValueError("s0 must lie in (0, 1]")
    return y_scale * s0[:, None] * np.asarray(beta, dtype=float)


def effective_r(beta, s0, y_scale: float = 1.0) -> float:
    return spectral_radius(next_gen_effective(beta, s0, y_scale))


def group_effective_r(beta, s0, y_scale: float = 1.0) -> np.ndarray:
    """Per-group effective reproduction numbers (column sums of the row-scaled NGM)."""
    return next_gen_effective(beta, s0, y_scale).sum(axis=0)


def scaling_factor(beta, s0, target_re: float) -> float:
    """Season factor r such that ``effective_r(beta, s0, r) == target_re``."""
    base = effective_r(beta, s0, 1.0)
    if not base > 0:
        raise ValueError("effective reproduction number of beta is zero")
    return target_re / base
