"""Linear least-squares ("direct") estimation of the next-generation matrix.

The transmission model is linear in beta once incidence is known::

    i_j(t) = sum_k X_jk(t) beta_jk,
    X_jk(t) = r * S_j(t-1) / N_j * sum_tau P_tau i_k(t - tau)

Substituting smoothed observations for the unknown incidence gives a
regression whose design matrix is block diagonal, one block of ``m``
columns per receiving group.  Rows are stacked season-major, then
group-major, then by day.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .epi import SerialInterval, initial_susceptibles

SINGULAR_RTOL = 1e-10
COND_LIMIT = 1e8


@dataclass(frozen=True)
class IdentifiabilityReport:
    block_dets: np.ndarray
    closed_form_dets: np.ndarray | None
    singular_values: np.ndarray
    condition_number: float
    flag: bool

    @property
    def min_singular(self) -> float:
        return float(self.singular_values.min())

    @property
    def max_singular(self) -> float:
        return float(self.singular_values.max())

    def to_dict(self) -> dict:
        return {
            "block_dets": self.block_dets.tolist(),
            "closed_form_dets": None if self.closed_form_dets is None else self.closed_form_dets.tolist(),
            "singular_values": self.singular_values.tolist(),
            "condition_number": self.condition_number,
            "non_identifiable": self.flag,
        }


class NonIdentifiableError(ValueError):
    """The design matrix is (numerically) rank deficient."""

    def __init__(self, report: IdentifiabilityReport):
        self.report = report
        super().__init__(
            f"design matrix is rank deficient (condition number {report.condition_number:.3g})"
        )


@dataclass(frozen=True)
class DesignSystem:
    X: np.ndarray
    response: np.ndarray
    m: int
    days: tuple[int, ...]

    def block(self, j: int) -> np.ndarray:
        """Rows and columns of ``X`` belonging to receiving group ``j``."""
        rows = np.concatenate(
            [off + j * T + np.arange(T) for off, T in zip(self._offsets(), self.days)]
        )
        return self.X[np.ix_(rows, np.arange(j * self.m, (j + 1) * self.m))]

    def _offsets(self):
        return np.concatenate([[0], np.cumsum([self.m * T for T in self.days])[:-1]]).astype(int)


def lagged_force(inc: np.ndarray, hist: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``sum_tau P_tau i_k(t - tau)`` for ``t = 1..T``, shape ``(m, T)``."""
    T = inc.shape[1]
    H = hist.shape[1]
    full = np.concatenate([hist, inc], axis=1)
    out = np.zeros_like(inc, dtype=float)
    for tau in range(1, p.size + 1):
        start = H - tau
        if start >= 0:
            out += p[tau - 1] * full[:, start : start + T]
        else:
            out[:, -start:] += p[tau - 1] * full[:, : T + start]
    return out


class DesignBuilder:
    """Precomputes the parts of the design that do not depend on s0 or r.

    ``smoothed[y]`` is the ``(m, T_y)`` incidence estimate for season ``y``;
    it drives both the lagged force of infection and the susceptible
    reconstruction ``S(t) = S(t-1) - i(t)`` started from ``s0 * N`` minus the
    seeding history.
    """

    def __init__(
        self,
        smoothed: Sequence[np.ndarray],
        pops: Sequence[np.ndarray],
        histories: Sequence[np.ndarray],
        serial: SerialInterval,
    ):
        L = len(smoothed)
        if not (len(pops) == len(histories) == L) or L == 0:
            raise ValueError("need one pop and history entry per season")
        p = np.asarray(serial.p)
        m = np.asarray(smoothed[0]).shape[0]
        self.m, self.L = m, L
        self._parts = []
        resp, days = [], []
        for y in range(L):
            inc = np.asarray(smoothed[y], dtype=float)
            hist = np.asarray(histories[y], dtype=float)
            pop = np.broadcast_to(np.asarray(pops[y], dtype=float), (m,))
            if inc.ndim != 2 or inc.shape[0] != m or hist.ndim != 2 or hist.shape[0] != m:
                raise ValueError(f"season {y}: inconsistent group count")
            if np.any(inc < 0) or np.any(hist < 0):
                raise ValueError(f"season {y}: smoothed incidence must be nonnegative")
            cum_prev = np.concatenate([np.zeros((m, 1)), np.cumsum(inc, axis=1)[:, :-1]], axis=1)
            self._parts.append((pop, hist, cum_prev, lagged_force(inc, hist, p).T))
            resp.append(inc.reshape(-1))
            days.append(inc.shape[1])
        self.response = np.concatenate(resp)
        self.days = tuple(days)

    def build(self, s0: Sequence[np.ndarray], r: Sequence[float] | None = None) -> DesignSystem:
        m, L = self.m, self.L
        if len(s0) != L:
            raise ValueError("need one s0 vector per season")
        r = np.ones(L) if r is None else np.asarray(r, dtype=float)
        if r.shape != (L,):
            raise ValueError("need one scaling factor per season")
        X = np.zeros((self.response.size, m * m))
        row = 0
        for y, (pop, hist, cum_prev, force) in enumerate(self._parts):
            T = force.shape[0]
            s_prev = initial_susceptibles(pop, s0[y], hist)[:, None] - cum_prev
            for j in range(m):
                X[row : row + T, j * m : (j + 1) * m] = (r[y] * s_prev[j] / pop[j])[:, None] * force
                row += T
        return DesignSystem(X, self.response, m, self.days)


def build_design(
    smoothed: Sequence[np.ndarray],
    pops: Sequence[np.ndarray],
    histories: Sequence[np.ndarray],
    s0: Sequence[np.ndarray],
    serial: SerialInterval,
    r: Sequence[float] | None = None,
) -> DesignSystem:
    """Stack the per-season regressions into one system (see :class:`DesignBuilder`)."""
    return DesignBuilder(smoothed, pops, histories, serial).build(s0, r)


def identifiability(sys: DesignSystem) -> IdentifiabilityReport:
    X = sys.X
    m = sys.m
    gram = X.T @ X
    dets = np.array([np.linalg.det(gram[j * m : (j + 1) * m, j * m : (j + 1) * m]) for j in range(m)])
    closed = None
    if m == 2:
        closed = np.empty(2)
        for j in range(2):
            a, b = X[:, 2 * j], X[:, 2 * j + 1]
            closed[j] = np.sum(a * a) * np.sum(b * b) - np.sum(a * b) ** 2
    sv = np.linalg.svd(X, compute_uv=False)
    smax, smin = sv.max(), sv.min()
    # condition number of the Gram matrix B = X^T X
    cond = float((smax / smin) ** 2) if smin > 0 else float("inf")
    flag = bool(smax == 0 or smin < SINGULAR_RTOL * smax or cond > COND_LIMIT)
    return IdentifiabilityReport(dets, closed, sv, cond, flag)


def solve_direct(sys: DesignSystem) -> np.ndarray:
    """Least-squares beta via QR; entries are unconstrained and may be negative.

    Raises :class:`NonIdentifiableError` when the smallest singular value of
    ``X`` falls below ``1e-10`` times the largest.
    """
    X = sys.X
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(sys.response))):
        raise ValueError("design system has non-finite entries")
    q, rmat = np.linalg.qr(X, mode="reduced")
    sv = np.linalg.svd(rmat, compute_uv=False)
    if sv.max() == 0 or sv.min() < SINGULAR_RTOL * sv.max():
        raise NonIdentifiableError(identifiability(sys))
    coef = solve_triangular(rmat, q.T @ sys.response)
    return coef.reshape(sys.m, sys.m)
