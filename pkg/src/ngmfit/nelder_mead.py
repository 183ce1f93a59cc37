"""Nelder-Mead downhill simplex minimisation.

Coefficients follow the usual fminsearch choices (reflection 1, expansion 2,
contraction 0.5, shrink 0.5).  The initial simplex moves each coordinate of
``x0`` by 5%, or by 0.00025 when the coordinate is zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

RHO, CHI, GAMMA, SIGMA = 1.0, 2.0, 0.5, 0.5


@dataclass(frozen=True)
class NMOptions:
    xtol: float = 1e-8
    ftol: float = 1e-10
    max_iter_factor: int = 200
    restarts: int = 1
    rel_step: float = 0.05
    zero_step: float = 0.00025
    max_evals: int | None = None


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    converged: bool
    evals: int
    iterations: int
    restarts: int = 0


def initial_simplex(x0: np.ndarray, rel_step: float = 0.05, zero_step: float = 0.00025) -> np.ndarray:
    n = x0.size
    sim = np.tile(x0, (n + 1, 1))
    for i in range(n):
        sim[i + 1, i] = x0[i] * (1 + rel_step) if x0[i] != 0 else zero_step
    return sim


def _run(f, sim, fsim, max_iter, opts, counter):
    n = sim.shape[1]
    it = 0
    converged = False
    while it < max_iter:
        order = np.argsort(fsim, kind="stable")
        sim, fsim = sim[order], fsim[order]
        if (np.max(np.abs(sim[1:] - sim[0])) < opts.xtol
                and np.max(np.abs(fsim[1:] - fsim[0])) < opts.ftol):
            converged = True
            break
        if opts.max_evals is not None and counter[0] >= opts.max_evals:
            break
        it += 1
        xbar = sim[:-1].mean(axis=0)
        xr = xbar + RHO * (xbar - sim[-1])
        fr = f(xr)
        if fr < fsim[0]:
            xe = xbar + RHO * CHI * (xbar - sim[-1])
            fe = f(xe)
            if fe < fr:
                sim[-1], fsim[-1] = xe, fe
            else:
                sim[-1], fsim[-1] = xr, fr
            continue
        if fr < fsim[-2]:
            sim[-1], fsim[-1] = xr, fr
            continue
        if fr < fsim[-1]:
            xc = xbar + GAMMA * (xr - xbar)
            fc = f(xc)
            if fc <= fr:
                sim[-1], fsim[-1] = xc, fc
                continue
        else:
            xcc = xbar + GAMMA * (sim[-1] - xbar)
            fcc = f(xcc)
            if fcc < fsim[-1]:
                sim[-1], fsim[-1] = xcc, fcc
                continue
        for i in range(1, n + 1):
            sim[i] = sim[0] + SIGMA * (sim[i] - sim[0])
            fsim[i] = f(sim[i])
    order = np.argsort(fsim, kind="stable")
    return sim[order], fsim[order], converged, it


def nelder_mead(objective: Callable[[np.ndarray], float], x0, opts: NMOptions | None = None) -> OptimResult:
    """Minimise ``objective`` starting from ``x0``.

    Stops once the simplex is smaller than ``xtol`` in every coordinate and
    the vertex values agree to ``ftol``, or after ``max_iter_factor * n``
    iterations.  Hitting the iteration cap triggers up to ``opts.restarts``
    fresh simplices built around the incumbent.  Non-convergence is reported
    in the result, never raised.
    """
    opts = opts or NMOptions()
    x0 = np.asarray(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    n = x0.size
    counter = [0]

    def f(x):
        counter[0] += 1
        val = float(objective(x))
        return val if np.isfinite(val) else np.inf

    if n == 0:
        return OptimResult(x0, f(x0), True, counter[0], 0)

    max_iter = opts.max_iter_factor * n
    best_x, best_f = x0, None
    iterations = 0
    restarts = 0
    for attempt in range(opts.restarts + 1):
        sim = initial_simplex(best_x, opts.rel_step, opts.zero_step)
        fsim = np.array([f(v) for v in sim]) if best_f is None else np.array([best_f] + [f(v) for v in sim[1:]])
        sim, fsim, converged, it = _run(f, sim, fsim, max_iter, opts, counter)
        iterations += it
        best_x, best_f = sim[0].copy(), float(fsim[0])
        if converged or (opts.max_evals is not None and counter[0] >= opts.max_evals):
            break
        if attempt < opts.restarts:
            restarts += 1
    return OptimResult(best_x, best_f, converged, counter[0], iterations, restarts)
