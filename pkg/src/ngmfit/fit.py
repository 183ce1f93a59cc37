"""Two-stage estimation: direct least squares, then maximum likelihood.

Stage 1 builds a warm start without touching the likelihood surface in
beta.  With no auxiliary parameters the direct solution is used as is.
Otherwise each candidate of the auxiliary parameters (s0 per season, season
factors r) induces its own least-squares beta, and only the auxiliary
parameters are searched.  Stage 2 then maximises the likelihood over
everything jointly from that start.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .direct import DesignBuilder, IdentifiabilityReport, NonIdentifiableError, identifiability, solve_direct
from .epi import NextGenMatrix, group_effective_r, group_r0, spectral_radius
from .likelihood import PENALTY, _expit, _logit, FitProblem, ModelParams, ParamLayout, log_likelihood, season_log_likelihood
from .nelder_mead import NMOptions, OptimResult, nelder_mead
from .observe import smooth

BETA_FLOOR = 1e-6
START_FLOOR = 1e-2
S0_START = 0.5
FALLBACK_RE = 1.2


@dataclass(frozen=True)
class FitOptions:
    """``block_cycles`` bounds the season-wise coordinate sweeps used before
    the joint simplex search when several seasons carry their own parameters;
    a sweep gaining less than ``block_tol`` in log-likelihood ends them.  Such
    a fit counts as converged when the sweeps stalled and the joint search
    then gained less than ``polish_tol``.  Sweeps use the looser ``sweep_nm``
    and the joint search after them ``polish_nm``."""

    nm: NMOptions = field(default_factory=NMOptions)
    sweep_nm: NMOptions = field(default_factory=lambda: NMOptions(xtol=1e-6, ftol=1e-8))
    polish_nm: NMOptions = field(default_factory=lambda: NMOptions(max_iter_factor=50, restarts=0))
    stage1_nm: NMOptions = field(default_factory=lambda: NMOptions(xtol=1e-6, ftol=1e-6))
    block_cycles: int = 100
    block_tol: float = 1e-5
    polish_tol: float = 1e-3
    stage1_cycles: int = 5
    stage1_tol: float = 1e-3


def block_maximize(objective, x0: np.ndarray, blocks, nm: NMOptions, cycles: int = 100, tol: float = 1e-5,
                   block_objectives=None, polish: bool = True, block_moves=None,
                   polish_tol: float = 1e-3, polish_nm: NMOptions | None = None, rounds: int = 3) -> OptimResult:
    """Minimise ``objective`` by cyclic simplex searches over index ``blocks``
    followed (if ``polish``) by one joint simplex search over every
    coordinate in any block.  Sweeps stop once one gains less than ``tol``.
    The result counts as converged if the joint search converged, or if the
    sweeps stalled and the joint search gained less than ``polish_tol``;
    otherwise sweeps and joint search are repeated, up to ``rounds`` times.

    ``block_objectives[i]``, when given, must equal ``objective`` up to a
    constant in the coordinates of block ``i`` (e.g. one season's term).
    ``block_moves[i](x, z)``, when given, returns the full vector reached by
    setting block ``i`` to ``z``; it may shift other coordinates along.
    """
    x = np.asarray(x0, dtype=float).copy()
    keep = [i for i, b in enumerate(blocks) if len(b)]
    blocks = [np.asarray(blocks[i], dtype=int) for i in keep]
    if block_objectives is not None:
        block_objectives = [block_objectives[i] for i in keep]
    if block_moves is not None:
        block_moves = [block_moves[i] for i in keep]
    free = np.unique(np.concatenate(blocks)) if blocks else np.zeros(0, dtype=int)
    f_cur = float(objective(x))
    evals = 1
    if len(blocks) == 1:
        res = _joint(objective, x, free, nm)
        x[free] = res.x
        return OptimResult(x, res.fun, res.converged, evals + res.evals, res.iterations, res.restarts)
    for _ in range(max(1, rounds)):
        x, f_cur, swept, n = _sweeps(objective, x, f_cur, blocks, nm, cycles, tol, block_objectives, block_moves)
        evals += n
        if not polish:
            return OptimResult(x, f_cur, swept, evals, 0)
        res = _joint(objective, x, free, polish_nm if polish_nm is not None else nm)
        evals += res.evals
        gain = f_cur - res.fun
        x[free] = res.x
        f_cur = res.fun
        converged = res.converged or (swept and gain < polish_tol)
        if converged:
            break
    return OptimResult(x, f_cur, converged, evals, res.iterations, res.restarts)


def _joint(objective, x, free, nm):
    def joint(z):
        xx = x.copy()
        xx[free] = z
        return objective(xx)

    return nelder_mead(joint, x[free], nm)


def _sweeps(objective, x, f_cur, blocks, nm, cycles, tol, block_objectives, block_moves):
    """Cyclic block searches; returns ``(x, f, stalled, evals)``."""
    evals = 0
    for _ in range(cycles):
        f_start, x_start = f_cur, x.copy()
        for i, idx in enumerate(blocks):
            obj = objective if block_objectives is None or block_objectives[i] is None else block_objectives[i]
            move = None if block_moves is None else block_moves[i]

            def place(z, idx=idx, move=move, x=x):
                if move is not None:
                    return move(x, z)
                xx = x.copy()
                xx[idx] = z
                return xx

            res = nelder_mead(lambda z: obj(place(z)), x[idx], nm)
            evals += res.evals
            x = place(res.x)
        f_cur = float(objective(x))
        evals += 1
        x, f_cur, n = _pattern_move(objective, x_start, x, f_cur)
        evals += n
        if f_start - f_cur < tol:
            return x, f_cur, True, evals
    return x, f_cur, False, evals


def _pattern_move(objective, x_prev, x, f):
    """Extrapolate along the last sweep's displacement while it keeps improving."""
    step = x - x_prev
    n = 0
    if not np.any(step):
        return x, f, n
    while n < 20:
        cand = x + step
        fc = float(objective(cand))
        n += 1
        if not fc < f:
            break
        x, f = cand, fc
        step = 2 * step
    return x, f, n


@dataclass
class StageResult:
    params: ModelParams
    loglik: float
    evals: int
    converged: bool
    raw_beta: np.ndarray | None = None


@dataclass
class FitResult:
    params: ModelParams
    loglik: float
    stage1: StageResult
    converged: bool
    evals: int
    n_params: int
    param_names: list[str]
    x_hat: np.ndarray
    report: IdentifiabilityReport | None = None
    warnings: list[str] = field(default_factory=list)
    ci: dict = field(default_factory=dict)

    @property
    def beta_hat(self) -> NextGenMatrix:
        return NextGenMatrix(self.params.beta)

    @property
    def psi_hat(self) -> dict:
        return {
            "s0": self.params.s0,
            "r": self.params.r,
            "phi_a": self.params.phi_a,
            "phi_b": self.params.phi_b,
        }

    def season_summary(self) -> list[dict]:
        """Per-season reproduction numbers under the fitted NGM."""
        out = []
        b = self.params.beta
        for y, (r, s0) in enumerate(zip(self.params.r, self.params.s0)):
            out.append({
                "season": y + 1,
                "r": float(r),
                "s0": s0.tolist(),
                "R0_group": group_r0(b, r).tolist(),
                "R0": spectral_radius(r * b),
                "Re_group": group_effective_r(b, s0, r).tolist(),
                "Re": spectral_radius(r * s0[:, None] * b),
            })
        return out


def smoothed_incidence(problem: FitProblem) -> list[np.ndarray]:
    """Observations rescaled to true incidence and smoothed."""
    return [
        smooth(problem.observed[y] / problem.scale(y)[:, None], problem.window)
        for y in range(problem.L)
    ]


def noise_warm_start(problem: FitProblem) -> tuple[float, float]:
    """Moment estimate of (phi_a, phi_b) from residuals about the smoothed series.

    Uses E|eps| = sd * sqrt(2 / pi) and regresses the scaled absolute
    residuals on the smoothed level.
    """
    lvl, res = [], []
    for y in range(problem.L):
        Y = problem.observed[y]
        s = smooth(Y, problem.window)
        lvl.append(s.ravel())
        res.append(np.abs(Y - s).ravel())
    lvl, res = np.concatenate(lvl), np.concatenate(res) * math.sqrt(math.pi / 2)
    A = np.column_stack([np.ones_like(lvl), lvl])
    (a, b), *_ = np.linalg.lstsq(A, res, rcond=None)
    floor_a = max(0.1 * float(np.mean(res)), 1e-3)
    return max(float(a), floor_a), max(float(b), 1e-3)


def growth_re(inc_total: np.ndarray, p: np.ndarray) -> float | None:
    """Crude reproduction number from the early exponential phase.

    Fits ``log(incidence)`` linearly from day ``d`` to the first day the
    series reaches half its peak, then maps the growth rate ``g`` through
    ``R = 1 / sum_tau P_tau exp(-g tau)``.
    """
    d = p.size
    T = inc_total.size
    peak = int(np.argmax(inc_total))
    half = np.nonzero(inc_total[: peak + 1] >= 0.5 * inc_total[peak])[0]
    end = int(half[0]) if half.size else peak
    end = max(end, d + 5)
    t = np.arange(d, min(end, T))
    if t.size < 3:
        return None
    g = np.polyfit(t + 1.0, np.log(inc_total[t] + 1.0), 1)[0]
    return float(1.0 / np.sum(p * np.exp(-g * np.arange(1, d + 1))))


def _initial_psi(problem: FitProblem, smoothed: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    m, L = problem.m, problem.L
    s0 = problem.s0 if problem.s0 is not None else np.full((L, m), S0_START)
    if problem.r is not None:
        r = problem.r
    elif L == 1:
        r = np.ones(1)
    else:
        p = np.asarray(problem.serial.p)
        re = np.array([growth_re(s.sum(axis=0), p) or np.nan for s in smoothed])
        ref = re[0]
        if not np.isfinite(ref):
            ref = np.nanmean(re) if np.any(np.isfinite(re)) else 1.0
        re = np.where(np.isfinite(re), re, ref)
        r = (re / ref) * (s0[0].mean() / s0.mean(axis=1))
        r[0] = 1.0
    return s0, r


def _fallback_beta(problem: FitProblem, smoothed, s0) -> np.ndarray:
    p = np.asarray(problem.serial.p)
    re = growth_re(smoothed[0].sum(axis=0), p) or FALLBACK_RE
    m = problem.m
    return np.full((m, m), re / float(np.sum(s0[0])))


def _start_beta(raw: np.ndarray) -> np.ndarray:
    """Direct estimate floored for use as a log-scale starting point.

    Entries at or below zero would start the search many log units away
    from any plausible value, where simplex steps scaled to the coordinate
    cannot climb back; they start at a small fraction of the largest entry.
    """
    top = float(np.max(raw))
    if top <= 0:
        return np.full_like(raw, 1.0)
    return np.maximum(raw, START_FLOOR * top)


def _direct_beta(builder: DesignBuilder, s0, r) -> np.ndarray:
    return solve_direct(builder.build(list(s0), r))


def stage_one(problem: FitProblem, opts: FitOptions | None = None):
    """Warm start for the likelihood search.

    Returns ``(StageResult, IdentifiabilityReport | None, warnings)``.
    """
    opts = opts or FitOptions()
    warnings: list[str] = []
    smoothed = smoothed_incidence(problem)
    builder = DesignBuilder(smoothed, problem.pop, problem.history, problem.serial)
    if problem.phi is None:
        phi_a, phi_b = noise_warm_start(problem)
    else:
        phi_a, phi_b = problem.phi.phi_a, problem.phi.phi_b
    s0, r = _initial_psi(problem, smoothed)
    base = ModelParams(np.ones((problem.m, problem.m)), r, s0, phi_a, phi_b)
    psi_layout = ParamLayout(problem, include_beta=False, include_phi=False)
    evals, converged = 0, True

    if psi_layout.size:
        def objective(x):
            prm = psi_layout.unpack(x, base)
            try:
                b = _direct_beta(builder, prm.s0, prm.r)
            except (NonIdentifiableError, ValueError):
                return -PENALTY
            return -log_likelihood(prm.with_beta(np.maximum(b, BETA_FLOOR)), problem)

        _, season_idx = psi_layout.season_blocks()
        res = block_maximize(objective, psi_layout.pack(base), season_idx, opts.stage1_nm,
                             opts.stage1_cycles, opts.stage1_tol, polish=False)
        base = psi_layout.unpack(res.x, base)
        evals, converged = res.evals, res.converged

    design = builder.build(list(base.s0), base.r)
    report = identifiability(design)
    try:
        raw = solve_direct(design)
        beta = _start_beta(raw)
    except NonIdentifiableError as err:
        report = err.report
        warnings.append("direct step is non-identifiable; starting from a uniform matrix")
        raw = None
        beta = _fallback_beta(problem, smoothed, base.s0)
    start = base.with_beta(beta)
    if problem.free_r:
        start = scale_scan(problem, start)
    return StageResult(start, log_likelihood(start, problem), evals, converged, raw), report, warnings


def scale_scan(problem: FitProblem, params: ModelParams, lo: float = 0.25, hi: float = 4.0,
               n: int = 81) -> ModelParams:
    """Best point on the line ``(c * beta, r[0], r[1:] / c)``.

    With r[0] pinned at 1, this direction changes only the first season's
    fit, so it is scanned on a log grid instead of left to the local search
    (a near-subcritical first season can make that season's likelihood
    multimodal in ``c``).
    """
    def at(c):
        r = params.r / c
        r[0] = params.r[0]
        return ModelParams(c * params.beta, r, params.s0, params.phi_a, params.phi_b)

    grid = np.concatenate([[1.0], np.geomspace(lo, hi, n)])
    lls = [season_log_likelihood(at(c), problem, 0) for c in grid]
    return at(float(grid[int(np.argmax(lls))]))


def maximize_likelihood(problem: FitProblem, layout: ParamLayout, base: ModelParams, x0: np.ndarray,
                        opts: FitOptions, fixed: int | None = None) -> OptimResult:
    """Maximise over every coordinate of the layout except ``fixed``.

    Single-season problems use one simplex search.  With several seasons the
    shared block (beta, noise) and each season's own block (r, s0) are swept
    cyclically first, each season scored by its own likelihood term.
    """
    def objective(x):
        return -log_likelihood(layout.unpack(x, base), problem)

    shared, seasons = layout.season_blocks()
    keep = lambda idx: idx[idx != fixed] if fixed is not None else idx
    blocks = [keep(shared)] + [keep(b) for b in seasons]
    if not any(len(b) for b in blocks[1:]):
        return block_maximize(objective, x0, [np.concatenate(blocks)], opts.nm)
    moves = [_rescaling_move(layout, blocks[0])] + [None] * problem.L
    if problem.L == 1:
        # joint search first, then block sweeps from there to escape the
        # ridge along which s0 trades off against rows of beta
        first = block_maximize(objective, x0, [np.concatenate(blocks)], opts.nm)
        res = block_maximize(objective, first.x, blocks, opts.sweep_nm, opts.block_cycles, opts.block_tol,
                             block_moves=moves, polish_tol=opts.polish_tol, polish_nm=opts.polish_nm)
        evals = first.evals + res.evals
        if res.fun > first.fun:
            res = first
        return OptimResult(res.x, res.fun, res.converged, evals, res.iterations, res.restarts)

    def season_obj(y):
        return lambda x: -season_log_likelihood(layout.unpack(x, base), problem, y)

    block_objs = [None] + [season_obj(y) for y in range(problem.L)]
    return block_maximize(objective, x0, blocks, opts.sweep_nm, opts.block_cycles, opts.block_tol, block_objs,
                          block_moves=moves, polish_tol=opts.polish_tol, polish_nm=opts.polish_nm)


def _rescaling_move(layout: ParamLayout, idx: np.ndarray):
    """Shared-block move that carries the season parameters along with beta.

    Rescaling rows of beta against s0 (or all of beta against the season
    factors) leaves early growth unchanged, a near-flat direction that
    season-wise sweeps would otherwise crawl along.  With free s0 the move
    keeps ``s0[y, j] * sum_k beta[j, k]`` fixed; otherwise it keeps
    ``r[y] * rho(beta)`` fixed.
    """
    if not layout.include_beta or not (layout.n_r or layout.n_s0):
        return None
    nb, nr, ns = layout.n_beta, layout.n_r, layout.n_s0
    m, L = layout.problem.m, layout.problem.L

    def placed(x, z):
        xx = x.copy()
        xx[idx] = z
        return xx

    if ns:
        sl = slice(nb + nr, nb + nr + ns)

        def move(x, z):
            xx = placed(x, z)
            ratio = np.exp(x[:nb]).reshape(m, m).sum(1) / np.exp(xx[:nb]).reshape(m, m).sum(1)
            s0 = np.minimum(_expit(x[sl]).reshape(L, m) * ratio, 1 - 1e-9)
            xx[sl] = _logit(s0).ravel()
            return xx

        return move

    def log_rho(x):
        return math.log(spectral_radius(np.exp(x[:nb]).reshape(m, m)))

    def move(x, z):
        xx = placed(x, z)
        xx[nb : nb + nr] += log_rho(x) - log_rho(xx)
        return xx

    return move


def ml_fit(problem: FitProblem, start: ModelParams, opts: FitOptions | None = None):
    """Maximise the likelihood over all free parameters from ``start``."""
    opts = opts or FitOptions()
    layout = ParamLayout(problem)
    res = maximize_likelihood(problem, layout, start, layout.pack(start), opts)
    return layout, res, layout.unpack(res.x, start)


def _finish(problem, stage1, report, warnings, opts) -> FitResult:
    layout, res, params = ml_fit(problem, stage1.params, opts)
    return FitResult(
        params=params,
        loglik=-res.fun,
        stage1=stage1,
        converged=res.converged,
        evals=stage1.evals + res.evals,
        n_params=layout.size,
        param_names=layout.names(),
        x_hat=res.x,
        report=report,
        warnings=warnings,
    )


def two_stage_fit(problem: FitProblem, opts: FitOptions | None = None) -> FitResult:
    stage1, report, warnings = stage_one(problem, opts)
    return _finish(problem, stage1, report, warnings, opts)


def multi_outbreak_fit(problem: FitProblem, opts: FitOptions | None = None) -> FitResult:
    """Two-stage fit sharing one NGM across seasons up to factors r[1:]."""
    if problem.L < 2:
        raise ValueError("multi-outbreak fitting needs at least two seasons")
    if problem.r is not None:
        raise ValueError("season factors must be free in a multi-outbreak fit")
    fit = two_stage_fit(problem, opts)
    m, L = problem.m, problem.L
    expected = m * m + (L - 1) + (0 if problem.s0 is not None else L * m) + (2 if problem.phi is None else 0)
    if fit.n_params != expected:
        raise AssertionError(f"optimised {fit.n_params} parameters, expected {expected}")
    return fit


def random_start_fit(problem: FitProblem, rng: np.random.Generator, opts: FitOptions | None = None,
                     beta_range=(0.0, 3.0), s0_range=(0.1, 0.9)) -> FitResult:
    """Single maximum-likelihood run from a uniformly drawn starting point."""
    m, L = problem.m, problem.L
    beta = np.maximum(rng.uniform(*beta_range, size=(m, m)), BETA_FLOOR)
    s0 = problem.s0 if problem.s0 is not None else rng.uniform(*s0_range, size=(L, m))
    r = problem.r if problem.r is not None else np.ones(L)
    if problem.phi is None:
        phi_a, phi_b = noise_warm_start(problem)
    else:
        phi_a, phi_b = problem.phi.phi_a, problem.phi.phi_b
    start = ModelParams(beta, r, s0, phi_a, phi_b)
    stage = StageResult(start, log_likelihood(start, problem), 0, True)
    return _finish(problem, stage, None, ["random start"], opts)
