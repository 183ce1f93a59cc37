"""Profile-likelihood confidence intervals."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import chi2

from .fit import FitOptions, FitResult, maximize_likelihood
from .likelihood import FitProblem, ParamLayout


@dataclass
class ProfileResult:
    target: str
    mle: float
    lower: float
    upper: float
    level: float
    threshold: float
    open_lower: bool = False
    open_upper: bool = False
    grid: list[tuple[float, float]] = field(default_factory=list)

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "mle": self.mle,
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
            "threshold": self.threshold,
            "open_lower": self.open_lower,
            "open_upper": self.open_upper,
        }


def drop_threshold(level: float) -> float:
    """Log-likelihood drop defining the interval (1.92 at 95%)."""
    return 0.5 * float(chi2.ppf(level, df=1))


def profile_interval(
    profile_ll: Callable[[float], float],
    mle: float,
    ll_max: float,
    *,
    level: float = 0.95,
    lower_bound: float | None = None,
    upper_bound: float | None = None,
    first_step: float = 0.02,
    rtol: float = 1e-3,
    target: str = "theta",
) -> ProfileResult:
    """Walk outward from ``mle`` with doubling steps until the profile drops
    below ``ll_max - threshold``, then bisect each crossing.

    Defaults confine the search to ``[mle / 10, 10 * mle]``; an unbracketed
    side is flagged open and reported at the search bound.
    """
    thr = drop_threshold(level)
    cutoff = ll_max - thr
    scale = abs(mle) if mle != 0 else 1.0
    if lower_bound is None:
        lower_bound = mle / 10 if mle > 0 else mle - 10 * scale
    if upper_bound is None:
        upper_bound = mle * 10 if mle > 0 else mle + 10 * scale
    grid: list[tuple[float, float]] = [(mle, ll_max)]

    def ev(v):
        ll = float(profile_ll(v))
        grid.append((v, ll))
        return ll

    def side(direction, bound):
        inside, ll_in = mle, ll_max
        step = first_step * scale
        while True:
            cand = mle + direction * step
            at_bound = (cand >= bound) if direction > 0 else (cand <= bound)
            if at_bound:
                cand = bound
            ll_c = ev(cand)
            if ll_c < cutoff:
                break
            inside, ll_in = cand, ll_c
            if at_bound:
                return bound, True
            step *= 2
        out, ll_out = cand, ll_c
        while abs(out - inside) > rtol * max(abs(inside), abs(out), 1e-300):
            mid = 0.5 * (inside + out)
            ll_m = ev(mid)
            if ll_m < cutoff:
                out, ll_out = mid, ll_m
            else:
                inside, ll_in = mid, ll_m
        w = (ll_in - cutoff) / (ll_in - ll_out) if ll_in > ll_out else 0.5
        return inside + w * (out - inside), False

    lo, open_lo = side(-1, lower_bound)
    hi, open_hi = side(+1, upper_bound)
    grid.sort()
    return ProfileResult(target, mle, lo, hi, level, thr, open_lo, open_hi, grid)


def profile_ci(problem: FitProblem, fit: FitResult, target: str, level: float = 0.95,
               opts: FitOptions | None = None, rtol: float = 1e-3) -> ProfileResult:
    """Profile interval for one named free parameter of a fitted problem.

    ``target`` is one of ``fit.param_names`` (e.g. "beta11", "r3",
    "s0_2_1", "phi_a").  Every other free parameter is re-maximised at each
    grid point, warm-started from the nearest point already profiled.
    """
    if not fit.converged:
        raise ValueError("profile intervals need a converged fit")
    opts = opts or FitOptions()
    layout = ParamLayout(problem)
    names = layout.names()
    if target not in names:
        raise KeyError(f"{target!r} is not a free parameter; choose from {names}")
    idx = names.index(target)
    base = fit.params
    x_hat = layout.pack(base)
    # s0 lives on the logit scale, everything else on the log scale
    is_logit = target.startswith("s0_")
    mle = float(1 / (1 + np.exp(-x_hat[idx])) if is_logit else np.exp(x_hat[idx]))
    warm = {mle: np.delete(x_hat, idx)}

    def to_internal(v):
        return np.log(v) - np.log1p(-v) if is_logit else np.log(v)

    def profile_ll(v):
        if v <= 0 or (is_logit and v >= 1):
            return -np.inf
        tv = to_internal(v)
        nearest = min(warm, key=lambda u: abs(u - v))
        x0 = np.insert(warm[nearest], idx, tv)
        res = maximize_likelihood(problem, layout, base, x0, opts, fixed=idx)
        warm[v] = np.delete(res.x, idx)
        return -res.fun

    upper_bound = min(10 * mle, 1 - 1e-9) if is_logit else 10 * mle
    out = profile_interval(profile_ll, mle, fit.loglik, level=level, rtol=rtol,
                           upper_bound=upper_bound, target=target)
    fit.ci[target] = (out.lower, out.upper)
    return out
