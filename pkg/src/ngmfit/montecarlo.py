"""Monte Carlo study of the estimator: many noise replicates around one truth.

Scenarios:
  i    one outbreak, s0 known, noise parameters estimated
  ii   one outbreak, s0 estimated, noise parameters estimated
  iii  ten seasons sharing beta up to factors r, s0 known, noise fixed
  iv   ten seasons, s0 estimated, noise fixed
"""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import truncnorm

from .epi import DEFAULT_SERIAL, MATRICES, IncidenceSeries, OutbreakConfig, SerialInterval, effective_r, scaling_factor, simulate
from .fit import FitOptions, FitResult, random_start_fit, two_stage_fit
from .likelihood import FitProblem
from .nelder_mead import NMOptions
from .observe import NoiseParams, observe

SCENARIOS = ("i", "ii", "iii", "iv")
FAILURE_ALARM = 0.02
WORKERS_ENV = "NGMFIT_WORKERS"


@dataclass(frozen=True)
class ScenarioSpec:
    matrix: str | tuple = "matrix1"
    scenario: str = "i"
    replicates: int = 500
    seed: int = 0
    n_years: int = 10
    pop: tuple = (1e6, 2e6)
    s0: float = 0.4
    re_mean: float = 1.2
    re_sd: float = 0.05
    re_range: tuple = (1.01, 1.6)
    s0_sd: float = 0.05
    s0_range: tuple = (0.05, 0.95)
    seed_frac: float = 1e-3
    phi_a: float = 10.0
    phi_b: float = 0.1
    window: int = 7
    serial: tuple = DEFAULT_SERIAL
    start: str = "two-stage"
    max_iter_factor: int = 200
    workers: int | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.scenario in ("iii", "iv") and self.n_years < 2:
            raise ValueError("recurrent scenarios need at least two seasons")
        if self.start not in ("two-stage", "random"):
            raise ValueError("start must be 'two-stage' or 'random'")

    @property
    def beta(self) -> np.ndarray:
        if isinstance(self.matrix, str):
            return np.array(MATRICES[self.matrix])
        return np.array(self.matrix, dtype=float)

    @property
    def recurrent(self) -> bool:
        return self.scenario in ("iii", "iv")

    @property
    def known_s0(self) -> bool:
        return self.scenario in ("i", "iii")


@dataclass
class Truth:
    beta: np.ndarray
    configs: list[OutbreakConfig]
    r: np.ndarray
    re: np.ndarray
    incidence: list[np.ndarray]

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "r": self.r.tolist(),
            "re": self.re.tolist(),
            "s0": [c.s0.tolist() for c in self.configs],
            "days": [int(c.horizon) for c in self.configs],
        }


def draw_seasons(spec: ScenarioSpec, rng: np.random.Generator):
    """Season-level (Re, s0) draws; the first season keeps r = 1."""
    L, m = spec.n_years, len(spec.pop)

    def tn(mean, sd, lo, hi, size):
        return truncnorm.rvs((lo - mean) / sd, (hi - mean) / sd, loc=mean, scale=sd, size=size, random_state=rng)

    re = tn(spec.re_mean, spec.re_sd, *spec.re_range, L)
    s0 = tn(spec.s0, spec.s0_sd, *spec.s0_range, (L, m))
    r = np.array([scaling_factor(spec.beta, s0[y], re[y]) for y in range(L)])
    r[0] = 1.0
    re[0] = effective_r(spec.beta, s0[0])
    return re, s0, r


def build_truth(spec: ScenarioSpec) -> Truth:
    beta = spec.beta
    serial = SerialInterval(np.array(spec.serial))
    m = len(spec.pop)
    if spec.recurrent:
        re, s0, r = draw_seasons(spec, np.random.default_rng([spec.seed, 1]))
    else:
        s0 = np.full((1, m), spec.s0)
        r = np.ones(1)
        re = np.array([effective_r(beta, s0[0])])
    configs, incs = [], []
    for y in range(len(r)):
        cfg = OutbreakConfig(np.array(spec.pop, float), s0[y], spec.seed_frac, serial)
        inc, _ = simulate(beta, cfg, scale=r[y])
        cfg = OutbreakConfig(cfg.pop, cfg.s0, cfg.seed_frac, serial, horizon=inc.days)
        configs.append(cfg)
        incs.append(np.asarray(inc.values))
    return Truth(beta, configs, r, re, incs)


def make_problem(spec: ScenarioSpec, truth: Truth, observed: list[np.ndarray]) -> FitProblem:
    noise = NoiseParams(spec.phi_a, spec.phi_b) if spec.recurrent else None
    return FitProblem.from_series(observed, truth.configs, known_s0=spec.known_s0, phi=noise, window=spec.window)


def observe_seasons(incidence: list[np.ndarray], noise: NoiseParams, rng_seed: int) -> list[np.ndarray]:
    """Noisy copies of every season drawn from one stream (season 1 matches :func:`observe`)."""
    if len(incidence) == 1:
        return [np.asarray(observe(IncidenceSeries(incidence[0]), noise, rng_seed).values)]
    rng = np.random.default_rng(rng_seed)
    return [inc + noise.sd(inc) * rng.standard_normal(inc.shape) for inc in incidence]


def _replicate(args):
    spec, truth, k = args
    observed = observe_seasons(truth.incidence, NoiseParams(spec.phi_a, spec.phi_b), spec.seed + k)
    problem = make_problem(spec, truth, observed)
    opts = FitOptions(NMOptions(max_iter_factor=spec.max_iter_factor))
    try:
        if spec.start == "random":
            fit = random_start_fit(problem, np.random.default_rng([spec.seed + k, 2]), opts)
        else:
            fit = two_stage_fit(problem, opts)
    except Exception as err:  # recorded per replicate, never dropped silently
        return k, None, f"{type(err).__name__}: {err}"
    return k, _compact(fit), None


def _compact(fit: FitResult) -> dict:
    p = fit.params
    return {
        "beta": np.asarray(p.beta),
        "stage1_beta": np.asarray(fit.stage1.params.beta),
        "s0": np.asarray(p.s0),
        "r": np.asarray(p.r),
        "phi": np.array([p.phi_a, p.phi_b]),
        "loglik": fit.loglik,
        "stage1_loglik": fit.stage1.loglik,
        "converged": fit.converged,
    }


def mse(estimates, truth) -> float:
    """Sum over entries of squared bias plus (population) variance."""
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 2:
        est = est[None]
    if est.shape[0] == 0:
        raise ValueError("need at least one estimate")
    truth = np.asarray(truth, dtype=float)
    bias = est.mean(axis=0) - truth
    return float(np.sum(bias**2 + est.var(axis=0)))


@dataclass
class McSummary:
    spec: ScenarioSpec
    truth: Truth
    estimates: np.ndarray
    stage1_estimates: np.ndarray
    s0_estimates: np.ndarray
    r_estimates: np.ndarray
    phi_estimates: np.ndarray
    loglik: np.ndarray
    stage1_loglik: np.ndarray
    converged: np.ndarray
    indices: np.ndarray
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def mean(self) -> np.ndarray:
        return self.estimates.mean(axis=0)

    @property
    def bias(self) -> np.ndarray:
        return self.mean - self.truth.beta

    @property
    def sd(self) -> np.ndarray:
        return self.estimates.std(axis=0)

    @property
    def mse(self) -> float:
        return mse(self.estimates, self.truth.beta)

    @property
    def stage1_mse(self) -> float:
        return mse(self.stage1_estimates, self.truth.beta)

    def replicate_sq_errors(self, stage: int = 2) -> np.ndarray:
        est = self.estimates if stage == 2 else self.stage1_estimates
        return np.sum((est - self.truth.beta) ** 2, axis=(1, 2))

    def to_dict(self) -> dict:
        return {
            "spec": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.spec).items()},
            "truth": self.truth.to_dict(),
            "replicates_ok": int(len(self.indices)),
            "failures": [{"replicate": k, "error": e} for k, e in self.failures],
            "mse": self.mse,
            "stage1_mse": self.stage1_mse,
            "mean": self.mean.tolist(),
            "bias": self.bias.tolist(),
            "sd": self.sd.tolist(),
            "stage1_mean": self.stage1_estimates.mean(axis=0).tolist(),
            "stage1_sd": self.stage1_estimates.std(axis=0).tolist(),
            "s0_mean": self.s0_estimates.mean(axis=0).tolist(),
            "s0_sd": self.s0_estimates.std(axis=0).tolist(),
            "r_mean": self.r_estimates.mean(axis=0).tolist(),
            "r_sd": self.r_estimates.std(axis=0).tolist(),
            "converged_fraction": float(np.mean(self.converged)),
        }


def worker_count(spec: ScenarioSpec) -> int:
    if spec.workers is not None:
        return max(1, int(spec.workers))
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def run_scenario(spec: ScenarioSpec) -> McSummary:
    truth = build_truth(spec)
    jobs = [(spec, truth, k) for k in range(spec.replicates)]
    workers = worker_count(spec)
    if workers == 1:
        results = [_replicate(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    results.sort(key=lambda t: t[0])
    ok = [(k, res) for k, res, err in results if res is not None]
    failures = [(k, err) for k, res, err in results if res is None]
    if not ok:
        raise RuntimeError(f"all {spec.replicates} replicate fits failed: {failures[0][1]}")
    if len(failures) > FAILURE_ALARM * spec.replicates:
        warnings.warn(f"{len(failures)} of {spec.replicates} replicate fits failed", RuntimeWarning)

    def stack(key):
        return np.array([res[key] for _, res in ok])

    return McSummary(
        spec=spec,
        truth=truth,
        estimates=stack("beta"),
        stage1_estimates=stack("stage1_beta"),
        s0_estimates=stack("s0"),
        r_estimates=stack("r"),
        phi_estimates=stack("phi"),
        loglik=stack("loglik"),
        stage1_loglik=stack("stage1_loglik"),
        converged=stack("converged"),
        indices=np.array([k for k, _ in ok]),
        failures=failures,
    )
