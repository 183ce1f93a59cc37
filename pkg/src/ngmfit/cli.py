"""Command-line interface: simulate, fit, profile, mc and diagnose.

Exit codes: 0 success, 2 invalid input, 3 non-identifiable, 4 no
convergence, 5 I/O failure.  Failures print one JSON record to stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .direct import DesignBuilder, NonIdentifiableError, identifiability
from .epi import OutbreakConfig, simulate
from .fit import FitResult, multi_outbreak_fit, smoothed_incidence, two_stage_fit
from .io import IngestError, atomic_dir, export_incidence, ingest, to_jsonable, write_json, write_table
from .likelihood import FitProblem, season_mean
from .montecarlo import ScenarioSpec, run_scenario
from .observe import IncidenceSeries, ReportingModel, observe, observe_reported
from .profile import profile_ci

EXIT_OK, EXIT_INVALID, EXIT_NONIDENT, EXIT_NOCONV, EXIT_IO = 0, 2, 3, 4, 5


class NotConverged(RuntimeError):
    pass


@dataclass
class Prepared:
    problem: FitProblem
    seasons: list[str]
    first_day: list[int]


def _manifest(cfg: RunConfig, args, data_path=None) -> dict:
    out = {
        "tool": "ngmfit",
        "version": __version__,
        "command": args.command,
        "argv": sys.argv[1:],
        "seed": cfg.seed,
        "config_file": "config.yaml",
        "config_sha256": cfg.digest(),
    }
    if data_path is not None:
        with open(data_path, "rb") as fh:
            out["data_sha256"] = hashlib.sha256(fh.read()).hexdigest()
    return out


def _write_common(tmp, cfg: RunConfig, args, data_path=None):
    (tmp / "config.yaml").write_text(cfg.source)
    write_json(tmp / "manifest.json", _manifest(cfg, args, data_path))


def _histories(cfg: RunConfig, L: int, s0) -> list[np.ndarray]:
    d = cfg.serial_interval.d
    pop = np.array(cfg.groups.pop)
    if cfg.seeding.mode == "frac":
        if s0 is None:
            raise ConfigError("seeding.mode", "'frac' seeding needs known s0; use 'counts' or 'prior_window'")
        rows = [cfg.seeding.frac * s0[y] * pop for y in range(L)]
    else:
        rows = list(cfg.season_rows(cfg.seeding.counts, L, "seeding.counts"))
    hist = []
    for row in rows:
        h = np.zeros((cfg.m, d))
        h[:, -1] = row
        hist.append(h)
    return hist


def prepare_problem(cfg: RunConfig, data_path) -> Prepared:
    """Turn a config plus incidence file into a fit problem."""
    ing = cfg.ingest
    data = ingest(data_path, groups=cfg.groups.names, window=ing.weekend_window,
                  start_day=ing.start_day, end_day=ing.end_day, negative_floor=ing.negative_floor)
    L = data.L
    obs = data.values()
    first = list(data.first_day)
    rep = cfg.reporting_model(L)
    s0 = None if cfg.free.s0 else cfg.season_rows(_need(cfg.known.s0, "known.s0"), L, "known.s0")
    if cfg.seeding.mode == "prior_window":
        d = cfg.serial_interval.d
        hist = []
        for y in range(L):
            if obs[y].shape[1] <= d:
                raise ConfigError("seeding.mode", f"season {data.seasons[y]} is too short for a {d}-day prior window")
            scale = rep.scale(y) if rep is not None else np.ones(cfg.m)
            hist.append(np.maximum(obs[y][:, :d], 0.0) / scale[:, None])
            obs[y] = obs[y][:, d:]
            first[y] += d
    else:
        hist = _histories(cfg, L, s0)
    r = None
    if L > 1 and not cfg.free.r:
        r = np.asarray(_need(cfg.known.r, "known.r"), dtype=float)
    try:
        problem = FitProblem(
            observed=tuple(obs),
            pop=(np.array(cfg.groups.pop, dtype=float),),
            history=tuple(hist),
            serial=cfg.serial_interval,
            s0=s0,
            r=r,
            phi=None if cfg.noise.estimate else cfg.noise.params(),
            reporting=rep,
            window=cfg.window,
        )
    except ValueError as err:
        raise ConfigError("", str(err)) from None
    return Prepared(problem, data.seasons, first)


def _need(value, path):
    if value is None:
        raise ConfigError(path, "required by the chosen free/known declarations")
    return value


def run_fit(prep: Prepared, cfg: RunConfig) -> FitResult:
    opts = cfg.optimizer.options()
    if prep.problem.free_r:
        return multi_outbreak_fit(prep.problem, opts)
    return two_stage_fit(prep.problem, opts)


def fit_record(fit: FitResult) -> dict:
    p, s1 = fit.params, fit.stage1
    return {
        "converged": fit.converged,
        "loglik": fit.loglik,
        "n_params": fit.n_params,
        "param_names": fit.param_names,
        "evals": fit.evals,
        "stage2": {"beta": p.beta, "s0": p.s0, "r": p.r, "phi_a": p.phi_a, "phi_b": p.phi_b},
        "stage1": {
            "beta": s1.params.beta,
            "raw_beta": s1.raw_beta,
            "s0": s1.params.s0,
            "r": s1.params.r,
            "loglik": s1.loglik,
            "converged": s1.converged,
        },
        "identifiability": fit.report.to_dict() if fit.report is not None else None,
        "seasons": fit.season_summary(),
        "warnings": fit.warnings,
    }


def _fitted_rows(prep: Prepared, fit: FitResult, groups):
    prob = prep.problem
    for y in range(prob.L):
        s1 = season_mean(fit.stage1.params, prob, y)
        s2 = season_mean(fit.params, prob, y)
        for t in range(prob.days[y]):
            for j, g in enumerate(groups):
                yield (prep.seasons[y], prep.first_day[y] + t, g, float(prob.observed[y][j, t]),
                       float(s1[j, t]), float(s2[j, t]))


def cmd_simulate(args, cfg: RunConfig) -> int:
    sim = cfg.simulation
    beta = sim.beta()
    s0 = np.array(sim.s0, dtype=float)
    if s0.ndim == 1:
        s0 = s0[None]
    L = s0.shape[0]
    s0 = cfg.season_rows(s0, L, "simulation.s0")
    r = np.ones(L) if sim.r is None else np.asarray(sim.r, dtype=float)
    if r.shape != (L,) or r[0] != 1.0:
        raise ConfigError("simulation.r", f"need {L} factors with r[0] == 1")
    pop = np.array(cfg.groups.pop, dtype=float)
    hist = _histories(cfg, L, s0) if cfg.seeding.mode == "counts" else [None] * L
    truths = []
    for y in range(L):
        oc = OutbreakConfig(pop, s0[y], cfg.seeding.frac, cfg.serial_interval, sim.horizon, hist[y])
        inc, _ = simulate(beta, oc, scale=r[y])
        truths.append(inc)
    rep = cfg.reporting_model(L)
    if not sim.noise:
        observed = [IncidenceSeries(np.asarray(t.values) * (rep.scale(y)[:, None] if rep else 1.0))
                    for y, t in enumerate(truths)]
    elif rep is not None:
        observed = observe_reported(truths, rep, cfg.noise.params(), cfg.seed)
    elif L == 1:
        observed = [observe(truths[0], cfg.noise.params(), cfg.seed)]
    else:
        observed = observe_reported(truths, _unit_reporting(cfg.m, L), cfg.noise.params(), cfg.seed)
    names = cfg.groups.names
    seasons = [str(y + 1) for y in range(L)]
    with atomic_dir(args.out) as tmp:
        export_incidence(tmp / "incidence.csv", observed, names, seasons, [1] * L)
        export_incidence(tmp / "truth.csv", truths, names, seasons, [1] * L)
        write_json(tmp / "truth.json", {"beta": beta, "s0": s0, "r": r, "days": [t.days for t in truths]})
        _write_common(tmp, cfg, args)
    return EXIT_OK


def _unit_reporting(m, L):
    return ReportingModel(np.ones((m, L)), np.ones((m, L)))


def cmd_fit(args, cfg: RunConfig) -> int:
    prep = prepare_problem(cfg, args.data)
    fit = run_fit(prep, cfg)
    with atomic_dir(args.out) as tmp:
        write_json(tmp / "result.json", fit_record(fit))
        write_table(tmp / "fitted.csv", ("season", "day", "group", "observed", "stage1", "stage2"),
                    _fitted_rows(prep, fit, cfg.groups.names))
        _write_common(tmp, cfg, args, args.data)
    if not fit.converged:
        _error_record("not_converged", EXIT_NOCONV, "optimiser stopped before converging; results written",
                      {"out": str(args.out)})
        return EXIT_NOCONV
    return EXIT_OK


def cmd_profile(args, cfg: RunConfig) -> int:
    prep = prepare_problem(cfg, args.data)
    fit = run_fit(prep, cfg)
    if not fit.converged:
        raise NotConverged("the fit did not converge, so no profile interval is computed")
    if args.param not in fit.param_names:
        raise ConfigError("--param", f"{args.param!r} is not free; choose from {fit.param_names}")
    prof = profile_ci(prep.problem, fit, args.param, level=args.level, opts=cfg.optimizer.options())
    cutoff = fit.loglik - prof.threshold
    with atomic_dir(args.out) as tmp:
        write_json(tmp / "profile.json", {**prof.to_dict(), "loglik_max": fit.loglik, "fit": fit_record(fit)})
        write_table(tmp / "profile_grid.csv", ("value", "profile_loglik", "inside"),
                    ((float(v), float(ll), int(ll >= cutoff)) for v, ll in prof.grid))
        _write_common(tmp, cfg, args, args.data)
    return EXIT_OK


def cmd_mc(args, cfg: RunConfig) -> int:
    sc = cfg.scenario
    try:
        spec = ScenarioSpec(
            matrix=sc.matrix if isinstance(sc.matrix, str) else tuple(map(tuple, sc.matrix)),
            scenario=sc.scenario, replicates=sc.replicates, seed=cfg.seed, n_years=sc.n_years,
            pop=tuple(cfg.groups.pop), seed_frac=cfg.seeding.frac, phi_a=cfg.noise.phi_a,
            phi_b=cfg.noise.phi_b, window=cfg.window, serial=tuple(cfg.serial), start=sc.start,
            max_iter_factor=cfg.optimizer.max_iter_factor, workers=sc.workers,
        )
    except ValueError as err:
        raise ConfigError("scenario", str(err)) from None
    summary = run_scenario(spec)
    m = spec.beta.shape[0]
    names = [f"beta{j + 1}{k + 1}" for j in range(m) for k in range(m)]
    rows = []
    for i, k in enumerate(summary.indices):
        rows.append([int(k)] + [float(v) for v in summary.estimates[i].ravel()]
                    + [float(v) for v in summary.stage1_estimates[i].ravel()]
                    + [float(summary.loglik[i]), float(summary.stage1_loglik[i]), int(summary.converged[i])])
    with atomic_dir(args.out) as tmp:
        write_json(tmp / "summary.json", summary.to_dict())
        write_table(tmp / "replicates.csv",
                    ["replicate"] + names + [f"stage1_{n}" for n in names] + ["loglik", "stage1_loglik", "converged"],
                    rows)
        _write_common(tmp, cfg, args)
    return EXIT_OK


def cmd_diagnose(args, cfg: RunConfig) -> int:
    prep = prepare_problem(cfg, args.data)
    prob = prep.problem
    s0 = prob.s0 if prob.s0 is not None else np.full((prob.L, prob.m), 0.5)
    r = prob.r if prob.r is not None else np.ones(prob.L)
    builder = DesignBuilder(smoothed_incidence(prob), prob.pop, prob.history, prob.serial)
    report = identifiability(builder.build(list(s0), r))
    json.dump({"identifiability": to_jsonable(report.to_dict())}, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_NONIDENT if report.flag else EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "profile": cmd_profile,
    "mc": cmd_mc,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ngmfit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ngmfit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help, data=False, out=True):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=True, help="YAML run configuration")
        if data:
            p.add_argument("--data", required=True, help="incidence CSV (season,day,group,count)")
        if out:
            p.add_argument("--out", required=True, help="output directory (replaced atomically)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        return p

    add("simulate", "simulate incidence from the configured truth")
    add("fit", "two-stage fit of an incidence file", data=True)
    p = add("profile", "profile-likelihood interval for one parameter", data=True)
    p.add_argument("--param", required=True, help="parameter name, e.g. beta11, r3, phi_a")
    p.add_argument("--level", type=float, default=0.95)
    add("mc", "Monte Carlo study of one scenario")
    add("diagnose", "identifiability report of the direct step", data=True, out=False)
    return parser


def _error_record(kind: str, code: int, message: str, details: dict | None = None):
    rec = {"error": kind, "exit_code": code, "message": message}
    if details:
        rec["details"] = details
    sys.stderr.write(json.dumps(rec) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        return COMMANDS[args.command](args, cfg)
    except ConfigError as err:
        _error_record("invalid_config", EXIT_INVALID, str(err), {"key": err.path})
        return EXIT_INVALID
    except IngestError as err:
        _error_record(f"invalid_data:{err.kind}", EXIT_INVALID, str(err), err.to_dict())
        return EXIT_INVALID
    except NonIdentifiableError as err:
        _error_record("non_identifiable", EXIT_NONIDENT, str(err))
        return EXIT_NONIDENT
    except NotConverged as err:
        _error_record("not_converged", EXIT_NOCONV, str(err))
        return EXIT_NOCONV
    except OSError as err:
        _error_record("io_error", EXIT_IO, str(err), {"file": getattr(err, "filename", None)})
        return EXIT_IO
    except ValueError as err:
        _error_record("invalid_input", EXIT_INVALID, str(err))
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
