"""Command-line entry point: ``anneal-smc run | theory | schema``."""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .drivers import iter_sais, iter_ssmc, run_zja
from .engine import ResamplingPolicy
from .kernels import make_kernel
from .model import GaussianPathTarget, GaussianShiftTarget, MixtureTarget
from .pt import run_pt
from .schedule import BarrierEstimate, Schedule, barrier_estimate, local_barrier
from .theory import RegimePoint, classify_regime, rel_variance

__all__ = ["HEADERS", "build_target", "main", "run_experiment"]

HEADERS = {
    "summary": ("round", "N", "T", "log_Z_hat", "elbo_hat", "Lambda_hat",
                "kernel_applications", "wall_clock_seconds"),
    "trace": ("round", "t", "beta", "log_g0", "log_g1", "log_g2", "ess", "resampled", "cum_log_Z"),
    "schedule": ("round", "t", "beta"),
    "barrier": ("round", "t", "beta", "D_hat", "Lambda_hat", "lambda_hat"),
}
EXTRA_HEADERS = {
    "replicates": ("replicate", "seed", "N", "T", "log_Z_hat", "elbo_hat", "Lambda_hat"),
    "pt": ("iteration", "level", "beta", "V", "swap_accepted"),
    "theory": ("D_total", "N", "R_eff", "rel_variance"),
    "regimes": ("alpha_T", "alpha_R", "regime"),
}

REGIME_GRID = [(a_t, a_r) for a_t in (1.0, 2.0, 3.0) for a_r in (0.0, 0.5, 1.0)]

FAILED_MARKER = ".failed"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class _Tables:
    def __init__(self):
        self.rows = {name: [] for name in list(HEADERS) + list(EXTRA_HEADERS)}

    def add(self, name, *values):
        self.rows[name].append([_fmt(v) for v in values])

    def write(self, out_dir, names):
        for name in names:
            header = HEADERS.get(name) or EXTRA_HEADERS[name]
            with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(self.rows[name])


def build_target(cfg: RunConfig):
    if cfg.target == "gaussian_shift":
        return GaussianShiftTarget(cfg.mu0, cfg.mu1, cfg.sigma, cfg.dim)
    if cfg.target == "gaussian_path":
        return GaussianPathTarget(cfg.mu0, cfg.sigma0, cfg.mu1, cfg.sigma1, cfg.dim)
    if cfg.dim != 1:
        raise ConfigError("the mixture target is one-dimensional; set dim = 1")
    return MixtureTarget(cfg.mixture_weights, cfg.mixture_means, cfg.mixture_sds,
                         cfg.reference_mean, cfg.reference_sd)


def _policy(cfg):
    if cfg.policy == "stabilized":
        return ResamplingPolicy.stabilized(cfg.rho)
    return ResamplingPolicy(cfg.policy, cfg.rho)


def _record_round(tables, k, report, schedule, seconds):
    est = barrier_estimate(report.increment_stats, schedule)
    lam = local_barrier(est)
    tables.add("summary", k, report.N, report.T, report.log_Z_hat, report.elbo_hat,
               est.total, report.kernel_applications, seconds)
    betas = schedule.betas
    st = report.increment_stats
    flags = report.resampled
    for t in range(1, report.T + 1):
        tables.add("trace", k, t, betas[t], st.log_g0[t - 1], st.log_g1[t - 1], st.log_g2[t - 1],
                   report.ess_trace[t - 1], flags[t - 1], report.cum_log_Z[t - 1])
    for t in range(report.T + 1):
        tables.add("schedule", k, t, betas[t])
        d = math.nan if t == 0 else est.d_hat[t - 1]
        tables.add("barrier", k, t, betas[t], d, est.Lambda[t], lam[t])
    return est.total


def _timed(fn, timing):
    start = time.perf_counter()
    out = fn()
    return out, (time.perf_counter() - start) if timing else math.nan


def _run_rounds(cfg, target, kernel, seed, tables, record):
    """Run one replicate; returns ``(N, T, log_Z, elbo, Lambda)`` of its last round."""
    if cfg.driver in ("ssmc", "sais"):
        if cfg.driver == "ssmc":
            rounds = iter_ssmc(target, kernel, _policy(cfg), cfg.rounds, seed, N1=cfg.particles,
                               workers=cfg.workers, memory_cap=cfg.memory_cap)
        else:
            rounds = iter_sais(target, kernel, cfg.rounds, seed, cfg.chunk, N1=cfg.particles,
                               workers=cfg.workers)
        last = None
        start = time.perf_counter()
        for k, report, schedule in rounds:
            seconds = time.perf_counter() - start if cfg.timing else math.nan
            if record:
                lam = _record_round(tables, k, report, schedule, seconds)
            else:
                lam = barrier_estimate(report.increment_stats, schedule).total
            last = (report.N, report.T, report.log_Z_hat, report.elbo_hat, lam)
            start = time.perf_counter()
        return last
    if cfg.driver == "ais_zja":
        report, seconds = _timed(
            lambda: run_zja(target, kernel, cfg.particles, cfg.zja_threshold, seed,
                            ResamplingPolicy.never(), round=1, workers=cfg.workers),
            cfg.timing,
        )
        lam = barrier_estimate(report.increment_stats, report.schedule).total
        if record:
            lam = _record_round(tables, 1, report, report.schedule, seconds)
        return report.N, report.T, report.log_Z_hat, report.elbo_hat, lam
    if cfg.driver == "pt":
        return _run_pt(cfg, target, kernel, seed, tables, record)
    raise ConfigError(f"driver {cfg.driver!r} does not run replicates")


def _run_pt(cfg, target, kernel, seed, tables, record):
    schedule = Schedule.uniform(cfg.T)
    res, seconds = _timed(
        lambda: run_pt(target, kernel, schedule, cfg.iterations, seed, round=1,
                       burn_in=cfg.pt_burn_in),
        cfg.timing,
    )
    log_z = float(res.log_Z_hat[0])
    # Barrier from the level-pair ratios, weighting kept iterations equally.
    V = res.V[res.burn_in:, 0, :]
    db = np.diff(schedule.betas)
    x = db * V[:, :-1]
    m = x.max(axis=0)
    lg1 = m + np.log(np.mean(np.exp(x - m), axis=0))
    lg2 = 2 * m + np.log(np.mean(np.exp(2 * (x - m)), axis=0))
    d = np.maximum(0.0, lg2 - 2 * lg1)
    est = BarrierEstimate.from_discrepancies(d, schedule.betas)
    if record:
        lam = local_barrier(est)
        kernel_apps = cfg.iterations * cfg.T
        tables.add("summary", 1, 1, cfg.T, log_z, math.nan, est.total, kernel_apps, seconds)
        for t in range(cfg.T + 1):
            tables.add("schedule", 1, t, schedule.betas[t])
            tables.add("barrier", 1, t, schedule.betas[t], math.nan if t == 0 else d[t - 1],
                       est.Lambda[t], lam[t])
        for it in range(cfg.iterations):
            for n in range(cfg.T + 1):
                tables.add("pt", it + 1, n, schedule.betas[n], res.V[it, 0, n], res.swaps[it, 0, n])
    return 1, cfg.T, log_z, math.nan, est.total


def _theory_tables(cfg, tables):
    for D in cfg.theory_D:
        for N in cfg.theory_N:
            for R in cfg.theory_R:
                tables.add("theory", float(D), int(N), float(R), rel_variance(float(D), float(R), int(N)))
    for a_t, a_r in REGIME_GRID:
        tables.add("regimes", a_t, a_r, classify_regime(RegimePoint(a_t, a_r)))


def run_experiment(cfg: RunConfig, replicates: int = 1, stdout=None) -> int:
    """Run a configured experiment and write its CSV files.

    Returns the process exit status.  On failure a ``.failed`` marker holding
    the error is written next to whatever files were produced.
    """
    stdout = sys.stdout if stdout is None else stdout
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    marker = os.path.join(out_dir, FAILED_MARKER)
    if os.path.exists(marker):
        os.remove(marker)
    tables = _Tables()
    names = list(HEADERS)
    try:
        if cfg.driver == "theory":
            _theory_tables(cfg, tables)
            names += ["theory", "regimes"]
            tables.write(out_dir, names)
            _print_theory(tables, stdout)
            return 0
        target = build_target(cfg)
        kernel = make_kernel(cfg.kernel, cfg.step_sizes, cfg.sweeps)
        last = None
        for r in range(int(replicates)):
            seed = (cfg.seed + r) % 2**64
            res = _run_rounds(cfg, target, kernel, seed, tables, record=(r == 0))
            tables.add("replicates", r, seed, *res)
            if r == 0:
                last = res
        if cfg.driver == "pt":
            names.append("pt")
        if replicates > 1:
            names.append("replicates")
        tables.write(out_dir, names)
    except Exception as exc:  # any engine failure flags the partial output
        tables.write(out_dir, names)
        with open(marker, "w", encoding="utf-8") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"log_Z_hat = {_fmt(last[2])}", file=stdout)
    print(f"Lambda_hat = {_fmt(last[4])}", file=stdout)
    return 0


def _print_theory(tables, stdout):
    print("D_total      N  R_eff  rel_variance", file=stdout)
    for D, N, R, v in tables.rows["theory"]:
        print(f"{float(D):7.3g} {int(N):6d} {float(R):6.3g}  {float(v):.6g}", file=stdout)
    print("", file=stdout)
    print("alpha_T alpha_R regime", file=stdout)
    for a_t, a_r, reg in tables.rows["regimes"]:
        print(f"{float(a_t):7.2f} {float(a_r):7.2f} {reg}", file=stdout)


def _parser():
    p = argparse.ArgumentParser(prog="anneal-smc", description="Annealed SMC / AIS experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a configured experiment")
    r.add_argument("--config", required=True, help="key = value configuration file")
    r.add_argument("--seed", type=int, help="override the configured seed")
    r.add_argument("--workers", type=int, help="override the worker count")
    r.add_argument("--replicates", type=int, default=1, help="independent runs at seeds seed, seed+1, ...")
    r.add_argument("--output-dir", help="override the output directory")
    r.add_argument("--no-timing", action="store_true",
                   help="write nan wall-clock times so outputs are byte-reproducible")
    t = sub.add_parser("theory", help="print the performance-model table and regime grid")
    t.add_argument("--D", type=float, nargs="+", default=None, help="total discrepancies")
    t.add_argument("--N", type=int, nargs="+", default=None, help="particle counts")
    t.add_argument("--R", type=float, nargs="+", default=None, help="effective resample sizes")
    sub.add_parser("schema", help="print the CSV headers")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "schema":
        for name, header in {**HEADERS, **EXTRA_HEADERS}.items():
            print(f"{name}.csv: {','.join(header)}")
        return 0
    if args.command == "theory":
        cfg = RunConfig(driver="theory")
        cfg = replace(cfg, **{k: tuple(v) for k, v in
                              (("theory_D", args.D), ("theory_N", args.N), ("theory_R", args.R)) if v})
        tables = _Tables()
        _theory_tables(cfg, tables)
        _print_theory(tables, sys.stdout)
        return 0
    if args.replicates < 1:
        print("error: --replicates must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(
            args.config,
            seed=args.seed,
            workers=args.workers,
            output_dir=args.output_dir,
            timing=False if args.no_timing else None,
        )
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run_experiment(cfg, args.replicates)


if __name__ == "__main__":
    sys.exit(main())
