"""Round-based drivers: SSMC, constant-memory SAIS, online ZJA, and the budget rule.

Each SSMC/SAIS round runs a schedule fixed before the round starts, so every
round's ``Z`` estimate is unbiased on its own; the barrier estimated from a
round then generates the next round's schedule.  The last round's estimate is
treated as the primary one.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .engine import (
    _NPART,
    BLOCK,
    ResamplingPolicy,
    RunReport,
    SMCState,
    _Accumulator,
    _block_partials,
    _empty_partials,
    _fold,
    _init_block,
    _pool,
    decide_resample,
    run_smc,
)
from .schedule import (
    NonMonotoneWarning,
    Schedule,
    barrier_estimate,
    discrepancy_from_moments,
    generate_schedule,
    zja_next_beta,
)

__all__ = [
    "RoundPlan",
    "SaisAccumulator",
    "budget",
    "iter_sais",
    "iter_ssmc",
    "run_ssmc",
    "run_sais",
    "run_zja",
    "sais_round",
]


@dataclass(frozen=True)
class RoundPlan:
    """Particle count and schedule of one round (``round`` is 1-based)."""

    round: int
    N: int
    schedule: Schedule

    @property
    def T(self) -> int:
        return self.schedule.T


def budget(N, T, memory_cap=None, mode="ssmc", dim=1):
    """Next round's ``(N, T)``: both grow by ``sqrt 2`` until memory runs out.

    In ``ssmc`` mode, once ``ceil(sqrt(2) N) * dim * 8`` bytes of particle
    storage would exceed ``memory_cap`` the particle count is frozen and ``T``
    doubles instead.  ``sais`` mode keeps no particle population and is never
    capped.  ``memory_cap=None`` means unlimited.
    """
    N, T = int(N), int(T)
    if N < 1 or T < 1:
        raise ValueError("N and T must be >= 1")
    if mode not in ("ssmc", "sais"):
        raise ValueError(f"unknown budget mode {mode!r}")
    N2 = math.ceil(math.sqrt(2.0) * N)
    T2 = math.ceil(math.sqrt(2.0) * T)
    if mode == "sais" or memory_cap is None or N2 * int(dim) * 8 <= memory_cap:
        return N2, T2
    return N, 2 * T


def _first_plan(N1, workers, initial_schedule):
    if N1 is None:
        N1 = workers or os.cpu_count() or 1
    sched = Schedule([0.0, 1.0]) if initial_schedule is None else initial_schedule
    if not isinstance(sched, Schedule):
        sched = Schedule(sched)
    return RoundPlan(1, int(N1), sched)


def _round_loop(run_one, target, rounds, N1, workers, initial_schedule, memory_cap, mode):
    if int(rounds) < 1:
        raise ValueError("rounds must be >= 1")
    plan = _first_plan(N1, workers, initial_schedule)
    for k in range(1, int(rounds) + 1):
        report = run_one(plan)
        yield k, report, plan.schedule
        if k == rounds:
            break
        est = barrier_estimate(report.increment_stats, plan.schedule)
        N2, T2 = budget(plan.N, plan.T, memory_cap, mode, target.dim)
        plan = RoundPlan(k + 1, N2, generate_schedule(est, T2))


def run_ssmc(target, kernel, policy=None, rounds=1, seed=0, *, N1=None, workers=1,
             memory_cap=None, initial_schedule=None):
    """Sequential SMC: ``rounds`` runs of :func:`run_smc` with adapted schedules.

    See :func:`iter_ssmc` for the parameters; this collects its rounds.
    """
    return list(iter_ssmc(target, kernel, policy, rounds, seed, N1=N1, workers=workers,
                          memory_cap=memory_cap, initial_schedule=initial_schedule))


def iter_ssmc(target, kernel, policy=None, rounds=1, seed=0, *, N1=None, workers=1,
              memory_cap=None, initial_schedule=None):
    """Yield the rounds of sequential SMC as they finish.

    Parameters
    ----------
    N1 : int, optional
        Particles in round 1 (default: the worker count).
    initial_schedule : Schedule, optional
        Round-1 schedule, default the one-step grid ``(0, 1)``.

    Yields
    ------
    (int, RunReport, Schedule)
        Round index (from 1), its report and the schedule it ran.
    """
    policy = ResamplingPolicy.adaptive_ess() if policy is None else policy

    def one(plan):
        return run_smc(target, kernel, plan.schedule, plan.N, policy, seed,
                       round=plan.round, workers=workers)

    return _round_loop(one, target, rounds, N1, workers, initial_schedule, memory_cap, "ssmc")


class SaisAccumulator:
    """Streaming statistics of a resampling-free round.

    ``moments[t]`` holds ``log sum_n w_{t-1} g_t^i`` for ``i = 0, 1, 2``; row 0
    is the trivial step (all three equal ``log n``).  ``diagnostics[t-1]``
    holds the ESS and ELBO ingredients of step ``t``.  Nothing here grows
    with the number of particles.
    """

    def __init__(self, T):
        self.T = int(T)
        self.n = 0
        self.moments = np.full((self.T + 1, 3), -np.inf)
        # log sum (w g)^2, ELBO mean, top two log-weights
        self.diagnostics = np.tile(_empty_partials()[3:], (self.T, 1))

    @property
    def adaptation_storage(self) -> int:
        """Scalars needed for schedule adaptation: ``3 (T + 1)``."""
        return self.moments.size

    @property
    def storage(self) -> int:
        return self.moments.size + self.diagnostics.size + 1

    def _row(self, t):
        return np.concatenate([self.moments[t], self.diagnostics[t - 1]])

    def fold(self, partials, n):
        """Add a block's per-step partials (shape ``(T, 7)``) holding ``n`` particles."""
        for t in range(1, self.T + 1):
            red = _fold(self._row(t), partials[t - 1])
            self.moments[t] = red[:3]
            self.diagnostics[t - 1] = red[3:]
        self.n += int(n)
        self.moments[0] = math.log(self.n)

    def reduced(self, t):
        return self._row(t)


def _sais_block(target, kernel, betas, seed, round, s, e):
    x = _init_block(target, seed, round, s, e)
    lw = np.zeros(e - s)
    T = len(betas) - 1
    parts = np.empty((T, _NPART))
    idx = np.arange(s, e)
    for t in range(1, T + 1):
        lg = np.asarray(kernel.log_weight(target, betas[t - 1], betas[t], x), dtype=float)
        parts[t - 1] = _block_partials(lw, lg)
        lw = lw + lg
        x = kernel.move(target, betas[t], x, seed, round, idx, t)
    return parts


def _chunks(N, chunk):
    return [(s, min(s + chunk, N)) for s in range(0, N, chunk)]


def sais_round(target, kernel, schedule, N, seed=0, *, round=0, workers=1, chunk=None) -> RunReport:
    """One resampling-free round with particles as the outer loop.

    Particles are processed in chunks of ``chunk`` (rounded up to a multiple
    of the reduction block); each chunk runs all ``T`` steps and returns
    per-block partials that are folded in particle order.  The report equals
    ``run_smc(..., policy=never)`` bit for bit.
    """
    if not isinstance(schedule, Schedule):
        schedule = Schedule(schedule)
    N = int(N)
    if N < 1:
        raise ValueError("N must be >= 1")
    kernel.check(target)
    betas = schedule.betas
    T = schedule.T
    workers = max(1, int(workers or 1))
    if chunk is None:
        chunk = 8 * workers
    chunk = BLOCK * max(1, -(-int(chunk) // BLOCK))
    acc = SaisAccumulator(T)

    def work(c):
        s, e = c
        return [(b, min(b + BLOCK, e), _sais_block(target, kernel, betas, seed, round, b, min(b + BLOCK, e)))
                for b in range(s, e, BLOCK)]

    chunks = _chunks(N, chunk)
    with _pool(workers) as pool:
        # Waves of `workers` chunks keep at most that many partial sets alive.
        for w in range(0, len(chunks), workers):
            wave = chunks[w:w + workers]
            results = map(work, wave) if pool is None else pool.map(work, wave)
            for blocks in results:
                for s, e, parts in blocks:
                    acc.fold(parts, e - s)

    out = _Accumulator(N)
    for t in range(1, T + 1):
        out.record(t, acc.reduced(t))
        out.finish_step(t, t == T)
    report = out.report(schedule, round, N * T)
    report.accumulator = acc
    return report


def run_sais(target, kernel, rounds=1, seed=0, chunk=None, *, N1=None, workers=1,
             initial_schedule=None):
    """Sequential AIS: SSMC without resampling, using :func:`sais_round`.

    Returns
    -------
    list of (int, RunReport, Schedule)
    """
    return list(iter_sais(target, kernel, rounds, seed, chunk, N1=N1, workers=workers,
                          initial_schedule=initial_schedule))


def iter_sais(target, kernel, rounds=1, seed=0, chunk=None, *, N1=None, workers=1,
              initial_schedule=None):
    """Yield the rounds of :func:`run_sais` as they finish."""

    def one(plan):
        return sais_round(target, kernel, plan.schedule, plan.N, seed,
                          round=plan.round, workers=workers, chunk=chunk)

    return _round_loop(one, target, rounds, N1, workers, initial_schedule, None, "sais")


def run_zja(target, kernel, N, threshold, seed=0, policy=None, *, round=0, workers=1,
            max_steps=100_000) -> RunReport:
    """SMC whose next ``beta`` is chosen online at constant conditional ESS.

    Each step picks ``beta_t`` by :func:`~anneal_smc.schedule.zja_next_beta`
    with the current particles, then weighs, maybe resamples and moves as in
    :func:`run_smc`.  The realised grid is the report's schedule.  If the
    root search ever met a non-monotone objective the report's ``flags``
    contain ``"non_monotone"``.
    """
    policy = ResamplingPolicy.never() if policy is None else policy
    if policy.variant == "stabilized" and not isinstance(policy.discrepancy, str):
        raise ValueError("explicit discrepancy sequences need a fixed schedule")
    acc = _Accumulator(int(N))
    betas = [0.0]
    flags = set()
    with _pool(workers) as pool:
        state = SMCState(target, kernel, N, seed, round, pool)
        since = 0.0
        t = 0
        while betas[-1] < 1.0:
            t += 1
            if t > max_steps:
                raise RuntimeError(f"online schedule exceeded {max_steps} steps")
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", NonMonotoneWarning)
                b = zja_next_beta(target, kernel, betas[-1], state.x, threshold, state.log_weights)
            if any(issubclass(w.category, NonMonotoneWarning) for w in caught):
                flags.add("non_monotone")
            betas.append(b)
            red = state.weigh(betas[-2], b)
            acc.record(t, red)
            if policy.variant == "stabilized":
                d_hat = float(discrepancy_from_moments(red[0], red[1], red[2]))
                since += policy.step_discrepancy(target, betas, t, d_hat)
            fire = decide_resample(policy, t, accumulated=since, ess_value=acc.ess[-1], n=state.N)
            acc.finish_step(t, fire or b >= 1.0)
            if fire:
                state.resample()
                since = 0.0
            state.move(b)
    return acc.report(Schedule(betas), round, state.kernel_applications, sorted(flags))
