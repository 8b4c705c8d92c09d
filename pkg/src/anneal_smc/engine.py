"""Annealed SMC engine: propagate, reweigh, accumulate moments, resample.

Within step ``t`` the engine

1. evaluates the MCMC increment ``log g_t = log gamma_{beta_t}(X_{t-1}) -
   log gamma_{beta_{t-1}}(X_{t-1})`` for every particle,
2. reduces the log-moments ``log sum_n w_{t-1} g_t^i`` (i = 0, 1, 2) plus the
   ESS and ELBO ingredients over fixed particle blocks,
3. decides whether to resample and, if so, folds the normalising-constant
   factor into ``log Z`` and selects ancestors (at ``t = T`` the factor is
   always folded in, whatever the policy says),
4. moves every particle with the kernel targeting ``pi_{beta_t}``.

With MCMC weights the increment does not depend on the moved state, so
moving after ancestor selection gives the same estimator while keeping
duplicated ancestors conditionally independent after the move.

Every reduction runs over blocks of :data:`BLOCK` consecutive particles and
folds the block partials in block order, so the floating-point result does not
depend on the number of workers or on whether steps or particles form the
outer loop.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .rng import RngKey, Substep
from .schedule import Schedule, discrepancy_from_moments

__all__ = [
    "BLOCK",
    "DegenerateWeightsError",
    "IncrementStats",
    "ResamplingPolicy",
    "RunReport",
    "decide_resample",
    "elbo_estimate",
    "ess",
    "run_smc",
    "systematic_resample",
    "weighted_mean",
]

BLOCK = 1024
"""Particles per reduction block (fixed, so summation order is fixed)."""

_DEGENERATE_ESS = 1.0 + 1e-9
_DEGENERATE_GAP = 700.0
_NEG_INF = -np.inf


class DegenerateWeightsError(ArithmeticError):
    """All but one (or every) particle weight vanished.

    Attributes
    ----------
    step : int or None
        Annealing step at which the weights collapsed.
    max_log_weight : float
    """

    def __init__(self, step, max_log_weight, detail=""):
        self.step = step
        self.max_log_weight = max_log_weight
        where = "" if step is None else f" at step {step}"
        msg = f"degenerate weights{where} (max log-weight {max_log_weight!r})"
        super().__init__(msg + (f": {detail}" if detail else ""))


def _lse(a) -> float:
    m = np.max(a)
    if m == _NEG_INF:
        return _NEG_INF
    return float(m + np.log(np.sum(np.exp(a - m))))


def ess(log_weights) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2`` from log-weights."""
    lw = np.asarray(log_weights, dtype=float).ravel()
    if lw.size == 0 or np.max(lw) == _NEG_INF:
        raise DegenerateWeightsError(None, _NEG_INF, "all weights are zero")
    value = math.exp(2.0 * _lse(lw) - _lse(2.0 * lw))
    return min(max(value, 1.0), float(lw.size))


def weighted_mean(log_weights, values):
    """Self-normalised weighted mean of ``values`` (rows are particles)."""
    lw = np.asarray(log_weights, dtype=float)
    w = np.exp(lw - _lse(lw))
    return np.tensordot(w, np.asarray(values, dtype=float), axes=(0, 0))


def systematic_resample(log_weights, key: RngKey) -> np.ndarray:
    """Systematic resampling with one uniform offset drawn from ``key``.

    Returns
    -------
    ndarray of int
        ``N`` ancestor indices in non-decreasing order.
    """
    lw = np.asarray(log_weights, dtype=float).ravel()
    n = lw.size
    total = _lse(lw) if n else _NEG_INF
    if not np.isfinite(total):
        raise DegenerateWeightsError(key.step, total, "cannot resample")
    cdf = np.cumsum(np.exp(lw - total))
    cdf[-1] = 1.0
    u = _rng.uniforms(key.seed, key.round, [key.particle], key.step, key.substep, 1)[0, 0]
    positions = (u + np.arange(n)) / n
    return np.minimum(np.searchsorted(cdf, positions, side="right"), n - 1)


@dataclass(frozen=True)
class ResamplingPolicy:
    """When to resample.

    Parameters
    ----------
    variant : {"never", "always", "adaptive_ess", "stabilized"}
    rho : float
        Threshold in ``[0, 1]``.  ``adaptive_ess`` resamples when
        ``ESS < rho N``; ``stabilized`` when the discrepancy accumulated since
        the last resampling exceeds ``-log rho``.
    discrepancy : "estimated", "analytic" or sequence of float
        Per-step discrepancy fed to ``stabilized``: the online estimate, the
        target's ``analytic_delta(beta) * dbeta**2``, or explicit values.
    """

    variant: str = "never"
    rho: float = 0.5
    discrepancy: object = "estimated"

    _VARIANTS = ("never", "always", "adaptive_ess", "stabilized")

    def __post_init__(self):
        if self.variant not in self._VARIANTS:
            raise ValueError(f"unknown resampling policy {self.variant!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho!r}")
        d = self.discrepancy
        if isinstance(d, str):
            if d not in ("estimated", "analytic"):
                raise ValueError(f"unknown discrepancy source {d!r}")
        else:
            object.__setattr__(self, "discrepancy", tuple(float(v) for v in d))

    @classmethod
    def never(cls):
        return cls("never")

    @classmethod
    def always(cls):
        return cls("always")

    @classmethod
    def adaptive_ess(cls, rho=0.5):
        return cls("adaptive_ess", rho)

    @classmethod
    def stabilized(cls, rho=0.5, discrepancy="estimated"):
        return cls("stabilized", rho, discrepancy)

    @property
    def threshold(self) -> float:
        """``-log rho`` (infinite for ``rho = 0``)."""
        return math.inf if self.rho == 0.0 else -math.log(self.rho)

    def step_discrepancy(self, target, betas, t, d_hat):
        if self.discrepancy == "estimated":
            return d_hat
        if self.discrepancy == "analytic":
            db = betas[t] - betas[t - 1]
            return float(target.analytic_delta(betas[t - 1])) * db * db
        return self.discrepancy[t - 1]


def decide_resample(policy: ResamplingPolicy, t, log_weights=None, accumulated=0.0,
                    *, ess_value=None, n=None) -> bool:
    """Policy decision at step ``t`` from the current weights.

    ``never`` always answers False; the final estimator update at ``t = T``
    is the engine's job, not the policy's.  ``ess_value`` and ``n`` may be
    passed instead of ``log_weights``.
    """
    v = policy.variant
    if v == "never":
        return False
    if v == "always":
        return True
    if v == "adaptive_ess":
        if ess_value is None:
            ess_value = ess(log_weights)
        if n is None:
            n = np.size(log_weights)
        return ess_value < policy.rho * n
    thr = policy.threshold
    # Guard against rounding when the accumulated sum lands on the threshold.
    return accumulated > thr + 1e-12 * max(1.0, thr)


@dataclass(frozen=True)
class IncrementStats:
    """Per-step log-moments ``log sum_n w_{t-1} g_t^i`` for ``i = 0, 1, 2``.

    Entry ``t - 1`` belongs to step ``t``.
    """

    log_g0: np.ndarray
    log_g1: np.ndarray
    log_g2: np.ndarray

    @property
    def T(self) -> int:
        return len(self.log_g0)

    def d_hat(self) -> np.ndarray:
        return discrepancy_from_moments(self.log_g0, self.log_g1, self.log_g2)


@dataclass
class RunReport:
    """Outcome of one SMC (or SAIS) round."""

    log_Z_hat: float
    elbo_hat: float
    increment_stats: IncrementStats
    resample_times: list
    ess_trace: np.ndarray
    schedule: Schedule
    N: int
    round: int = 0
    kernel_applications: int = 0
    cum_log_Z: np.ndarray = None
    elbo_terms: np.ndarray = None
    flags: list = field(default_factory=list)
    accumulator: object = None

    @property
    def T(self) -> int:
        return self.schedule.T

    @property
    def resampled(self) -> np.ndarray:
        out = np.zeros(self.T, dtype=bool)
        out[np.asarray(self.resample_times, dtype=int) - 1] = True
        return out

    @property
    def d_hat(self) -> np.ndarray:
        return self.increment_stats.d_hat()


def elbo_estimate(report: RunReport) -> float:
    """Accumulated ``sum_t sum_n W_{t-1}^n log g_t^n`` of a finished run."""
    return report.elbo_hat


# ---------------------------------------------------------------------------
# Block-level kernels shared by every driver.

# Partials per block and step: log sum w, log sum w g, log sum w g^2,
# log sum (w g)^2, weighted mean of log g, top two of log(w g).
_NPART = 7


def _empty_partials():
    return np.array([_NEG_INF] * 4 + [0.0, _NEG_INF, _NEG_INF])


def _block_partials(lw, lg):
    new = lw + lg
    out = np.empty(_NPART)
    out[0] = _lse(lw)
    out[1] = _lse(new)
    out[2] = _lse(new + lg)
    out[3] = _lse(2.0 * new)
    if out[0] == _NEG_INF:
        out[4] = 0.0
    else:
        w = np.exp(lw - out[0])
        live = w > 0
        out[4] = np.sum(w[live] * lg[live])
    if new.size >= 2:
        top = np.partition(new, new.size - 2)[-2:]
        out[5], out[6] = top[1], top[0]
    else:
        out[5], out[6] = new[0], _NEG_INF
    return out


def _fold(acc, part):
    """Combine two partial arrays; used in block order only."""
    out = np.empty(_NPART)
    out[:4] = np.logaddexp(acc[:4], part[:4])
    if out[0] == _NEG_INF:
        out[4] = 0.0
    else:
        m = 0.0
        if acc[0] != _NEG_INF:
            m += acc[4] * math.exp(acc[0] - out[0])
        if part[0] != _NEG_INF:
            m += part[4] * math.exp(part[0] - out[0])
        out[4] = m
    a, b = acc[5:7], part[5:7]
    if a[0] >= b[0]:
        out[5], out[6] = a[0], max(a[1], b[0])
    else:
        out[5], out[6] = b[0], max(b[1], a[0])
    return out


def _fold_all(parts):
    acc = _empty_partials()
    for p in parts:
        acc = _fold(acc, p)
    return acc


def _blocks(n, start=0):
    return [(s, min(s + BLOCK, start + n)) for s in range(start, start + n, BLOCK)]


def _check_degenerate(t, red, n):
    if red[1] == _NEG_INF:
        raise DegenerateWeightsError(t, red[5], "every weight is zero")
    ess_t = math.exp(2.0 * red[1] - red[3])
    # A lone particle cannot collapse onto itself.
    if n > 1 and ess_t < _DEGENERATE_ESS and red[5] - red[6] > _DEGENERATE_GAP:
        raise DegenerateWeightsError(t, red[5], "a single particle carries all weight")
    return ess_t


@contextmanager
def _pool(workers):
    if workers is None or workers <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=int(workers)) as ex:
        yield ex


def _map(pool, fn, items):
    if pool is None:
        return [fn(i) for i in items]
    return list(pool.map(fn, items))


def _init_block(target, seed, round, s, e):
    return np.atleast_2d(target.sample_reference(seed, round, np.arange(s, e), 0, Substep.INIT))


# ---------------------------------------------------------------------------
# Step-wise SMC.

class SMCState:
    """Particle system advanced one annealing step at a time.

    Used by :func:`run_smc` and by drivers that pick ``beta_t`` online.
    """

    def __init__(self, target, kernel, N, seed, round=0, pool=None):
        if int(N) < 1:
            raise ValueError("N must be >= 1")
        kernel.check(target)
        self.target, self.kernel = target, kernel
        self.N, self.seed, self.round = int(N), int(seed), int(round)
        self.pool = pool
        self.blocks = _blocks(self.N)
        parts = _map(pool, lambda b: _init_block(target, self.seed, self.round, *b), self.blocks)
        self.x = np.concatenate(parts, axis=0)
        self.log_weights = np.zeros(self.N)
        self.t = 0
        self.log_Z = 0.0
        self.kernel_applications = 0

    def weigh(self, beta, beta2):
        """Increment weights for ``beta -> beta2``; returns the reduced partials."""
        x, lw, target, kernel = self.x, self.log_weights, self.target, self.kernel

        def work(b):
            s, e = b
            lg = np.asarray(kernel.log_weight(target, beta, beta2, x[s:e]), dtype=float)
            return lg, _block_partials(lw[s:e], lg)

        out = _map(self.pool, work, self.blocks)
        self.t += 1
        self.log_weights = lw + np.concatenate([o[0] for o in out])
        return _fold_all(o[1] for o in out)

    def resample(self):
        key = RngKey(self.seed, self.round, 0, self.t, Substep.RESAMPLE)
        anc = systematic_resample(self.log_weights, key)
        self.x = self.x[anc]
        self.log_weights = np.zeros(self.N)

    def move(self, beta2):
        x, target, kernel = self.x, self.target, self.kernel
        seed, rnd, t = self.seed, self.round, self.t

        def work(b):
            s, e = b
            return kernel.move(target, beta2, x[s:e], seed, rnd, np.arange(s, e), t)

        self.x = np.concatenate(_map(self.pool, work, self.blocks), axis=0)
        self.kernel_applications += self.N


class _Accumulator:
    """Collects the reduced per-step quantities into a :class:`RunReport`."""

    def __init__(self, N):
        self.N = N
        self.red = []
        self.ess = []
        self.cum = []
        self.resample_times = []
        self.log_Z = 0.0
        self.log_n = math.log(N)

    def record(self, t, red):
        self.red.append(red)
        self.ess.append(min(max(_check_degenerate(t, red, self.N), 1.0), float(self.N)))

    def finish_step(self, t, resampled):
        if resampled:
            self.log_Z += self.red[t - 1][1] - self.log_n
            self.resample_times.append(t)
        self.cum.append(self.log_Z)

    def report(self, schedule, round, kernel_applications, flags=()):
        red = np.array(self.red).reshape(-1, _NPART)
        stats = IncrementStats(red[:, 0].copy(), red[:, 1].copy(), red[:, 2].copy())
        elbo_terms = red[:, 4].copy()
        elbo = 0.0
        for v in elbo_terms:
            elbo += v
        return RunReport(
            log_Z_hat=float(self.log_Z),
            elbo_hat=float(elbo),
            increment_stats=stats,
            resample_times=list(self.resample_times),
            ess_trace=np.array(self.ess),
            schedule=schedule,
            N=self.N,
            round=round,
            kernel_applications=kernel_applications,
            cum_log_Z=np.array(self.cum),
            elbo_terms=elbo_terms,
            flags=list(flags),
        )


def run_smc(target, kernel, schedule, N, policy=None, seed=0, *, round=0, workers=1) -> RunReport:
    """Run annealed SMC over a fixed schedule.

    Parameters
    ----------
    target : LinearPath
    kernel : ForwardKernel
    schedule : Schedule or sequence of float
    N : int
        Number of particles.
    policy : ResamplingPolicy, optional
        Defaults to adaptive ESS resampling with ``rho = 0.5``.
    seed : int
    round : int
        Round index used for random-number keying.
    workers : int
        Threads used for weight evaluation and propagation.  Results do not
        depend on this value.

    Returns
    -------
    RunReport

    Raises
    ------
    DegenerateWeightsError
        If the weights collapse onto a single particle (or all vanish).
    """
    if not isinstance(schedule, Schedule):
        schedule = Schedule(schedule)
    policy = ResamplingPolicy.adaptive_ess() if policy is None else policy
    betas = schedule.betas
    T = schedule.T
    if not isinstance(policy.discrepancy, str) and len(policy.discrepancy) != T:
        raise ValueError("explicit discrepancy sequence must have one entry per step")
    acc = _Accumulator(int(N))
    with _pool(workers) as pool:
        state = SMCState(target, kernel, N, seed, round, pool)
        since = 0.0
        for t in range(1, T + 1):
            red = state.weigh(betas[t - 1], betas[t])
            acc.record(t, red)
            if policy.variant == "stabilized":
                d_hat = float(discrepancy_from_moments(red[0], red[1], red[2]))
                since += policy.step_discrepancy(target, betas, t, d_hat)
            fire = decide_resample(policy, t, accumulated=since,
                                   ess_value=acc.ess[-1], n=state.N)
            acc.finish_step(t, fire or t == T)
            if fire:
                state.resample()
                since = 0.0
            state.move(betas[t])
    return acc.report(schedule, round, state.kernel_applications)
