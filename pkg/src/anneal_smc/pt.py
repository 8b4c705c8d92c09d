"""Non-reversible parallel tempering with stepping-stone estimation.

Levels ``0..L`` follow the annealing schedule; level 0 is refreshed by exact
reference draws every iteration, the others by the forward kernel at their
own ``beta``.  Swaps alternate deterministically between even pairs
``(0,1), (2,3), ...`` on even iterations and odd pairs ``(1,2), (3,4), ...``
on odd iterations.

A state may hold several independent replicas of the whole ladder; they
share nothing but the schedule, and their draws are keyed by distinct
particle slots, which lets many seeds-worth of chains run vectorised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .rng import RngKey, Substep
from .schedule import Schedule

__all__ = [
    "PtResult",
    "PtState",
    "init_pt",
    "lambda_pt_estimate",
    "local_barrier_estimate",
    "pt_step",
    "run_pt",
    "stepping_stone",
]

NOT_ATTEMPTED = -1


@dataclass
class PtState:
    """Chain states of ``replicas`` independent tempering ladders.

    Attributes
    ----------
    chains : ndarray, shape (replicas, L + 1, dim)
        ``chains[r, n]`` is the state at level ``n`` of replica ``r``.
    schedule : Schedule
        ``L + 1`` annealing parameters, level ``n`` at ``betas[n]``.
    iteration : int
        Completed iterations; its parity selects the swap pairs.
    permutation : ndarray of int, shape (replicas, L + 1)
        Which original chain currently sits at each level.
    potentials : ndarray, shape (replicas, L + 1), optional
        ``V`` at each level after the last iteration.
    """

    chains: np.ndarray
    schedule: Schedule
    iteration: int = 0
    permutation: np.ndarray = None
    potentials: np.ndarray = None

    def __post_init__(self):
        if self.permutation is None:
            r, n = self.chains.shape[:2]
            self.permutation = np.tile(np.arange(n), (r, 1))

    @property
    def levels(self) -> int:
        return self.chains.shape[1]

    @property
    def replicas(self) -> int:
        return self.chains.shape[0]

    @property
    def parity(self) -> int:
        return self.iteration % 2


def _slots(replicas, levels, n):
    return np.arange(replicas) * levels + n


def init_pt(target, schedule, seed, replicas=1, round=0) -> PtState:
    """Every level starts from an exact reference draw."""
    if not isinstance(schedule, Schedule):
        schedule = Schedule(schedule)
    L1 = len(schedule.betas)
    idx = np.arange(replicas * L1)
    x = np.atleast_2d(target.sample_reference(seed, round, idx, 0, Substep.INIT))
    return PtState(x.reshape(replicas, L1, target.dim).copy(), schedule)


def pt_step(state: PtState, target, kernel, key: RngKey):
    """One exploration sweep followed by one round of alternating swaps.

    ``key`` supplies the seed and round; the step field is ignored in favour
    of the state's iteration counter so that successive calls draw fresh
    randomness.

    Returns
    -------
    state : PtState
        New state (the input is left untouched).
    swaps : ndarray of int, shape (replicas, L + 1)
        ``swaps[r, n]`` is 1/0 if the swap between levels ``n - 1`` and
        ``n`` was accepted/rejected and -1 if it was not attempted.
    """
    R, L1, dim = state.chains.shape
    betas = state.schedule.betas
    step = state.iteration + 1
    seed, rnd = key.seed, key.round
    y = np.empty_like(state.chains)
    y[:, 0] = np.atleast_2d(target.sample_reference(seed, rnd, _slots(R, L1, 0), step, Substep.INIT))
    for n in range(1, L1):
        y[:, n] = kernel.move(target, betas[n], state.chains[:, n], seed, rnd, _slots(R, L1, n), step)
    V = target.potential(y.reshape(-1, dim)).reshape(R, L1)
    perm = state.permutation.copy()
    swaps = np.full((R, L1), NOT_ATTEMPTED, dtype=int)
    for n in range(1 + state.parity, L1, 2):
        # Pair (n-1, n); the ratio reduces to (beta_n - beta_{n-1}) (V^{n-1} - V^n).
        with np.errstate(invalid="ignore"):
            log_a = (betas[n] - betas[n - 1]) * (V[:, n - 1] - V[:, n])
        log_a = np.where(np.isnan(log_a), 0.0, log_a)
        u = _rng.uniforms(seed, rnd, _slots(R, L1, n), step, Substep.SWAP, 1)[:, 0]
        ok = np.log(u) < log_a
        swaps[:, n] = ok
        lo, hi = y[ok, n - 1].copy(), y[ok, n].copy()
        y[ok, n - 1], y[ok, n] = hi, lo
        V[ok, n - 1], V[ok, n] = V[ok, n], V[ok, n - 1]
        perm[ok, n - 1], perm[ok, n] = perm[ok, n], perm[ok, n - 1]
    return PtState(y, state.schedule, state.iteration + 1, perm, V), swaps


@dataclass
class PtResult:
    """Traces of a tempering run.

    ``V[t, r, n]`` is the potential at level ``n`` of replica ``r`` after
    iteration ``t + 1``; ``swaps`` has the same layout (see :func:`pt_step`).
    """

    V: np.ndarray
    swaps: np.ndarray
    schedule: Schedule
    state: PtState
    burn_in: int

    @property
    def log_Z_hat(self):
        """Stepping-stone estimate per replica (after burn-in)."""
        return stepping_stone(self.V, self.schedule, self.burn_in)

    def swap_rates(self):
        """Acceptance rate of each pair ``(n - 1, n)``, pooled over replicas."""
        s = self.swaps[:, :, 1:]
        tried = s >= 0
        return np.where(tried.sum(axis=(0, 1)) > 0,
                        (s == 1).sum(axis=(0, 1)) / np.maximum(tried.sum(axis=(0, 1)), 1), np.nan)


def _burn(iterations, burn_in):
    if burn_in is None:
        burn_in = 0.1
    if isinstance(burn_in, float):
        if not 0.0 <= burn_in < 1.0:
            raise ValueError("fractional burn-in must lie in [0, 1)")
        return int(math.floor(burn_in * iterations))
    b = int(burn_in)
    if not 0 <= b < iterations:
        raise ValueError("burn-in must leave at least one iteration")
    return b


def run_pt(target, kernel, schedule, iterations, seed=0, *, replicas=1, round=0,
           burn_in=0.1) -> PtResult:
    """Run ``iterations`` tempering iterations.

    Parameters
    ----------
    burn_in : float or int
        Fraction of iterations (float) or count (int) discarded by the
        stepping-stone estimate.  Defaults to 10%.
    """
    if not isinstance(schedule, Schedule):
        schedule = Schedule(schedule)
    kernel.check(target)
    iterations = int(iterations)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    b = _burn(iterations, burn_in)
    state = init_pt(target, schedule, seed, replicas, round)
    key = RngKey(int(seed), int(round))
    L1 = len(schedule.betas)
    V = np.empty((iterations, replicas, L1))
    swaps = np.empty((iterations, replicas, L1), dtype=np.int8)
    for t in range(iterations):
        state, s = pt_step(state, target, kernel, key)
        V[t] = state.potentials
        swaps[t] = s
    return PtResult(V, swaps, schedule, state, b)


def stepping_stone(V, schedule, burn_in=0):
    """Stepping-stone ``log Z`` from potentials recorded at every level.

    ``log Z = sum_n [logsumexp_t (beta_n - beta_{n-1}) V_t^{n-1} - log T']``
    over the ``T'`` iterations kept after ``burn_in``.  Only the lower level
    of each pair enters, and the ratio uses the linear-path identity
    ``log gamma_{beta'} - log gamma_beta = (beta' - beta) V``.

    Parameters
    ----------
    V : ndarray, shape (T', L + 1) or (T', replicas, L + 1)
    schedule : Schedule or sequence of float
    burn_in : int
        Leading iterations to drop.

    Returns
    -------
    float or ndarray
        One estimate per replica when ``V`` is three-dimensional.
    """
    betas = np.asarray(schedule.betas if isinstance(schedule, Schedule) else schedule, dtype=float)
    V = np.asarray(V, dtype=float)
    single = V.ndim == 2
    if single:
        V = V[:, None, :]
    V = V[int(burn_in):]
    if V.shape[0] < 1:
        raise ValueError("no iterations left after burn-in")
    db = np.diff(betas)
    x = db[None, None, :] * V[:, :, :-1]
    m = np.max(x, axis=0)
    lse = m + np.log(np.sum(np.exp(x - m), axis=0))
    out = np.sum(lse - math.log(V.shape[0]), axis=-1)
    return float(out[0]) if single else out


def _exact_potentials(target, beta, samples, key: RngKey):
    idx = np.arange(key.particle, key.particle + 2 * int(samples))
    if beta == 0.0:
        x = target.sample_reference(key.seed, key.round, idx, key.step, Substep.PAIR)
    else:
        x = target.exact_sample(beta, key.seed, key.round, idx, key.step, Substep.PAIR)
    return target.potential(x)


def lambda_pt_estimate(target, beta, samples, key: RngKey, return_se=False):
    """Tempering barrier density ``0.5 E|V(Y) - V(Y')|`` from iid exact pairs.

    Returns the estimate, or ``(estimate, standard_error)``.
    """
    v = _exact_potentials(target, beta, samples, key)
    d = 0.5 * np.abs(v[0::2] - v[1::2])
    est = float(np.mean(d))
    if not return_se:
        return est
    return est, float(np.std(d, ddof=1) / math.sqrt(len(d)))


def local_barrier_estimate(target, beta, samples, key: RngKey, return_se=False):
    """Local barrier ``sd_{pi_beta}[V]`` from ``2 * samples`` exact draws.

    The standard error uses the delta method on the sample variance.
    """
    v = _exact_potentials(target, beta, samples, key)
    n = len(v)
    var = float(np.var(v, ddof=1))
    est = math.sqrt(var)
    if not return_se:
        return est
    c = v - v.mean()
    m4 = float(np.mean(c**4))
    var_of_var = max(m4 - var * var * (n - 3) / (n - 1), 0.0) / n
    se = math.sqrt(var_of_var) / (2.0 * est) if est > 0 else 0.0
    return est, se
