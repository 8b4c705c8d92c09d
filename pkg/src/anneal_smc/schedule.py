"""Annealing schedules, discrepancy and barrier estimates, schedule generation.

The per-step discrepancy is estimated from the three log-moments of the
incremental weights collected by the engine,

    D_t = log g2 - 2 log g1 + log g0 = log N - log CESS_t,

and the cumulative barrier ``Lambda_t = sum_{s<=t} sqrt(D_s)`` is inverted by
a monotone cubic to place the next round's grid at equal barrier spacing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .monotone import MonotoneCubic

__all__ = [
    "Schedule",
    "BarrierEstimate",
    "NonMonotoneWarning",
    "discrepancy_from_moments",
    "discrepancy_hat",
    "cess",
    "barrier_estimate",
    "generate_schedule",
    "local_barrier",
    "zja_next_beta",
]


class Schedule:
    """Strictly increasing grid ``0 = beta_0 < ... < beta_T = 1``."""

    __slots__ = ("betas",)

    def __init__(self, betas):
        b = np.array(betas, dtype=float)
        if b.ndim != 1 or len(b) < 2:
            raise ValueError("a schedule needs at least the two endpoints")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError(f"schedule must start at 0 and end at 1, got {b[0]!r} .. {b[-1]!r}")
        if np.any(np.diff(b) <= 0):
            raise ValueError("schedule must be strictly increasing")
        b.setflags(write=False)
        self.betas = b

    @classmethod
    def uniform(cls, T: int) -> "Schedule":
        if int(T) < 1:
            raise ValueError("T must be >= 1")
        b = np.linspace(0.0, 1.0, int(T) + 1)
        b[-1] = 1.0
        return cls(b)

    @property
    def T(self) -> int:
        return len(self.betas) - 1

    def __len__(self):
        return len(self.betas)

    def __iter__(self):
        return iter(self.betas)

    def __getitem__(self, i):
        return self.betas[i]

    def __eq__(self, other):
        return isinstance(other, Schedule) and np.array_equal(self.betas, other.betas)

    def __repr__(self):
        return f"Schedule(T={self.T})"


def discrepancy_from_moments(log_g0, log_g1, log_g2):
    """Clamped ``log g2 - 2 log g1 + log g0`` (vectorised)."""
    lg0, lg1, lg2 = (np.asarray(v, dtype=float) for v in (log_g0, log_g1, log_g2))
    if not (np.all(np.isfinite(lg0)) and np.all(np.isfinite(lg1)) and np.all(np.isfinite(lg2))):
        raise ValueError("non-finite increment moments; discrepancy is undefined")
    return np.maximum(0.0, lg2 - 2.0 * lg1 + lg0)


def _moments_at(stats, t):
    if not 1 <= t <= len(stats.log_g0):
        raise IndexError(f"step {t} outside [1, {len(stats.log_g0)}]")
    return stats.log_g0[t - 1], stats.log_g1[t - 1], stats.log_g2[t - 1]


def discrepancy_hat(stats, t: int) -> float:
    """Estimated discrepancy of step ``t`` (1-based), clamped at zero."""
    return float(discrepancy_from_moments(*_moments_at(stats, t)))


def cess(stats, t: int, N: int) -> float:
    """Conditional ESS ``N g1^2 / (g2 g0)`` of step ``t``.

    Not clamped, so ``log N - log cess`` equals the unclamped discrepancy.
    """
    lg0, lg1, lg2 = _moments_at(stats, t)
    if not np.all(np.isfinite([lg0, lg1, lg2])):
        raise ValueError("non-finite increment moments; CESS is undefined")
    return float(np.exp(np.log(N) + 2.0 * lg1 - lg2 - lg0))


@dataclass(frozen=True)
class BarrierEstimate:
    """Cumulative barrier ``Lambda_t`` at each schedule point.

    Attributes
    ----------
    Lambda : ndarray, shape (T+1,)
        ``Lambda[0] = 0`` and non-decreasing.
    betas : ndarray, shape (T+1,)
    d_hat : ndarray, shape (T,)
        Clamped per-step discrepancies.
    """

    Lambda: np.ndarray
    betas: np.ndarray
    d_hat: np.ndarray

    @property
    def total(self) -> float:
        return float(self.Lambda[-1])

    @property
    def knots(self):
        return list(zip(self.Lambda.tolist(), self.betas.tolist()))

    @classmethod
    def from_discrepancies(cls, d_hat, betas) -> "BarrierEstimate":
        d = np.maximum(0.0, np.asarray(d_hat, dtype=float))
        lam = np.concatenate([[0.0], np.cumsum(np.sqrt(d))])
        return cls(lam, np.asarray(betas, dtype=float), d)

    def interpolant(self):
        """Monotone cubic ``beta(Lambda)``, or None if the barrier is zero."""
        lam, b = _merge_knots(self.Lambda, self.betas)
        if len(lam) < 2:
            return None
        return MonotoneCubic(lam, b)


def barrier_estimate(stats, schedule) -> BarrierEstimate:
    """``Lambda_t = sum_{s<=t} sqrt(D_s)`` over a completed run."""
    betas = np.asarray(schedule.betas if isinstance(schedule, Schedule) else schedule)
    d = discrepancy_from_moments(stats.log_g0, stats.log_g1, stats.log_g2)
    if len(d) != len(betas) - 1:
        raise ValueError("statistics and schedule lengths disagree")
    return BarrierEstimate.from_discrepancies(d, betas)


def _merge_knots(lam, betas):
    # Consecutive equal Lambda values collapse to the one with the largest beta.
    keep = np.append(np.diff(lam) > 0, True)
    return np.asarray(lam)[keep], np.asarray(betas)[keep]


def generate_schedule(estimate: BarrierEstimate, T_new: int) -> Schedule:
    """Schedule with equal barrier increments, ``beta = Lambda^{-1}(Lambda u)``."""
    T_new = int(T_new)
    if T_new < 1:
        raise ValueError("T_new must be >= 1")
    f = estimate.interpolant()
    if f is None or estimate.total <= 0:
        return Schedule.uniform(T_new)
    grid = estimate.total * np.arange(T_new + 1) / T_new
    b = np.clip(f(grid), 0.0, 1.0)
    b[0], b[-1] = 0.0, 1.0
    if np.any(np.diff(b) <= 0):
        # Flat stretches of the inverse (merged knots at the ends) can tie
        # neighbouring points; a vanishing uniform blend restores strictness.
        u = np.linspace(0.0, 1.0, T_new + 1)
        b = (1.0 - 1e-9) * b + 1e-9 * u
        b[0], b[-1] = 0.0, 1.0
    return Schedule(b)


def local_barrier(estimate: BarrierEstimate, betas=None) -> np.ndarray:
    """Local barrier ``lambda(beta) = dLambda/dbeta`` from the fitted cubic.

    Evaluated at the knot betas by default.  Returns zeros when the total
    barrier vanishes.
    """
    pts = estimate.betas if betas is None else np.asarray(betas, dtype=float)
    f = estimate.interpolant()
    if f is None:
        return np.zeros(np.shape(pts))
    if betas is None:
        lam_at = estimate.Lambda
    else:
        lam_at = MonotoneCubic(estimate.betas, estimate.Lambda)(pts)
    with np.errstate(divide="ignore"):
        return 1.0 / f.derivative(lam_at)


class NonMonotoneWarning(RuntimeWarning):
    """The one-step discrepancy was not monotone in the next beta."""


def _log_sum(a):
    m = np.max(a)
    if not np.isfinite(m):
        return m
    return m + np.log(np.sum(np.exp(a - m)))


def _one_step_discrepancy(target, kernel, beta, beta2, x, log_weights):
    lg = kernel.log_weight(target, beta, beta2, x)
    lg0 = _log_sum(log_weights)
    lg1 = _log_sum(log_weights + lg)
    lg2 = _log_sum(log_weights + 2.0 * lg)
    if not np.isfinite(lg2):
        return np.inf
    return max(0.0, lg2 - 2.0 * lg1 + lg0)


def zja_next_beta(target, kernel, beta, particles, threshold, log_weights=None,
                  tol=1e-10, grid=64):
    """Next annealing parameter at a fixed conditional-ESS level.

    Finds the largest ``beta' in (beta, 1]`` whose one-step discrepancy,
    computed by reweighting the current particles, stays at or below
    ``threshold``.  A coarse grid locates the first crossing, then bisection
    refines it to ``tol``.  If the objective is not monotone on the grid a
    :class:`NonMonotoneWarning` is issued and the smallest bracketing root is
    returned.

    Returns
    -------
    float
        Always strictly greater than ``beta``.
    """
    if beta >= 1.0:
        raise ValueError("beta must be < 1")
    x = np.atleast_2d(np.asarray(particles, dtype=float))
    lw = np.zeros(len(x)) if log_weights is None else np.asarray(log_weights, dtype=float)

    def f(b2):
        return _one_step_discrepancy(target, kernel, beta, b2, x, lw)

    if f(1.0) <= threshold:
        return 1.0
    pts = beta + (1.0 - beta) * np.arange(1, grid + 1) / grid
    pts[-1] = 1.0
    vals = np.array([f(p) for p in pts])
    if np.any(np.diff(vals) < -1e-12 * np.maximum(1.0, np.abs(vals[1:]))):
        warnings.warn(
            f"one-step discrepancy not monotone on ({beta}, 1]; using the smallest bracketing root",
            NonMonotoneWarning,
            stacklevel=2,
        )
    k = int(np.argmax(vals > threshold))
    lo = beta if k == 0 else pts[k - 1]
    hi = pts[k]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) <= threshold:
            lo = mid
        else:
            hi = mid
    return float(lo) if lo > beta else float(hi)
