"""Closed-form performance model of annealed SMC under independent increments.

With ``N`` particles, total discrepancy ``D`` and effective resample size
``R``, the relative variance of the normalising-constant estimate is

    v(D, R, N) = (1 + (exp(D / R) - 1) / N) ** R - 1,

strictly increasing in ``D`` and decreasing in ``N`` and ``R``.  Everything
here is evaluated through ``log1p``/``expm1`` compositions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PerformanceModel",
    "RegimePoint",
    "classify_regime",
    "log1p_rel_variance",
    "particle_bounds",
    "rel_variance",
    "solve_r_eff",
    "stabilized_r_eff_bounds",
]


@dataclass(frozen=True)
class PerformanceModel:
    D_total: float
    R_eff: float = 1.0
    N: int = 1

    def __post_init__(self):
        if not self.D_total >= 0:
            raise ValueError(f"D_total must be >= 0, got {self.D_total!r}")
        if not self.R_eff >= 1:
            raise ValueError(f"R_eff must be >= 1, got {self.R_eff!r}")
        if not self.N >= 1:
            raise ValueError(f"N must be >= 1, got {self.N!r}")


def _logexpm1(x):
    # log(exp(x) - 1) for x >= 0, stable at both ends.
    if x == 0:
        return -math.inf
    return x + math.log(-math.expm1(-x))


def log1p_rel_variance(D_total, R_eff=1.0, N=1) -> float:
    """``log(1 + v)``; finite even where ``v`` itself overflows."""
    m = PerformanceModel(D_total, R_eff, N)
    y = _logexpm1(m.D_total / m.R_eff) - math.log(m.N)
    return m.R_eff * float(np.logaddexp(0.0, y))


def rel_variance(model, R_eff=None, N=None) -> float:
    """Relative variance ``Var(Z_hat) / Z^2`` of the model.

    Accepts a :class:`PerformanceModel` or ``(D_total, R_eff, N)``.
    """
    if not isinstance(model, PerformanceModel):
        model = PerformanceModel(model, 1.0 if R_eff is None else R_eff, 1 if N is None else N)
    with np.errstate(over="ignore"):
        return float(np.expm1(log1p_rel_variance(model.D_total, model.R_eff, model.N)))


def solve_r_eff(D_total, N, observed_rel_var, tol=1e-12) -> float:
    """Invert ``R -> v(D, R, N)`` for an observed relative variance.

    Raises
    ------
    ValueError
        If the observed value lies outside ``[exp(D/N) - 1, (exp(D) - 1)/N]``,
        the range spanned by ``R`` in ``[1, inf)``.
    """
    if not (D_total > 0 and N > 1):
        raise ValueError("need D_total > 0 and N > 1")
    v_one = rel_variance(D_total, 1.0, N)
    v_inf = math.expm1(D_total / N)
    obs = float(observed_rel_var)
    slack = 1e-12 * v_one
    if obs > v_one + slack or obs < v_inf - slack or not math.isfinite(obs):
        raise ValueError(
            f"observed relative variance {obs!r} outside the feasible range [{v_inf!r}, {v_one!r}]"
        )
    if obs >= v_one:
        return 1.0
    # Bisection on log R; expand the upper bracket until it undershoots.
    lo, hi = 0.0, 1.0
    while rel_variance(D_total, math.exp(hi), N) > obs:
        lo, hi = hi, 2.0 * hi
        if hi > 700:
            return math.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rel_variance(D_total, math.exp(mid), N) > obs:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return math.exp(0.5 * (lo + hi))


def particle_bounds(Lambda, kappa, R_eff, T, eps):
    """Particle counts below/above which the relative variance is above/below ``eps``.

    Returns
    -------
    (N_min, N_max) : tuple of float
        ``N_min = R/eps * (exp(Lambda^2 / (kappa R T)) - 1)`` and
        ``N_max = R/log(1+eps) * (exp(kappa Lambda^2 / (R T)) - 1)``.
    """
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    if not eps > 0:
        raise ValueError("eps must be > 0")
    L2 = Lambda * Lambda
    n_min = R_eff / eps * math.expm1(L2 / (kappa * R_eff * T))
    n_max = R_eff / math.log1p(eps) * math.expm1(kappa * L2 / (R_eff * T))
    return n_min, n_max


@dataclass(frozen=True)
class RegimePoint:
    """Growth exponents ``T ~ Lambda^alpha_T`` and ``R_eff ~ Lambda^alpha_R``."""

    alpha_T: float
    alpha_R: float

    def __post_init__(self):
        if not 0 <= self.alpha_R <= self.alpha_T:
            raise ValueError("need 0 <= alpha_R <= alpha_T")


def classify_regime(p: RegimePoint) -> str:
    """``"coarse"``, ``"stable"`` or ``"dense"``; boundary points are stable."""
    if p.alpha_R + p.alpha_T < 2:
        return "coarse"
    if p.alpha_T > 2:
        return "dense"
    return "stable"


def stabilized_r_eff_bounds(Lambda, kappa, T, rho):
    """Bounds on the effective resample size of stabilized resampling.

    For threshold ``rho`` on a schedule of ``T`` steps over a path with
    barrier ``Lambda`` and local-barrier ratio ``kappa``::

        max(1, L2 T / (kappa^2 L2 - kappa log(rho) T^2))
            <= R_eff <= min(T, 1 - kappa L2 / (T log rho))

    with ``L2 = Lambda^2``.  ``rho = 0`` gives ``(1, 1)`` (no resampling) and
    ``rho = 1`` gives ``(max(1, T / kappa^2), T)``.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    T = float(T)
    if rho == 0.0:
        return 1.0, 1.0
    if rho == 1.0:
        return max(1.0, T / kappa**2), T
    L2 = Lambda * Lambda
    lr = math.log(rho)
    lower = max(1.0, L2 * T / (kappa**2 * L2 - kappa * lr * T * T))
    upper = min(T, 1.0 - kappa / lr * L2 / T)
    return lower, upper
