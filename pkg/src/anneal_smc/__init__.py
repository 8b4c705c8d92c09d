"""Annealed sequential Monte Carlo with round-based schedule adaptation.

The package estimates normalising constants along a linear annealing path
from a reference to a target, and ships the closed-form variance model used
to reason about particle counts, schedule sizes and resampling rates.
"""

__version__ = "0.1.0"

from .drivers import budget, run_sais, run_ssmc, run_zja, sais_round
from .engine import (
    DegenerateWeightsError,
    IncrementStats,
    ResamplingPolicy,
    RunReport,
    decide_resample,
    elbo_estimate,
    ess,
    run_smc,
    systematic_resample,
)
from .kernels import IdealizedExactKernel, IdentityKernel, RWMHCycleKernel, make_kernel
from .model import GaussianPathTarget, GaussianShiftTarget, LinearPath, MixtureTarget
from .pt import lambda_pt_estimate, run_pt, stepping_stone
from .rng import RngKey, stream_for
from .schedule import (
    BarrierEstimate,
    Schedule,
    barrier_estimate,
    cess,
    discrepancy_hat,
    generate_schedule,
    zja_next_beta,
)
from .theory import (
    PerformanceModel,
    RegimePoint,
    classify_regime,
    particle_bounds,
    rel_variance,
    solve_r_eff,
    stabilized_r_eff_bounds,
)

__all__ = [
    "BarrierEstimate",
    "DegenerateWeightsError",
    "GaussianPathTarget",
    "GaussianShiftTarget",
    "IdealizedExactKernel",
    "IdentityKernel",
    "IncrementStats",
    "LinearPath",
    "MixtureTarget",
    "PerformanceModel",
    "RWMHCycleKernel",
    "RegimePoint",
    "ResamplingPolicy",
    "RngKey",
    "RunReport",
    "Schedule",
    "barrier_estimate",
    "budget",
    "cess",
    "classify_regime",
    "decide_resample",
    "discrepancy_hat",
    "elbo_estimate",
    "ess",
    "generate_schedule",
    "lambda_pt_estimate",
    "make_kernel",
    "particle_bounds",
    "rel_variance",
    "run_pt",
    "run_sais",
    "run_smc",
    "run_ssmc",
    "run_zja",
    "sais_round",
    "solve_r_eff",
    "stabilized_r_eff_bounds",
    "stepping_stone",
    "stream_for",
    "systematic_resample",
    "zja_next_beta",
]
