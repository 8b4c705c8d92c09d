"""Forward kernels and the MCMC incremental weight.

The weight is the likelihood ratio ``gamma_{beta'}(x) / gamma_beta(x)``,
which corresponds to choosing the forward kernel as a ``pi_{beta'}``-invariant
move and the backward kernel as its time reversal.  Other forward/backward
pairs (deterministic flows, optimal backward kernels) would subclass
:class:`ForwardKernel` and override :meth:`ForwardKernel.log_weight`; none
ship here.
"""

from __future__ import annotations

import numpy as np

from . import rng as _rng
from .model import CapabilityError, LinearPath, _as_points
from .rng import RngKey, Substep

__all__ = [
    "WeightError",
    "ForwardKernel",
    "IdentityKernel",
    "IdealizedExactKernel",
    "RWMHCycleKernel",
    "log_incremental_weight",
    "propagate",
]

DEFAULT_STEP_SIZES = (0.1, 1.0, 10.0)


class WeightError(ArithmeticError):
    """The incremental weight is undefined (zero density at the source)."""


def log_incremental_weight(target, beta, beta2, x):
    """``log gamma_{beta2}(x) - log gamma_beta(x)`` for each row of ``x``.

    On a linear path this is evaluated as ``(beta2 - beta) V(x)``, which is
    exactly zero when reference and target coincide.
    """
    if not isinstance(target, LinearPath):
        lo = np.atleast_1d(target.log_gamma(beta, x))
        _check_support(lo, beta)
        return np.zeros_like(lo) if beta2 == beta else target.log_gamma(beta2, x) - lo
    x = _as_points(x, target.dim)
    lr, lt = target.log_reference(x), target.log_target(x)
    if beta == 0.0:
        dead = np.isneginf(lr)
    elif beta == 1.0:
        dead = np.isneginf(lt)
    else:
        dead = np.isneginf(lr) | np.isneginf(lt)
    _check_support(np.where(dead, -np.inf, 0.0), beta)
    if beta2 == beta:
        return np.zeros(len(x))
    return (beta2 - beta) * (lt - lr)


def _check_support(log_density, beta):
    if np.any(np.isneginf(log_density)):
        raise WeightError(f"gamma_{beta} vanishes at a particle; the weight is undefined")


class ForwardKernel:
    """Markov kernel ``M_{beta, beta'}``; subclasses implement :meth:`move`.

    ``move`` receives the global particle indices of the rows of ``x`` so that
    every random draw can be keyed per particle.
    """

    name = "kernel"

    def log_weight(self, target, beta, beta2, x):
        return log_incremental_weight(target, beta, beta2, x)

    def move(self, target, beta2, x, seed, round, particles, step):
        raise NotImplementedError

    def check(self, target):
        """Validate that ``target`` supports this kernel."""


class IdentityKernel(ForwardKernel):
    name = "identity"

    def move(self, target, beta2, x, seed, round, particles, step):
        return x


class IdealizedExactKernel(ForwardKernel):
    """Replaces every particle by an independent exact draw from ``pi_{beta'}``.

    Combined with the MCMC weight this makes the incremental weights
    independent across particles and steps with exactly the stationary law,
    i.e. the analytic model of the variance theory holds by construction.
    """

    name = "idealized_exact"

    def check(self, target):
        if not target.capabilities.exact_sampler:
            raise CapabilityError(f"{type(target).__name__} has no exact sampler")

    def move(self, target, beta2, x, seed, round, particles, step):
        return target.exact_sample(beta2, seed, round, particles, step, Substep.EXACT)


class RWMHCycleKernel(ForwardKernel):
    """Random-walk Metropolis-Hastings cycling through a list of step sizes.

    One sweep applies an isotropic normal proposal with each step size in
    turn; ``sweeps`` sweeps are applied per call.
    """

    name = "rwmh_cycle"

    def __init__(self, step_sizes=DEFAULT_STEP_SIZES, sweeps=1):
        step_sizes = tuple(float(s) for s in step_sizes)
        if not step_sizes or min(step_sizes) <= 0:
            raise ValueError("step sizes must be positive")
        if int(sweeps) < 1:
            raise ValueError("sweeps must be >= 1")
        self.step_sizes = step_sizes
        self.sweeps = int(sweeps)

    def __repr__(self):
        return f"RWMHCycleKernel(step_sizes={self.step_sizes}, sweeps={self.sweeps})"

    def move(self, target, beta2, x, seed, round, particles, step):
        return self.move_with_stats(target, beta2, x, seed, round, particles, step)[0]

    def move_with_stats(self, target, beta2, x, seed, round, particles, step):
        """As :meth:`move`, also returning the acceptance rate of each step size."""
        x = np.array(x, dtype=float, copy=True)
        dim = x.shape[1]
        n_moves = self.sweeps * len(self.step_sizes)
        noise = _rng.normals(seed, round, particles, step, Substep.PROPOSAL, n_moves * dim)
        log_u = np.log(_rng.uniforms(seed, round, particles, step, Substep.ACCEPT, n_moves))
        current = target.log_gamma(beta2, x)
        accepted = np.zeros(len(self.step_sizes))
        for j in range(n_moves):
            s = self.step_sizes[j % len(self.step_sizes)]
            prop = x + s * noise[:, j * dim:(j + 1) * dim]
            lp = target.log_gamma(beta2, prop)
            with np.errstate(invalid="ignore"):
                ok = log_u[:, j] < lp - current
            x[ok] = prop[ok]
            current = np.where(ok, lp, current)
            accepted[j % len(self.step_sizes)] += ok.sum()
        return x, accepted / (self.sweeps * len(x))


def propagate(kernel, target, beta2, x, key: RngKey):
    """Apply ``kernel`` to the rows of ``x`` (particle slots starting at ``key.particle``)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    particles = np.arange(key.particle, key.particle + len(x))
    return kernel.move(target, beta2, x, key.seed, key.round, particles, key.step)


def make_kernel(name, step_sizes=DEFAULT_STEP_SIZES, sweeps=1):
    if name == "identity":
        return IdentityKernel()
    if name == "idealized_exact":
        return IdealizedExactKernel()
    if name == "rwmh_cycle":
        return RWMHCycleKernel(step_sizes, sweeps)
    raise ValueError(f"unknown kernel {name!r}")
