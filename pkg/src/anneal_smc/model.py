"""Annealed targets on the linear path between a reference and a target.

All densities live in log-space; ``-inf`` encodes zero density.  Positions
are passed as arrays of shape ``(n, dim)`` (a single point may be given as a
1-d array of length ``dim``) and log-densities come back with shape ``(n,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import rng as _rng
from .rng import Substep

__all__ = [
    "CapabilityError",
    "Capabilities",
    "LinearPath",
    "GaussianPathTarget",
    "GaussianShiftTarget",
    "MixtureTarget",
    "log_gamma",
    "analytic_logZ",
    "analytic_discrepancy",
    "exact_sample",
]

_LOG_2PI = math.log(2.0 * math.pi)


class CapabilityError(RuntimeError):
    """Raised when a target lacks an optional capability (exact sampling etc)."""


@dataclass(frozen=True)
class Capabilities:
    analytic_logZ: bool = False
    exact_sampler: bool = False
    analytic_delta: bool = False


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1) if dim > 1 or x.shape[0] == 1 else x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected points with {dim} coordinates, got shape {np.shape(x)}")
    return x


def _check_beta(beta):
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"annealing parameter {beta} outside [0, 1]")


class LinearPath:
    """Geometric interpolation ``(1 - beta) log eta + beta log gamma``.

    Subclasses provide ``log_reference``, ``log_target`` and
    ``sample_reference``; the path itself is fixed.
    """

    dim: int
    capabilities = Capabilities()

    def log_reference(self, x):
        raise NotImplementedError

    def log_target(self, x):
        raise NotImplementedError

    def sample_reference(self, seed, round, particles, step, substep=Substep.INIT):
        """Exact draws from the reference, one row per particle index."""
        raise NotImplementedError

    def potential(self, x):
        """``V(x) = log gamma(x) - log eta(x)``."""
        x = _as_points(x, self.dim)
        return self.log_target(x) - self.log_reference(x)

    def log_gamma(self, beta, x):
        _check_beta(beta)
        x = _as_points(x, self.dim)
        lr = self.log_reference(x)
        if beta == 0.0:
            return lr
        lt = self.log_target(x)
        if beta == 1.0:
            return lt
        with np.errstate(invalid="ignore"):
            out = (1.0 - beta) * lr + beta * lt
        # -inf in either endpoint means zero density for every beta in (0, 1).
        return np.where(np.isneginf(lr) | np.isneginf(lt), -np.inf, out)

    def exact_sample(self, beta, seed, round, particles, step, substep=Substep.EXACT):
        raise CapabilityError(f"{type(self).__name__} has no exact sampler")

    def analytic_logZ(self, beta):
        raise CapabilityError(f"{type(self).__name__} has no analytic normalising constant")

    def analytic_delta(self, beta):
        raise CapabilityError(f"{type(self).__name__} has no analytic local discrepancy")

    def analytic_discrepancy(self, beta, beta2):
        """Incremental discrepancy of the MCMC weight between ``beta`` and ``beta2``.

        Evaluated as the discrete second difference
        ``A(2 beta2 - beta) + A(beta) - 2 A(beta2)`` of ``A = log Z``.
        """
        if not 0.0 <= beta <= beta2 <= 1.0:
            raise ValueError(f"need 0 <= beta <= beta2 <= 1, got ({beta}, {beta2})")
        far = 2.0 * beta2 - beta
        if far > 1.0 + 1e-15:
            raise ValueError(
                f"2*beta2 - beta = {far} leaves [0, 1]; the second difference is undefined there"
            )
        far = min(far, 1.0)
        a = self.analytic_logZ
        return a(far) + a(beta) - 2.0 * a(beta2)


class GaussianPathTarget(LinearPath):
    """Linear path between ``N(mu0, sigma0^2)`` and ``N(mu1, sigma1^2)``, iid over ``dim``.

    Both endpoints are normalised, so ``Z(0) = Z(1) = 1``.  Every ``pi_beta``
    is Gaussian, which gives exact sampling, ``log Z(beta)`` and the local
    discrepancy ``delta(beta) = Var_{pi_beta}[V]`` in closed form.
    """

    capabilities = Capabilities(analytic_logZ=True, exact_sampler=True, analytic_delta=True)

    def __init__(self, mu0=0.0, sigma0=1.0, mu1=1.0, sigma1=1.0, dim=1):
        if sigma0 <= 0 or sigma1 <= 0:
            raise ValueError("standard deviations must be positive")
        if int(dim) < 1:
            raise ValueError("dim must be a positive integer")
        self.mu0, self.sigma0 = float(mu0), float(sigma0)
        self.mu1, self.sigma1 = float(mu1), float(sigma1)
        self.dim = int(dim)

    def __repr__(self):
        return (
            f"{type(self).__name__}(mu0={self.mu0}, sigma0={self.sigma0}, "
            f"mu1={self.mu1}, sigma1={self.sigma1}, dim={self.dim})"
        )

    @staticmethod
    def _lognormal(x, mu, sigma):
        z = (x - mu) / sigma
        return np.sum(-0.5 * z * z - math.log(sigma) - 0.5 * _LOG_2PI, axis=1)

    def log_reference(self, x):
        return self._lognormal(x, self.mu0, self.sigma0)

    def log_target(self, x):
        return self._lognormal(x, self.mu1, self.sigma1)

    def _precision_and_shift(self, beta):
        p = (1.0 - beta) / self.sigma0**2 + beta / self.sigma1**2
        h = (1.0 - beta) * self.mu0 / self.sigma0**2 + beta * self.mu1 / self.sigma1**2
        return p, h

    def mean_sd(self, beta):
        p, h = self._precision_and_shift(beta)
        return h / p, 1.0 / math.sqrt(p)

    def sample_reference(self, seed, round, particles, step, substep=Substep.INIT):
        z = _rng.normals(seed, round, particles, step, substep, self.dim)
        return self.mu0 + self.sigma0 * z

    def exact_sample(self, beta, seed, round, particles, step, substep=Substep.EXACT):
        _check_beta(beta)
        m, s = self.mean_sd(beta)
        return m + s * _rng.normals(seed, round, particles, step, substep, self.dim)

    def analytic_logZ(self, beta):
        p, h = self._precision_and_shift(beta)
        if p <= 0:
            raise ValueError(f"pi_beta is not normalisable at beta={beta}")
        c = (1.0 - beta) * (self.mu0**2 / (2 * self.sigma0**2) + math.log(self.sigma0)) + beta * (
            self.mu1**2 / (2 * self.sigma1**2) + math.log(self.sigma1)
        )
        return self.dim * (h * h / (2.0 * p) - c - 0.5 * math.log(p))

    def analytic_delta(self, beta):
        _check_beta(beta)
        # V(x) = a x^2 + b x + const per coordinate.
        a = 0.5 * (1.0 / self.sigma0**2 - 1.0 / self.sigma1**2)
        b = self.mu1 / self.sigma1**2 - self.mu0 / self.sigma0**2
        m, s = self.mean_sd(beta)
        v = s * s
        return self.dim * (2.0 * a * a * v * v + v * (2.0 * a * m + b) ** 2)


class GaussianShiftTarget(GaussianPathTarget):
    """Mean shift ``N(mu0, sigma^2) -> N(mu1, sigma^2)`` with constant local discrepancy.

    With ``z = |mu1 - mu0| / sigma``: ``log Z(beta) = -d beta (1 - beta) z^2 / 2``,
    ``delta = d z^2`` and global barrier ``sqrt(d) z``.
    """

    def __init__(self, mu0=0.0, mu1=1.0, sigma=1.0, dim=1):
        super().__init__(mu0=mu0, sigma0=sigma, mu1=mu1, sigma1=sigma, dim=dim)
        self.sigma = float(sigma)

    def __repr__(self):
        return f"GaussianShiftTarget(mu0={self.mu0}, mu1={self.mu1}, sigma={self.sigma}, dim={self.dim})"

    @property
    def z(self):
        return abs(self.mu1 - self.mu0) / self.sigma

    @property
    def barrier(self):
        return math.sqrt(self.dim) * self.z

    def analytic_logZ(self, beta):
        return -self.dim * beta * (1.0 - beta) * self.z**2 / 2.0

    def analytic_delta(self, beta):
        _check_beta(beta)
        return self.dim * self.z**2

    def analytic_discrepancy(self, beta, beta2):
        super().analytic_discrepancy(beta, beta2)  # domain checks
        return self.dim * self.z**2 * (beta2 - beta) ** 2


@dataclass
class MixtureTarget(LinearPath):
    """One-dimensional Gaussian mixture target with a Gaussian reference.

    The mixture is normalised (``Z = 1``).  Exact draws from ``pi_beta`` use
    rejection from ``(1 - beta) eta + beta pi``, which dominates
    ``eta^(1 - beta) pi^beta`` by the weighted AM-GM inequality; the
    acceptance probability is ``Z(beta)``.
    """

    weights: tuple = (0.5, 0.5)
    means: tuple = (-3.0, 3.0)
    sds: tuple = (0.5, 0.5)
    reference_mean: float = 0.0
    reference_sd: float = 4.0
    max_attempts: int = 10_000
    dim: int = field(default=1, init=False)

    capabilities = Capabilities(exact_sampler=True)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not (len(w) == len(self.means) == len(self.sds)) or len(w) == 0:
            raise ValueError("mixture weights, means and sds must have equal non-zero length")
        if np.any(w <= 0) or np.any(np.asarray(self.sds) <= 0) or self.reference_sd <= 0:
            raise ValueError("mixture weights and standard deviations must be positive")
        self._logw = np.log(w / w.sum())
        self._means = np.asarray(self.means, dtype=float)
        self._sds = np.asarray(self.sds, dtype=float)
        self._cdf = np.cumsum(w / w.sum())

    def log_reference(self, x):
        z = (x[:, 0] - self.reference_mean) / self.reference_sd
        return -0.5 * z * z - math.log(self.reference_sd) - 0.5 * _LOG_2PI

    def log_target(self, x):
        z = (x[:, :1] - self._means) / self._sds
        comps = self._logw - 0.5 * z * z - np.log(self._sds) - 0.5 * _LOG_2PI
        return logsumexp(comps, axis=1)

    def sample_reference(self, seed, round, particles, step, substep=Substep.INIT):
        z = _rng.normals(seed, round, particles, step, substep, 1)
        return self.reference_mean + self.reference_sd * z

    def analytic_logZ(self, beta):
        if beta in (0.0, 1.0):
            return 0.0
        raise CapabilityError("MixtureTarget knows log Z only at the endpoints")

    def exact_sample(self, beta, seed, round, particles, step, substep=Substep.EXACT):
        _check_beta(beta)
        particles = np.asarray(particles)
        out = np.empty((particles.size, 1))
        pending = np.arange(particles.size)
        for attempt in range(self.max_attempts):
            if pending.size == 0:
                return out
            # Per attempt: endpoint choice, component choice, acceptance, Box-Muller pair.
            u = _rng.uniforms(seed, round, particles[pending], step, substep, 6, offset=6 * attempt)
            g = np.sqrt(-2.0 * np.log(u[:, 3])) * np.cos(2.0 * np.pi * u[:, 4])
            from_target = u[:, 0] < beta
            comp = np.minimum(np.searchsorted(self._cdf, u[:, 1], side="right"), len(self._cdf) - 1)
            x = np.where(
                from_target,
                self._means[comp] + self._sds[comp] * g,
                self.reference_mean + self.reference_sd * g,
            ).reshape(-1, 1)
            lr, lt = self.log_reference(x), self.log_target(x)
            envelope = np.logaddexp(math.log1p(-beta) + lr if beta < 1 else -np.inf,
                                    math.log(beta) + lt if beta > 0 else -np.inf)
            accept = np.log(u[:, 2]) < (1.0 - beta) * lr + beta * lt - envelope
            out[pending[accept]] = x[accept]
            pending = pending[~accept]
        if pending.size:
            raise RuntimeError(f"rejection sampler exhausted {self.max_attempts} attempts")
        return out


def log_gamma(target, beta, x):
    return target.log_gamma(beta, x)


def analytic_logZ(target, beta):
    return target.analytic_logZ(beta)


def analytic_discrepancy(target, beta, beta2):
    return target.analytic_discrepancy(beta, beta2)


def exact_sample(target, beta, key: _rng.RngKey, size: int = 1):
    """Exact draws from ``pi_beta`` for ``size`` consecutive particle slots of ``key``."""
    particles = np.arange(key.particle, key.particle + size)
    return target.exact_sample(beta, key.seed, key.round, particles, key.step, key.substep)
