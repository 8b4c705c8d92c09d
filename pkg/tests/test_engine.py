import math

import numpy as np
import pytest
from conftest import mean_and_se, rel_var

from anneal_smc.engine import (
    DegenerateWeightsError,
    ResamplingPolicy,
    decide_resample,
    elbo_estimate,
    ess,
    run_smc,
    systematic_resample,
    weighted_mean,
)
from anneal_smc.kernels import IdealizedExactKernel, IdentityKernel, RWMHCycleKernel
from anneal_smc.model import GaussianShiftTarget
from anneal_smc.rng import RngKey
from anneal_smc.schedule import Schedule

EXACT = IdealizedExactKernel()
POLICIES = {
    "never": ResamplingPolicy.never(),
    "always": ResamplingPolicy.always(),
    "adaptive": ResamplingPolicy.adaptive_ess(0.5),
}


def test_ess_examples():
    assert ess(np.zeros(8)) == pytest.approx(8.0)
    assert ess([0.0, -np.inf, -np.inf, -np.inf]) == pytest.approx(1.0)
    assert ess(np.log([2.0, 1.0, 1.0])) == pytest.approx(16 / 6)
    # Shift invariance in log space.
    assert ess(np.log([2.0, 1.0, 1.0]) + 800.0) == pytest.approx(16 / 6)


def test_ess_all_zero_weights():
    with pytest.raises(DegenerateWeightsError):
        ess([-np.inf, -np.inf])


def test_weighted_mean():
    assert weighted_mean(np.log([1.0, 3.0]), [2.0, 6.0]) == pytest.approx(5.0)


def test_systematic_two_equal_weights():
    for seed in range(20):
        assert sorted(systematic_resample(np.zeros(2), RngKey(seed)).tolist()) == [0, 1]


def test_systematic_point_mass():
    lw = np.full(5, -np.inf)
    lw[1] = 0.0
    assert systematic_resample(lw, RngKey(3)).tolist() == [1] * 5


def test_systematic_multiplicities_within_one_of_expectation():
    N = 100
    w = np.arange(1, N + 1, dtype=float)
    w /= w.sum()
    counts = []
    for seed in range(10_000):
        counts.append(np.bincount(systematic_resample(np.log(w), RngKey(seed)), minlength=N))
    counts = np.array(counts)
    assert np.all(np.abs(counts - N * w) < 1.0)
    # Unbiased multiplicities: mean over seeds matches N W within a 4-sigma band.
    se = counts.std(axis=0, ddof=1) / math.sqrt(len(counts)) + 1e-12
    assert np.all(np.abs(counts.mean(axis=0) - N * w) <= 4 * se + 1e-3)


def test_systematic_degenerate_weights():
    with pytest.raises(DegenerateWeightsError):
        systematic_resample(np.full(3, -np.inf), RngKey(0))


def test_decide_resample_examples():
    assert not decide_resample(ResamplingPolicy.never(), 3, np.zeros(4))
    assert decide_resample(ResamplingPolicy.always(), 1, np.zeros(4))
    assert not decide_resample(ResamplingPolicy.adaptive_ess(0.5), 2, np.zeros(16))
    assert decide_resample(ResamplingPolicy.adaptive_ess(0.5), 2, np.log([1.0, 1e-9, 1e-9, 1e-9]))


def test_stabilized_fires_strictly_after_three_steps():
    d = 0.01
    pol = ResamplingPolicy.stabilized(math.exp(-3 * d))
    acc, fired = 0.0, []
    for t in range(1, 13):
        acc += d
        if decide_resample(pol, t, accumulated=acc):
            fired.append(t)
            acc = 0.0
    assert fired == [4, 8, 12]


def test_policy_validation():
    with pytest.raises(ValueError):
        ResamplingPolicy("sometimes")
    with pytest.raises(ValueError):
        ResamplingPolicy.adaptive_ess(1.5)
    with pytest.raises(ValueError):
        ResamplingPolicy.stabilized(0.5, "guessed")


@pytest.mark.parametrize("name", sorted(POLICIES))
def test_reference_equals_target_gives_exact_zero(name):
    t = GaussianShiftTarget(1.0, 1.0, 1.0)
    for N, T in ((1, 1), (7, 5), (300, 12)):
        r = run_smc(t, EXACT, Schedule.uniform(T), N, POLICIES[name], seed=N)
        assert r.log_Z_hat == 0.0
        assert elbo_estimate(r) == 0.0


def test_report_structure():
    t = GaussianShiftTarget(0.0, 2.0, 1.0)
    r = run_smc(t, EXACT, Schedule.uniform(10), 200, ResamplingPolicy.adaptive_ess(0.5), 3)
    assert r.resample_times[-1] == 10
    assert all(a < b for a, b in zip(r.resample_times, r.resample_times[1:]))
    assert r.kernel_applications == 200 * 10
    assert len(r.ess_trace) == 10 and np.all((r.ess_trace >= 1) & (r.ess_trace <= 200))
    assert r.cum_log_Z[-1] == r.log_Z_hat
    # Cauchy-Schwarz on the increment moments.
    s = r.increment_stats
    assert np.all(2 * s.log_g1 <= s.log_g0 + s.log_g2 + 1e-12)


def test_never_policy_finalises_only_at_t_equals_T():
    r = run_smc(GaussianShiftTarget(0.0, 3.0, 1.0), EXACT, Schedule.uniform(6), 50,
                ResamplingPolicy.never(), 1)
    assert r.resample_times == [6]


def test_results_independent_of_worker_count():
    t = GaussianShiftTarget(0.0, 1.5, 1.0, dim=2)
    sched = Schedule.uniform(7)
    a = run_smc(t, RWMHCycleKernel(), sched, 2600, ResamplingPolicy.adaptive_ess(0.7), 9, workers=1)
    b = run_smc(t, RWMHCycleKernel(), sched, 2600, ResamplingPolicy.adaptive_ess(0.7), 9, workers=4)
    assert a.log_Z_hat == b.log_Z_hat and a.elbo_hat == b.elbo_hat
    assert a.resample_times == b.resample_times
    assert np.array_equal(a.increment_stats.log_g2, b.increment_stats.log_g2)


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(POLICIES))
@pytest.mark.parametrize("z", [0.5, 1.0])
@pytest.mark.parametrize("T, N", [(4, 32), (4, 256), (16, 32), (16, 256)])
def test_unbiasedness_grid(name, z, T, N):
    t = GaussianShiftTarget(0.0, z, 1.0)
    sched = Schedule.uniform(T)
    zs = np.exp([run_smc(t, EXACT, sched, N, POLICIES[name], 10_000 + s).log_Z_hat for s in range(2000)])
    m, se = mean_and_se(zs)
    assert abs(m - 1.0) <= 3 * se


def test_relative_variance_decreases_with_particles():
    t = GaussianShiftTarget(0.0, 1.0, 1.0)
    sched = Schedule.uniform(4)
    seeds = 1500
    out = []
    for N in (16, 64, 256, 1024):
        zs = np.exp([run_smc(t, EXACT, sched, N, ResamplingPolicy.never(), s).log_Z_hat for s in range(seeds)])
        v = rel_var(zs)
        # Standard error of a sample variance from the fourth moment.
        c = zs / zs.mean() - 1
        se = math.sqrt(max(np.mean(c**4) - v * v, 0.0) / seeds)
        out.append((v, se))
    for (v1, s1), (v2, s2) in zip(out, out[1:]):
        assert v2 <= v1 + 2 * math.hypot(s1, s2)


def test_elbo_close_to_minus_half_energy():
    z, T = 2.0, 32
    r = run_smc(GaussianShiftTarget(0.0, z, 1.0), EXACT, Schedule.uniform(T), 4096,
                ResamplingPolicy.adaptive_ess(), 2)
    assert elbo_estimate(r) == pytest.approx(-z * z / (2 * T), abs=0.01)


def test_elbo_single_step_is_reference_mean_of_potential():
    z, N = 1.5, 20_000
    r = run_smc(GaussianShiftTarget(0.0, z, 1.0), IdentityKernel(), Schedule.uniform(1), N,
                ResamplingPolicy.never(), 4)
    # E_eta[V] = -z^2 / 2 with sd(V) = z under the reference.
    assert abs(r.elbo_hat + z * z / 2) < 4 * z / math.sqrt(N)


def test_degenerate_weights_abort():
    t = GaussianShiftTarget(0.0, 2000.0, 1.0)
    with pytest.raises(DegenerateWeightsError) as err:
        run_smc(t, EXACT, Schedule.uniform(1), 2, ResamplingPolicy.never(), 0)
    assert err.value.step == 1
    assert np.isfinite(err.value.max_log_weight)
    assert "step 1" in str(err.value)


def test_log_domain_safety_in_high_dimension():
    t = GaussianShiftTarget(0.0, 6.0, 1.0, dim=100)
    r = run_smc(t, EXACT, Schedule.uniform(1), 1000, ResamplingPolicy.never(), 0)
    assert np.isfinite(r.log_Z_hat) and np.isfinite(r.elbo_hat)
    assert np.all(np.isfinite(r.increment_stats.log_g2))


def test_adaptive_and_stabilized_times_agree_at_large_N():
    # Per-step discrepancy d = z^2 / T^2; a threshold of 3.5 d sits midway
    # between accumulation levels, so both rules should fire every 4th step.
    z, T, N = 2.0, 16, 2**16
    d = z * z / T**2
    rho = math.exp(-3.5 * d)
    t = GaussianShiftTarget(0.0, z, 1.0)
    sched = Schedule.uniform(T)
    stab = run_smc(t, EXACT, sched, 64, ResamplingPolicy.stabilized(rho, "analytic"), 0).resample_times
    assert stab == [4, 8, 12, 16]
    agree = sum(
        run_smc(t, EXACT, sched, N, ResamplingPolicy.adaptive_ess(rho), s).resample_times == stab
        for s in range(100)
    )
    assert agree >= 95
