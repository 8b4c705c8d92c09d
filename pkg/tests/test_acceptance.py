"""Acceptance suite: one test per numbered criterion, each printing PASS/FAIL.

Expected values come from closed forms on the Gaussian family (``log Z``,
``D = z^2 dbeta^2``, ``Lambda = sqrt(d) z``) or from the variance model in
:mod:`anneal_smc.theory`; no expected number is taken from a run of the code
under test.
"""

import filecmp
import math
import os
from functools import lru_cache

import numpy as np
import pytest
from conftest import mean_and_se, rel_var

from anneal_smc.cli import run_experiment
from anneal_smc.config import parse_config_text
from anneal_smc.drivers import run_sais, run_ssmc, run_zja, sais_round
from anneal_smc.engine import ResamplingPolicy, SMCState, run_smc
from anneal_smc.kernels import IdealizedExactKernel, RWMHCycleKernel
from anneal_smc.model import GaussianShiftTarget, MixtureTarget
from anneal_smc.pt import lambda_pt_estimate, local_barrier_estimate, run_pt
from anneal_smc.rng import RngKey
from anneal_smc.schedule import Schedule, barrier_estimate, cess, discrepancy_hat, local_barrier
from anneal_smc.theory import (
    RegimePoint,
    classify_regime,
    particle_bounds,
    rel_variance,
    solve_r_eff,
    stabilized_r_eff_bounds,
)

EXACT = IdealizedExactKernel()


@lru_cache(maxsize=None)
def _z_hats(policy_name, seeds, z=1.0, T=16, N=256):
    target = GaussianShiftTarget(0.0, z, 1.0)
    policy = {
        "never": ResamplingPolicy.never(),
        "always": ResamplingPolicy.always(),
        "adaptive": ResamplingPolicy.adaptive_ess(0.5),
    }[policy_name]
    sched = Schedule.uniform(T)
    return np.exp([run_smc(target, EXACT, sched, N, policy, s).log_Z_hat for s in range(seeds)])


def test_criterion_01_unbiasedness(criterion):
    ok, details = True, []
    for name in ("never", "always", "adaptive"):
        z = _z_hats(name, 5000)[:2000]
        m, se = mean_and_se(z)
        good = abs(m - 1.0) <= 3 * se
        ok &= good
        details.append(f"{name}: {m:.5f}+-{se:.5f}")
    assert criterion(1, "unbiased Z over 2000 seeds, three policies", ok, "; ".join(details))


def test_criterion_02_variance_identity(criterion):
    z, T, N = 1.0, 16, 256
    D = z * z / T
    v_never = rel_var(_z_hats("never", 5000))
    want_never = math.expm1(D) / N
    v_always = rel_var(_z_hats("always", 5000))
    want_always = rel_variance(D, T, N)
    e1 = abs(v_never / want_never - 1)
    e2 = abs(v_always / want_always - 1)
    ok = e1 <= 0.10 and e2 <= 0.15
    assert criterion(2, "relative variance matches the closed form", ok,
                     f"never err {e1:.3f}, always err {e2:.3f}")


def test_criterion_03_barrier_recovery(criterion):
    sched = Schedule.uniform(64)
    r1 = run_smc(GaussianShiftTarget(0.0, 3.0, 1.0), EXACT, sched, 4096, ResamplingPolicy.adaptive_ess(), 11)
    lam1 = barrier_estimate(r1.increment_stats, sched).total
    r2 = run_smc(GaussianShiftTarget(0.0, 1.0, 1.0, dim=4), EXACT, sched, 4096,
                 ResamplingPolicy.adaptive_ess(), 12)
    lam2 = barrier_estimate(r2.increment_stats, sched).total
    ok = abs(lam1 - 3.0) <= 0.05 and abs(lam2 - 2.0) <= 0.05
    assert criterion(3, "global barrier recovered", ok, f"z=3: {lam1:.4f}, d=4: {lam2:.4f}")


def test_criterion_04_schedule_fixed_point(criterion):
    rounds = run_ssmc(GaussianShiftTarget(0.0, 1.0, 1.0), EXACT, ResamplingPolicy.adaptive_ess(),
                      rounds=6, seed=4, N1=2**14)
    devs = []
    for k, _, sched in rounds[1:]:
        devs.append(float(np.max(np.abs(sched.betas - np.arange(sched.T + 1) / sched.T))))
    ok = max(devs) <= 0.02
    assert criterion(4, "constant-delta schedules stay uniform", ok,
                     "max dev per round " + ", ".join(f"{d:.4f}" for d in devs))


def test_criterion_05_discrepancy_estimator(criterion):
    z, T, N = 2.0, 32, 2**14
    target = GaussianShiftTarget(0.0, z, 1.0)
    sched = Schedule.uniform(T)
    report = run_smc(target, EXACT, sched, N, ResamplingPolicy.never(), 5)
    want = z * z / T**2
    d = np.array([discrepancy_hat(report.increment_stats, t) for t in range(1, T + 1)])
    worst = float(np.max(np.abs(d / want - 1)))
    ident = max(abs((math.log(N) - math.log(cess(report.increment_stats, t, N))) - d[t - 1])
                for t in range(1, T + 1))

    # Direct conditional ESS from the particle weights of the same system.
    state = SMCState(target, EXACT, N, 55)
    direct = []
    for t in range(1, 5):
        lw = state.log_weights.copy()
        lg = EXACT.log_weight(target, sched[t - 1], sched[t], state.x)
        w = np.exp(lw - lw.max())
        g = np.exp(lg - lg.max())
        cess_direct = N * np.sum(w * g) ** 2 / (np.sum(w * g * g) * np.sum(w))
        red = state.weigh(sched[t - 1], sched[t])
        d_online = red[2] - 2 * red[1] + red[0]
        direct.append(abs((math.log(N) - math.log(cess_direct)) - d_online))
        state.move(sched[t])
    ok = worst <= 0.20 and ident <= 1e-12 and max(direct) <= 1e-12
    assert criterion(5, "discrepancy estimates and the CESS identity", ok,
                     f"worst rel err {worst:.3f}, identity {ident:.1e}, direct {max(direct):.1e}")


def test_criterion_06_stabilized_resampling(criterion):
    # (a) constant per-step discrepancy d with rho = exp(-3d): every 4th step.
    z, T = 2.0, 16
    target = GaussianShiftTarget(0.0, z, 1.0)
    d = z * z / T**2
    pol = ResamplingPolicy.stabilized(math.exp(-3 * d), "analytic")
    times = run_smc(target, EXACT, Schedule.uniform(T), 64, pol, 1).resample_times
    explicit = ResamplingPolicy.stabilized(math.exp(-3 * 0.1), [0.1] * 12)
    times2 = run_smc(target, EXACT, Schedule.uniform(12), 64, explicit, 1).resample_times
    every4 = times == [4, 8, 12, 16] and times2 == [4, 8, 12]

    # (b) R_eff back-solved from the measured variance lies within the bounds.
    T, N, seeds = 4, 512, 4000
    d = z * z / T**2
    rho = math.exp(-1.8 * d)
    pol = ResamplingPolicy.stabilized(rho, "analytic")
    sched = Schedule.uniform(T)
    zs = np.exp([run_smc(target, EXACT, sched, N, pol, s).log_Z_hat for s in range(seeds)])
    r_eff = solve_r_eff(z * z / T, N, rel_var(zs))
    lo, hi = stabilized_r_eff_bounds(z, 1.0, T, rho)
    ok = every4 and lo <= r_eff <= hi
    assert criterion(6, "stabilized resampling times and R_eff bounds", ok,
                     f"times {times}, R_eff {r_eff:.3f} in [{lo:.3f}, {hi:.3f}]")


def test_criterion_07_sais_equivalence_and_memory(criterion):
    target = GaussianShiftTarget(0.0, 1.0, 1.0)
    sched = Schedule.uniform(8)
    same = True
    for seed in range(5):
        for N in (64, 2500):
            a = run_smc(target, EXACT, sched, N, ResamplingPolicy.never(), seed, round=1)
            b = run_sais(target, EXACT, 1, seed, N1=N, workers=3, initial_schedule=sched)[0][1]
            same &= a.log_Z_hat == b.log_Z_hat and a.elbo_hat == b.elbo_hat
            for f in ("log_g0", "log_g1", "log_g2"):
                same &= np.array_equal(getattr(a.increment_stats, f), getattr(b.increment_stats, f))
            same &= np.array_equal(a.ess_trace, b.ess_trace)
    T = 8
    sizes = []
    for N in (2**6, 2**14):
        acc = sais_round(target, EXACT, Schedule.uniform(T), N, 0).accumulator
        sizes.append((acc.adaptation_storage, acc.storage))
    mem_ok = sizes[0] == sizes[1] and sizes[0][0] == 3 * (T + 1)
    assert criterion(7, "SAIS equals AIS bit for bit; storage independent of N", same and mem_ok,
                     f"storage {sizes}")


def test_criterion_08_zja(criterion):
    z, K = 1.0, 32
    target = GaussianShiftTarget(0.0, z, 1.0)
    pilot = sais_round(target, EXACT, Schedule.uniform(K), 4096, 100)
    lam = barrier_estimate(pilot.increment_stats, pilot.schedule).total
    delta = lam * lam / K**2
    big = run_zja(target, EXACT, 2**14, delta, 1)
    steps_ok = abs(big.T - K) <= 0.2 * K

    N, seeds = 256, 300
    zja = [run_zja(target, EXACT, N, delta, 1000 + s) for s in range(seeds)]
    apps = np.mean([r.kernel_applications for r in zja])
    N_sais = int(round(apps / K))
    sais = [sais_round(target, EXACT, Schedule.uniform(K), N_sais, 5000 + s) for s in range(seeds)]
    v_zja = rel_var(np.exp([r.log_Z_hat for r in zja]))
    v_sais = rel_var(np.exp([r.log_Z_hat for r in sais]))
    ratio = v_zja / v_sais
    ok = steps_ok and 0.5 <= ratio <= 2.0
    assert criterion(8, "online schedule matches round-based adaptation", ok,
                     f"steps {big.T} vs {K}, variance ratio {ratio:.3f}")


def test_criterion_09_pt_duality(criterion):
    # (a) lambda / lambda_PT = sqrt(pi) on the Gaussian shift family.
    z = 2.0
    target = GaussianShiftTarget(0.0, z, 1.0)
    sched = Schedule.uniform(64)
    report = sais_round(target, EXACT, sched, 2**14, 9)
    est = barrier_estimate(report.increment_stats, sched)
    grid = np.linspace(0.1, 0.9, 9)
    lam = local_barrier(est, grid)
    lam_pt = np.array([lambda_pt_estimate(target, b, 100_000, RngKey(90 + i)) for i, b in enumerate(grid)])
    ratios = lam / lam_pt
    ok_a = bool(np.all(np.abs(ratios / math.sqrt(math.pi) - 1) <= 0.05))

    # (b) sqrt(2) lambda_PT <= lambda + 3 SE on the mixture target.
    mix = MixtureTarget()
    ok_b = True
    for i, b in enumerate(np.linspace(0.0, 1.0, 11)):
        lp, se_p = lambda_pt_estimate(mix, b, 20_000, RngKey(300 + i), return_se=True)
        lb, se_b = local_barrier_estimate(mix, b, 20_000, RngKey(400 + i), return_se=True)
        ok_b &= math.sqrt(2) * lp <= lb + 3 * math.hypot(math.sqrt(2) * se_p, se_b)

    # (c) stepping stone is centred on log Z = 0.
    res = run_pt(GaussianShiftTarget(0.0, 1.0, 1.0), EXACT, Schedule.uniform(8), 4096, 21,
                 replicas=200, burn_in=0)
    m, se = mean_and_se(res.log_Z_hat)
    ok_c = abs(m) <= 3 * se
    assert criterion(9, "tempering barrier duality and stepping stone", ok_a and ok_b and ok_c,
                     f"ratio/sqrt(pi) in [{ratios.min() / math.sqrt(math.pi):.3f}, "
                     f"{ratios.max() / math.sqrt(math.pi):.3f}], mixture bound {ok_b}, "
                     f"log Z_PT {m:.5f}+-{se:.5f}")


_DRIVER_CONFIGS = {
    "ssmc": "driver = ssmc\nmu1 = 2.0\nN = 1100\nrounds = 3\n",
    "sais": "driver = sais\nmu1 = 2.0\nN = 1100\nrounds = 3\nkernel = rwmh_cycle\n",
    "ais_zja": "driver = ais_zja\nmu1 = 2.0\nN = 1500\nzja_threshold = 0.02\n",
    "pt": "driver = pt\ntarget = mixture\nkernel = rwmh_cycle\nT = 6\niterations = 300\n",
    "theory": "driver = theory\n",
}


def test_criterion_10_determinism(criterion, tmp_path):
    same = True
    for name, text in _DRIVER_CONFIGS.items():
        dirs = []
        for workers in (1, 8):
            out = tmp_path / f"{name}-{workers}"
            cfg = parse_config_text(text, seed=7, workers=workers, output_dir=str(out), timing=False)
            assert run_experiment(cfg, replicates=2, stdout=open(os.devnull, "w")) == 0
            dirs.append(out)
        files = sorted(os.listdir(dirs[0]))
        match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], files, shallow=False)
        same &= not mismatch and not errors and files == sorted(os.listdir(dirs[1]))
    assert criterion(10, "byte-identical outputs for 1 and 8 workers, all drivers", same)


def test_criterion_11_regimes_and_bounds(criterion):
    grid = {
        (1.0, 0.0): "coarse", (1.0, 0.5): "coarse", (1.0, 1.0): "stable",
        (2.0, 0.0): "stable", (2.0, 0.5): "stable", (2.0, 1.0): "stable",
        (3.0, 0.0): "dense", (3.0, 0.5): "dense", (3.0, 1.0): "dense",
    }
    ok = all(classify_regime(RegimePoint(a_t, a_r)) == want for (a_t, a_r), want in grid.items())
    hand = [
        ((2.0, 1.0, 1.0, 4, 0.1), ((math.e - 1) / 0.1, (math.e - 1) / math.log(1.1))),
        ((3.0, 2.0, 2.0, 9, 0.5), (4 * (math.exp(0.25) - 1), 2 / math.log(1.5) * (math.e - 1))),
    ]
    for args, (lo, hi) in hand:
        n_min, n_max = particle_bounds(*args)
        ok &= abs(n_min - lo) <= 1e-9 and abs(n_max - hi) <= 1e-9
    assert criterion(11, "regime partition and particle bounds", ok)


@pytest.mark.slow
def test_criterion_12_rwmh_robustness(criterion):
    import time

    target = GaussianShiftTarget(0.0, 1.0, 1.0)
    sched = Schedule.uniform(64)
    start = time.perf_counter()
    r_mh = run_smc(target, RWMHCycleKernel(sweeps=5), sched, 4096, ResamplingPolicy.adaptive_ess(), 12)
    elapsed = time.perf_counter() - start
    r_ex = run_smc(target, EXACT, sched, 4096, ResamplingPolicy.adaptive_ess(), 12)
    lam_mh = barrier_estimate(r_mh.increment_stats, sched).total
    lam_ex = barrier_estimate(r_ex.increment_stats, sched).total
    rel = abs(lam_mh / lam_ex - 1)
    ok = rel <= 0.10 and elapsed < 300
    assert criterion(12, "barrier robust to random-walk exploration", ok,
                     f"rwmh {lam_mh:.4f} vs exact {lam_ex:.4f}, {elapsed:.1f}s")
