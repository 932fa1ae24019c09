import math

import numpy as np
import pytest

from sparsecdma import kernels
from sparsecdma.channel import sigma0_sq_from_psd_db
from sparsecdma.ensembles import EnsembleSpec
from sparsecdma.popdyn import RSRun
from sparsecdma.stability import (PerturbedPopulation, estimate_lambda,
                                  perturbed_chip_update, perturbed_user_update)

SPEC33 = EnsembleSpec.make("regular", C=3, L=3, N=999)


def test_chip_gradient_finite_difference():
    rng = np.random.default_rng(7)
    h = 1e-6
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 6))
        x = rng.uniform(-0.99, 0.99, size=(1, d))
        xi = rng.normal(size=(1, d + 1))
        om = rng.normal(size=1)
        s2 = float(rng.uniform(0.05, 2.0))
        _, g = kernels.chip_cavity_with_grad(x, xi, om, s2, 1.0)
        j = int(rng.integers(0, d))
        xp = x.copy()
        xp[0, j] += h
        xm = x.copy()
        xm[0, j] -= h
        fd = (kernels.chip_cavity(xp, xi, om, s2, 1.0)[0]
              - kernels.chip_cavity(xm, xi, om, s2, 1.0)[0]) / (2 * h)
        worst = max(worst, abs(fd - g[0, j]))
    assert worst <= 1e-6


def test_user_gradient_finite_difference():
    rng = np.random.default_rng(8)
    h = 1e-6
    worst = 0.0
    for _ in range(1000):
        c = int(rng.integers(1, 6))
        xh = rng.uniform(-0.99, 0.99, size=c)
        _, g = kernels.user_merge_with_grad(xh[None, :])
        j = int(rng.integers(0, c))
        xp = xh.copy()
        xp[j] += h
        xm = xh.copy()
        xm[j] -= h
        fd = (kernels.user_merge(xp[None, :])[0]
              - kernels.user_merge(xm[None, :])[0]) / (2 * h)
        worst = max(worst, abs(fd - g[0, j]))
    assert worst <= 1e-6


def test_user_weight_identity_and_sum():
    rng = np.random.default_rng(1)
    # excess degree 1 (C=2): derivative is exactly 1, weight passes through
    spec2 = EnsembleSpec.make("regular", C=2, L=2, N=10)
    pop = PerturbedPopulation(np.full(30, 0.37), np.full(30, 1.6), "chip")
    x, v = perturbed_user_update(pop, spec2, rng)
    assert x == pytest.approx(0.37, abs=1e-12)
    assert v == pytest.approx(1.6, abs=1e-12)
    # two zero messages: each derivative 1, weights add
    pop = PerturbedPopulation(np.zeros(30), np.full(30, 0.7), "chip")
    x, v = perturbed_user_update(pop, SPEC33, rng)
    assert x == 0.0
    assert v == pytest.approx(1.4, abs=1e-12)


def test_saturated_messages_kill_weights():
    rng = np.random.default_rng(2)
    pop = PerturbedPopulation(np.ones(30), np.ones(30), "chip")
    _, v = perturbed_user_update(pop, SPEC33, rng)
    assert v <= 1e-20


def test_chip_weight_degree_zero_and_decoupled():
    rng = np.random.default_rng(3)
    spec1 = EnsembleSpec.make("regular", C=2, L=1, N=10, K=5)
    pop = PerturbedPopulation(np.zeros(30), np.ones(30), "user")
    _, v = perturbed_chip_update(pop, spec1, 0.4, 1.0, rng)
    assert v == 0.0  # no incoming edges
    # huge model noise decouples the chip: derivatives vanish
    vals = [perturbed_chip_update(PerturbedPopulation(np.zeros(30), np.ones(30), "user"),
                                  SPEC33, 1e8, 1.0, rng)[1] for _ in range(20)]
    assert max(vals) < 1e-6


def test_weights_nonnegative_and_renormalized():
    run = RSRun(SPEC33, sigma0_sq_from_psd_db(4.0), 2000, "random", 11,
                track_stability=True)
    for _ in range(15):
        run.sweep()
        assert (run.v_user >= 0).all() and (run.v_chip >= 0).all()
        assert float(run.v_user.mean()) == pytest.approx(1.0, abs=1e-12)
        assert float(run.v_chip.mean()) == pytest.approx(1.0, abs=1e-12)


def test_lambda_negative_high_noise():
    run = RSRun(SPEC33, sigma0_sq_from_psd_db(-6.0), 3000, "random", 12,
                track_stability=True)
    for _ in range(120):
        run.sweep()
    est = estimate_lambda(run, window=100)
    assert est.lam_mean < 0
    assert not est.noisy


def test_lambda_sides_agree():
    run = RSRun(SPEC33, sigma0_sq_from_psd_db(6.0), 5000, "random", 13)
    for _ in range(50):
        run.sweep()
    run.enable_stability()
    for _ in range(210):
        run.sweep()
    est = estimate_lambda(run, window=200)
    assert est.lam_mean < 0
    assert abs(est.lam_chip - est.lam_user) <= 3 * math.hypot(est.se_chip, est.se_user)


def test_frozen_populations_sentinel():
    run = RSRun(SPEC33, 1e-9, 500, "ferromagnetic", 14, track_stability=True)
    for _ in range(12):
        run.sweep()
    est = estimate_lambda(run, window=10)
    assert est.lam_mean == -math.inf


def test_window_exceeding_history_rejected():
    run = RSRun(SPEC33, 0.1, 300, "random", 15, track_stability=True)
    for _ in range(5):
        run.sweep()
    with pytest.raises(ValueError):
        estimate_lambda(run, window=10)
