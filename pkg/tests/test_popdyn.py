import math

import numpy as np
import pytest

from sparsecdma import kernels
from sparsecdma.channel import sigma0_sq_from_psd_db
from sparsecdma.ensembles import EnsembleSpec
from sparsecdma.popdyn import (Population, RSRun, chip_update,
                               classify_coexistence, load_population,
                               overlap_distribution, save_population,
                               solve_rs, solve_rs_pair, user_update)

SPEC33 = EnsembleSpec.make("regular", C=3, L=3, N=999)


def test_chip_update_degree_zero_formula():
    # regular L=1 has excess chip degree 0: the trace closes in two states
    spec = EnsembleSpec.make("regular", C=2, L=1, N=10, K=5)
    rng = np.random.default_rng(0)
    W = Population(np.zeros(100), "user")
    for _ in range(50):
        state = rng.bit_generator.state
        val = chip_update(W, spec, sigma0_sq=0.5, beta=1.0, rng=rng)
        rng.bit_generator.state = state
        _ = rng.integers(0, 100, size=0)
        xi = float(np.atleast_1d(spec.gain.sample(rng, size=1))[0])
        om = float(rng.normal(0.0, math.sqrt(0.5)))
        assert val == pytest.approx(math.tanh((xi * om + xi * xi) / 0.5), abs=1e-12)


def test_chip_kernel_ferromagnetic_zero_noise():
    x = np.ones((1, 2))
    xi = np.array([[0.6, -0.6, 0.6]])
    assert kernels.chip_cavity(x, xi, np.array([0.0]), 0.0, 1.0)[0] == 1.0


def test_chip_kernel_gain_sign_symmetry_and_bias():
    # flipping every BPSK gain sign flips the residual field, whose square is
    # all that enters: the update is exactly invariant.  At a zero noise draw
    # the gauged update is biased toward the sent (all-ones) word.
    rng = np.random.default_rng(3)
    scale = 1 / math.sqrt(3)
    for _ in range(500):
        xi = (rng.integers(0, 2, size=3) * 2 - 1) * scale
        om = float(rng.normal(0, 0.4))
        v = kernels.chip_cavity(np.zeros((1, 2)), xi[None, :], np.array([om]),
                                0.3, 1.0)[0]
        vm = kernels.chip_cavity(np.zeros((1, 2)), -xi[None, :], np.array([-om]),
                                 0.3, 1.0)[0]
        assert v == pytest.approx(vm, abs=0.0)
        if om == 0.0:
            assert v > 0.0
    v0 = kernels.chip_cavity(np.zeros((1, 2)),
                             np.array([[scale, -scale, scale]]),
                             np.array([0.0]), 0.3, 1.0)[0]
    assert v0 > 0.0  # gauged ferromagnetic bias at the typical noise draw


def test_user_update_examples():
    rng = np.random.default_rng(1)
    # excess degree 1 for C=2: identity on one message
    spec = EnsembleSpec.make("regular", C=2, L=2, N=10)
    pop = Population(np.full(50, 0.3), "chip")
    assert user_update(pop, spec, rng) == pytest.approx(0.3, abs=1e-12)
    # C=3: two incoming messages of 0.6
    pop = Population(np.full(50, 0.6), "chip")
    assert user_update(pop, SPEC33, rng) == pytest.approx(2.4 / 2.72, abs=1e-12)
    pop = Population(np.ones(50), "chip")
    assert user_update(pop, SPEC33, rng) == pytest.approx(1.0)


def test_population_bounds_validated():
    with pytest.raises(ValueError):
        Population(np.array([0.2, 1.2]), "user")
    with pytest.raises(ValueError):
        Population(np.array([0.0]), "chips")


def test_values_stay_bounded_through_sweeps():
    run = RSRun(SPEC33, sigma0_sq_from_psd_db(6.0), 500, "random", 5)
    for _ in range(30):
        run.sweep()
        assert np.abs(run.user).max() <= 1.0
        assert np.abs(run.chip).max() <= 1.0


def test_high_noise_pair_meets_with_half_error():
    # deep noise: both initializations collapse to the same solution and the
    # error rate approaches one half
    spec = SPEC33
    s0 = sigma0_sq_from_psd_db(-20.0)
    f, r, out, _ = solve_rs_pair(spec, s0, M=4000, max_sweeps=200, seed=1,
                                 summary_draws=1000)
    assert out.met
    assert f.trace[-1].p_b == pytest.approx(0.5, abs=0.08)
    assert r.trace[-1].p_b == pytest.approx(0.5, abs=0.08)


def test_dual_meets_at_moderate_noise():
    f, r, out, _ = solve_rs_pair(SPEC33, sigma0_sq_from_psd_db(8.0), M=8000,
                                 max_sweeps=300, seed=2, summary_draws=2000)
    assert out.met
    assert out.distance < 0.02


def test_nishimori_gauge_bias():
    run = RSRun(SPEC33, sigma0_sq_from_psd_db(6.0), 5000, "random", 9)
    for _ in range(60):
        run.sweep()
    assert float(run.chip.mean()) >= -0.01


def test_determinism_same_seed():
    a = RSRun(SPEC33, 0.1, 1000, "random", 77)
    b = RSRun(SPEC33, 0.1, 1000, "random", 77)
    for _ in range(5):
        a.sweep()
        b.sweep()
    assert np.array_equal(a.user, b.user)
    assert np.array_equal(a.chip, b.chip)


def test_checkpoint_resume_bit_exact(tmp_path):
    a = RSRun(SPEC33, 0.1, 500, "random", 3, track_stability=True)
    for _ in range(4):
        a.sweep()
    a.save_checkpoint(tmp_path / "ck")
    b = RSRun.resume(SPEC33, tmp_path / "ck")
    for _ in range(3):
        a.sweep()
        b.sweep()
    assert np.array_equal(a.user, b.user)
    assert np.array_equal(a.chip, b.chip)
    assert np.array_equal(a.v_user, b.v_user)
    assert a.log_growth[-1] == b.log_growth[-1]


def test_population_file_roundtrip(tmp_path):
    pop = Population(np.random.default_rng(0).uniform(-1, 1, 64), "chip")
    save_population(pop, tmp_path / "p.pop", sweep=7)
    back = load_population(tmp_path / "p.pop")
    assert back.role == "chip"
    assert np.array_equal(back.values, pop.values)


def test_overlap_distribution_trivial_cases():
    rng = np.random.default_rng(0)
    sol_ones = solve_rs(SPEC33, 0.05, M=200, max_sweeps=1, seed=1,
                        init="ferromagnetic")
    sol_ones.chip_pop.values[:] = 1.0
    m = overlap_distribution(sol_ones, SPEC33, 500, rng)
    assert np.all(m == 1.0)
    sol_ones.chip_pop.values[:] = 0.0
    m = overlap_distribution(sol_ones, SPEC33, 500, rng)
    assert np.all(m == 0.0)


def test_overlap_disconnected_floor_irregular():
    spec = EnsembleSpec.make("irregular", C=3, L=3, N=999)
    sol = solve_rs(spec, sigma0_sq_from_psd_db(10.0), M=4000, max_sweeps=80,
                   seed=4, init="ferromagnetic")
    m = overlap_distribution(sol, spec, 40_000, np.random.default_rng(1))
    frac_zero = float((m == 0.0).mean())
    assert frac_zero >= math.exp(-3) * 0.9


def test_excess_vs_full_degrees_in_updates():
    # regular 3:3 chip updates read exactly L-1 = 2 neighbors: with the user
    # population frozen at 1 and huge noise the update must not saturate,
    # while the overlap draw reads C = 3 neighbors
    run = RSRun(SPEC33, 1e6, 300, "ferromagnetic", 0)
    from sparsecdma.ensembles import degree_distribution
    assert degree_distribution(SPEC33, "chip", True).mean == 2
    assert degree_distribution(SPEC33, "user", True).mean == 2
    assert degree_distribution(SPEC33, "user", False).mean == 3


def test_classify_requires_sorted_grid():
    with pytest.raises(ValueError):
        classify_coexistence(SPEC33, [4.0, 2.0], M=100, seed=0, max_sweeps=2)


def test_classify_single_on_33(tmp_path):
    verdicts = classify_coexistence(SPEC33, [2.0, 8.0], M=4000, seed=5,
                                    max_sweeps=250, summary_draws=1000)
    assert [v.classification for v in verdicts] == ["single", "single"]
    for v in verdicts:
        assert v.distance < 0.02
        assert math.isfinite(v.convergence_time)
