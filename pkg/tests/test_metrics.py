import math

import numpy as np
import pytest

from sparsecdma import metrics
from sparsecdma.bp import FactorGraph
from sparsecdma.channel import random_bits, sigma0_sq_from_psd_db, transmit
from sparsecdma.ensembles import EnsembleSpec, sample_signature
from sparsecdma.oracle import enumerate_posterior
from sparsecdma.popdyn import RSRun

SPEC33 = EnsembleSpec.make("regular", C=3, L=3, N=999)


def test_entropy_and_nu_arithmetic():
    s, nu = metrics.entropy_and_nu(f=-2.0 * math.log(2), e=-math.log(2), beta=1.0, alpha=1.0)
    assert s == pytest.approx(math.log(2))
    assert nu == pytest.approx(0.0, abs=1e-12)
    s, nu = metrics.entropy_and_nu(f=0.3, e=0.3, beta=1.0, alpha=1.5)
    assert s == 0.0 and nu == 1.5
    s, nu = metrics.entropy_and_nu(f=0.5 + 0.05, e=0.5, beta=1.0, alpha=2.0)
    assert s == pytest.approx(-0.05)
    assert nu == pytest.approx(2.0721347520444482, abs=1e-12)
    assert nu > 2.0  # negative entropy flags as nu above the load


def test_ber_conventions():
    assert metrics.ber(np.ones(10)).value == 0.0
    assert metrics.ber(np.zeros(10)).value == 0.5
    assert metrics.ber(np.array([1.0, -1.0])).value == 0.5
    assert metrics.ber(np.array([1.0, 1.0, -1.0, 0.0])).value == pytest.approx(0.375)
    with pytest.raises(ValueError):
        metrics.ber(np.array([]))


def test_mutual_info_values():
    assert metrics.mutual_info(np.ones(10), 1.5).value == pytest.approx(1.5)
    assert metrics.mutual_info(np.zeros(10), 1.5).value == pytest.approx(0.0)
    got = metrics.mutual_info(np.array([0.5, -0.5]), 2.0)
    assert got.value == pytest.approx(2.0 * 0.18872187554086717, abs=1e-12)


def test_mue_round_trip_and_edges():
    for snr_value in (0.5, 2.0, 12.6, 40.0):
        pb = metrics.sug_ber(snr_value)
        val, exact = metrics.mue(pb, 1.0 / snr_value, 1.0)
        assert exact
        assert val == pytest.approx(1.0, abs=1e-12)
    val, _ = metrics.mue(0.5, 0.25, 1.0)
    assert val == 0.0
    val, exact = metrics.mue(0.0, 0.25, 1.0)
    assert val == 1.0 and not exact
    with pytest.raises(ValueError):
        metrics.mue(0.7, 0.25, 1.0)


def test_snr_convention():
    # per-user received power C/L = 1/alpha over the noise variance
    assert metrics.snr(SPEC33, 0.1) == pytest.approx(10.0)
    spec63 = EnsembleSpec.make("regular", C=3, L=6, N=10)
    assert metrics.snr(spec63, 0.1) == pytest.approx(5.0)


def test_nishimori_energy_constant():
    e = metrics.energy_rs(np.zeros(10), SPEC33, sigma0_sq=0.2)
    assert e.value == 0.5 and e.se == 0.0


def test_energy_sampler_against_oracle_flat_limit():
    # mismatched (non-Nishimori) model noise, paramagnetic populations: the
    # sampler must agree with exact enumeration averaged over small instances
    sigma0_sq, sigma_sq = 0.25, 1e6
    small = EnsembleSpec.make("regular", C=3, L=3, N=8)
    vals = []
    for seed in range(300):
        S = sample_signature(small, seed=seed)
        inst = transmit(S, random_bits(S.K, seed + 1), sigma0_sq, seed=seed + 2)
        g = FactorGraph.from_instance(S, inst, sigma_sq=sigma_sq)
        vals.append(enumerate_posterior(g).mean_energy / S.N)
    oracle_e = float(np.mean(vals))
    oracle_se = float(np.std(vals) / math.sqrt(len(vals)))
    est = metrics.energy_rs(np.zeros(50_000), SPEC33, sigma0_sq=sigma0_sq,
                            sigma_sq=sigma_sq, samples=200_000, seed=3)
    assert abs(est.value - oracle_e) <= 3 * math.hypot(est.se, oracle_se) + 1e-4


def test_free_energy_paramagnetic_limit():
    # deep-noise populations are uninformative; entropy must hit alpha ln 2
    s0 = 1e4
    zeros = np.zeros(50_000)
    f = metrics.free_energy_rs(zeros, zeros, SPEC33, s0, samples=300_000, seed=5)
    s, nu = metrics.entropy_and_nu(f.value, 0.5, 1.0, SPEC33.alpha)
    assert s == pytest.approx(SPEC33.alpha * math.log(2), abs=3 * f.se + 1e-4)
    assert abs(nu) < 3 * f.se / math.log(2) + 1e-3


def test_free_energy_matches_small_instance_entropy():
    # ensemble-averaged exact entropy on small instances versus the
    # population estimate at the same noise; finite-size gap rides inside
    # the combined tolerance at this noise level
    psd = 2.0
    s0 = sigma0_sq_from_psd_db(psd)
    small = EnsembleSpec.make("regular", C=3, L=3, N=6)
    ent = []
    for seed in range(200):
        S = sample_signature(small, seed=seed)
        inst = transmit(S, random_bits(S.K, seed + 7), s0, seed=seed + 8)
        post = enumerate_posterior(FactorGraph.from_instance(S, inst))
        ent.append(post.entropy(S.N, 1.0))
    oracle_s = float(np.mean(ent))
    oracle_se = float(np.std(ent) / math.sqrt(len(ent)))

    run = RSRun(SPEC33, s0, 20_000, "random", 21)
    for _ in range(60):
        run.sweep()
    f = metrics.free_energy_rs(run.user, run.chip, SPEC33, s0,
                               samples=400_000, seed=6)
    s, _ = metrics.entropy_and_nu(f.value, 0.5, 1.0, SPEC33.alpha)
    assert abs(s - oracle_s) <= 3 * math.hypot(f.se, oracle_se) + 0.02


def test_nu_dominates_mi_on_converged_run():
    s0 = sigma0_sq_from_psd_db(6.0)
    run = RSRun(SPEC33, s0, 20_000, "random", 22)
    for _ in range(60):
        run.sweep()
    overlap = run.overlap_sample(100_000)
    mi = metrics.mutual_info(overlap, SPEC33.alpha)
    f = metrics.free_energy_rs(run.user, run.chip, SPEC33, s0,
                               samples=400_000, seed=7)
    s, nu = metrics.entropy_and_nu(f.value, 0.5, 1.0, SPEC33.alpha)
    se = math.hypot(f.se / math.log(2), mi.se)
    assert nu >= mi.value - 3 * se


def test_report_row_format():
    rep = metrics.build_report(SPEC33, 6.0, np.array([0.9, 0.8, 1.0]),
                               solution="unique", converged=True, sweeps=42,
                               f=metrics.Estimate(0.1, 0.01))
    row = rep.csv_row()
    cells = row.split(",")
    assert len(cells) == len(metrics.PerformanceReport.CSV_FIELDS)
    assert cells[-3] == "unique" and cells[-2] == "1" and cells[-1] == "42"
    # repr round-trip: every numeric cell parses back to the same float
    assert float(cells[0]) == 6.0
    assert float(cells[9]) == rep.p_b


def test_binary_entropy_endpoints():
    h = metrics.binary_entropy_bits(np.array([0.0, 0.5, 1.0, 0.75]))
    assert h[0] == 0.0 and h[2] == 0.0
    assert h[1] == pytest.approx(1.0)
    assert h[3] == pytest.approx(0.8112781244591328, abs=1e-12)
