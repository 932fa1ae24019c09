import math

import numpy as np
import pytest

from sparsecdma.chipbound import (BRUTE_FORCE_CAP, ChipDegreeTable,
                                  bound_table_csv, chip_concavity_check,
                                  chip_entropy_brute_force, chip_entropy_term,
                                  chip_mi_zero_noise)


def test_hand_values():
    assert chip_entropy_term(0) == 0.0
    assert chip_entropy_term(1) == 0.0
    assert chip_entropy_term(2) == 0.5
    assert chip_entropy_brute_force(1) == 0.0
    assert chip_entropy_brute_force(2) == 0.5
    assert chip_mi_zero_noise(ChipDegreeTable.delta(1)) == 1.0
    assert chip_mi_zero_noise(ChipDegreeTable.delta(2)) == 1.5


@pytest.mark.parametrize("d", range(1, 9))
def test_formula_equals_brute_force(d):
    assert chip_entropy_term(d) == pytest.approx(chip_entropy_brute_force(d),
                                                 abs=1e-12)


def test_regular_beats_poisson():
    for L in range(2, 7):
        reg = chip_mi_zero_noise(ChipDegreeTable.delta(L))
        poi = chip_mi_zero_noise(ChipDegreeTable.poisson(float(L)))
        assert reg > poi


def test_point_mass_has_no_mixing_gap():
    # averaging a single-degree table is the degree itself: Jensen gap zero
    t = ChipDegreeTable.delta(4)
    assert chip_mi_zero_noise(t) == pytest.approx(4 - chip_entropy_term(4))


def test_information_concave_and_monotone():
    rep = chip_concavity_check(10)
    assert rep.concave
    assert (rep.second_differences <= 1e-12).all()
    assert (np.diff(rep.mi) > 0).all()  # more users per chip, more information


def test_second_differences_from_brute_force_small():
    h = [chip_entropy_brute_force(d) for d in (1, 2, 3)]
    mi = [d - h[d - 1] for d in (1, 2, 3)]
    assert mi[2] + mi[0] - 2 * mi[1] <= 0.0


def test_poisson_table_properties():
    t = ChipDegreeTable.poisson(3.0)
    assert abs(sum(t.probs) - 1.0) < 1e-12
    assert abs(t.mean - 3.0) < 1e-12
    assert max(t.degrees) <= 30


def test_table_validation():
    with pytest.raises(ValueError):
        ChipDegreeTable(degrees=(1, 2), probs=(0.7, 0.2))
    with pytest.raises(ValueError):
        ChipDegreeTable(degrees=(40,), probs=(1.0,))
    with pytest.raises(ValueError):
        chip_entropy_brute_force(BRUTE_FORCE_CAP + 1)


def test_per_bit_information_decays():
    # information per decoded bit falls off with degree, power-law-like on a
    # log-log scale; slope reported but only its sign is guarded
    per_bit = np.array([(d - chip_entropy_term(d)) / d for d in range(1, 13)])
    assert (np.diff(per_bit) < 0).all()
    slope = np.polyfit(np.log(np.arange(1, 13)), np.log(per_bit), 1)[0]
    assert slope < 0


def test_csv_output(tmp_path):
    path = tmp_path / "cb.csv"
    bound_table_csv(range(1, 6), path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "L,ensemble,I_bits,loss_bits"
    assert len(lines) == 1 + 5 * 2
    row = lines[1].split(",")
    assert row[1] == "regular"
    assert float(row[2]) == 1.0
