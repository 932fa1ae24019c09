"""Zero-noise mutual information carried by a single chip.

A chip of degree d with BPSK gains identifies the local bit pattern up to
ground-state degeneracy: sign patterns of tau that cancel in pairs leave the
chip value unchanged.  The expected information is d minus the average log2
ground-state count; the count for a pattern with p misaligned gain-bit
products is sum_i C(d-p, i) C(p, i).  Everything here is exact integer
combinatorics evaluated in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BRUTE_FORCE_CAP = 16
TABLE_DEGREE_CAP = 30


@dataclass(frozen=True)
class ChipDegreeTable:
    """Finite chip-degree law: explicit support and probabilities.

    The stored mean is the exact mean of the (possibly truncated and
    renormalized) table, so it may differ from a requested Poisson rate in
    the last few ulps.
    """

    degrees: tuple[int, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.degrees) != len(self.probs):
            raise ValueError("degrees and probs must align")
        if any(d < 0 for d in self.degrees):
            raise ValueError("degrees must be non-negative")
        if any(d > TABLE_DEGREE_CAP for d in self.degrees):
            raise ValueError(f"degrees above {TABLE_DEGREE_CAP} not supported")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total}, not 1")

    @property
    def mean(self) -> float:
        return math.fsum(d * p for d, p in zip(self.degrees, self.probs))

    @classmethod
    def delta(cls, L: int) -> "ChipDegreeTable":
        return cls(degrees=(int(L),), probs=(1.0,))

    @classmethod
    def poisson(cls, rate: float, tail: float = 1e-15) -> "ChipDegreeTable":
        """Poisson law truncated once the remaining tail mass is below
        `tail`, then renormalized."""
        if rate <= 0:
            raise ValueError("rate must be positive")
        degrees, probs = [], []
        cum = 0.0
        k = 0
        while cum < 1.0 - tail and k <= TABLE_DEGREE_CAP:
            p = math.exp(-rate + k * math.log(rate) - math.lgamma(k + 1))
            degrees.append(k)
            probs.append(p)
            cum += p
            k += 1
        total = math.fsum(probs)
        return cls(degrees=tuple(degrees), probs=tuple(p / total for p in probs))


def chip_entropy_term(d: int) -> float:
    """Average log2 ground-state count of a degree-d chip, in bits.

    Exact binomial sum: p ~ Binomial(d, 1/2) misaligned products, each giving
    sum_i C(d-p, i) C(p, i) degenerate patterns.
    """
    if d < 0:
        raise ValueError("degree must be non-negative")
    if d == 0:
        return 0.0
    total = 0.0
    for p in range(d + 1):
        count = sum(math.comb(d - p, i) * math.comb(p, i)
                    for i in range(min(p, d - p) + 1))
        total += math.comb(d, p) * math.log2(count)
    return total / 2.0**d


def chip_mi_zero_noise(table: ChipDegreeTable) -> float:
    """Expected single-chip mutual information in bits at zero noise."""
    loss = math.fsum(p * chip_entropy_term(d)
                     for d, p in zip(table.degrees, table.probs))
    return table.mean - loss


def chip_entropy_brute_force(d: int) -> float:
    """Direct ground-state count over all gain sign and bit patterns.

    Enumerates every (gain signs, bits) pair, counts the tau patterns with
    sum_i xi_i (b_i - tau_i) = 0 by exact integer arithmetic, and averages
    log2 of the count.  This is the oracle for chip_entropy_term.
    """
    if d < 0:
        raise ValueError("degree must be non-negative")
    if d > BRUTE_FORCE_CAP:
        raise ValueError(f"degree {d} above brute-force cap {BRUTE_FORCE_CAP}")
    if d == 0:
        return 0.0
    T = ((np.arange(2**d)[:, None] >> np.arange(d)[None, :]) & 1) * 2 - 1
    T = T.astype(np.int64)
    total = 0.0
    for xi in T:
        dots = T @ xi                       # tau . xi and b . xi for all patterns
        counts = np.bincount(dots + d, minlength=2 * d + 1)
        total += np.log2(counts[dots + d]).sum()
    return float(total / 4.0**d)


@dataclass
class ConcavityReport:
    degrees: np.ndarray
    mi: np.ndarray
    second_differences: np.ndarray
    concave: bool


def chip_concavity_check(L_max: int) -> ConcavityReport:
    """Second differences of the per-degree chip information d - h(d).

    Concavity (all second differences <= 0) is what makes the point-mass
    degree law optimal among laws of equal mean, via Jensen.  Uses the
    brute-force entropy values as the data source.
    """
    if L_max > BRUTE_FORCE_CAP:
        raise ValueError(f"L_max above brute-force cap {BRUTE_FORCE_CAP}")
    degrees = np.arange(0, L_max + 1)
    mi = np.array([d - chip_entropy_brute_force(int(d)) for d in degrees])
    second = mi[2:] - 2.0 * mi[1:-1] + mi[:-2]
    return ConcavityReport(degrees=degrees, mi=mi, second_differences=second,
                           concave=bool((second <= 1e-12).all()))


def bound_table_csv(L_values, out_path) -> None:
    """CSV of the zero-noise bound for regular and Poisson chip laws."""
    with open(out_path, "w") as fh:
        fh.write("L,ensemble,I_bits,loss_bits\n")
        for L in L_values:
            for name, table in (("regular", ChipDegreeTable.delta(L)),
                                ("poisson", ChipDegreeTable.poisson(L))):
                mi = chip_mi_zero_noise(table)
                loss = table.mean - mi
                fh.write(f"{L},{name},{mi!r},{loss!r}\n")
