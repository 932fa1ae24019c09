"""Shared instance builders for the test suite."""

import numpy as np

from sparsecdma.ensembles import SignatureMatrix


def random_tree_matrix(K: int, N: int, rng: np.random.Generator,
                       scale: float = 0.5773502691896258,
                       gains: str = "bpsk") -> SignatureMatrix:
    """Random alternating bipartite tree with K users and N chips.

    Chips attach to an existing user and users to an existing chip, in random
    interleaved order, so the factor graph is a tree with every edge
    user-chip.  gains="generic" draws continuous magnitudes, which makes the
    zero-noise ground state unique (equal-magnitude BPSK gains can cancel).
    """
    mu, kk = [], []
    users = [0]
    chips: list[int] = []
    adds = ["c"] * N + ["u"] * (K - 1)
    rng.shuffle(adds)
    first_chip = adds.index("c")
    adds[0], adds[first_chip] = adds[first_chip], adds[0]
    for t in adds:
        if t == "c":
            c = len(chips)
            chips.append(c)
            mu.append(c)
            kk.append(int(rng.integers(0, len(users))))
        else:
            u = len(users)
            users.append(u)
            kk.append(u)
            mu.append(int(rng.integers(0, len(chips))))
    if gains == "generic":
        xi = rng.normal(0.0, scale, size=len(mu))
        xi[np.abs(xi) < 0.05] = 0.05
    else:
        xi = (rng.integers(0, 2, size=len(mu)) * 2 - 1) * scale
    return SignatureMatrix(N, K, np.array(mu), np.array(kk), np.asarray(xi),
                           "tree", 0.0, 0.0)
