"""Sparse signature ensembles: regular, partly-regular and irregular codes.

A code "L:C" has mean chip degree L (users contributing per chip) and mean
user degree C (chips per user); the load is alpha = K/N = L/C.  Nonzero
signature entries (gains) are drawn with mean square 1/L so the total
received power is N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("regular", "partly_regular", "irregular")


class EnsembleError(ValueError):
    """Invalid ensemble parameters or failed matrix construction."""


@dataclass(frozen=True)
class GainDistribution:
    """Distribution of nonzero signature entries.

    bpsk draws uniformly from {-scale, +scale}; constant always yields
    +scale.  scale is 1/sqrt(L) so the mean square is exactly 1/L.
    """

    kind: str = "bpsk"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bpsk", "constant"):
            raise EnsembleError(f"unknown gain kind {self.kind!r}")
        if not self.scale > 0:
            raise EnsembleError("gain scale must be positive")

    @classmethod
    def for_chip_mean(cls, L: float, kind: str = "bpsk") -> "GainDistribution":
        return cls(kind=kind, scale=1.0 / math.sqrt(L))

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        if self.kind == "constant":
            return np.full(size, self.scale) if size is not None else self.scale
        signs = rng.integers(0, 2, size=size) * 2 - 1
        return signs * self.scale

    @property
    def mean_square(self) -> float:
        return self.scale * self.scale


@dataclass(frozen=True)
class DegreeDist:
    """Discrete degree distribution: a point mass or a Poisson law."""

    kind: str  # "delta" | "poisson"
    value: float  # location of the point mass, or the Poisson mean

    def __post_init__(self):
        if self.kind not in ("delta", "poisson"):
            raise EnsembleError(f"unknown degree distribution {self.kind!r}")
        if self.value < 0:
            raise EnsembleError("degree parameter must be non-negative")

    @property
    def mean(self) -> float:
        return float(self.value)

    def pmf(self, k: int) -> float:
        if k < 0:
            return 0.0
        if self.kind == "delta":
            return 1.0 if k == int(round(self.value)) else 0.0
        lam = self.value
        return math.exp(-lam + k * math.log(lam) - math.lgamma(k + 1)) if lam > 0 else float(k == 0)

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "delta":
            v = int(round(self.value))
            return v if size is None else np.full(size, v, dtype=np.int64)
        return rng.poisson(self.value, size=size)

    def table(self, tail: float = 1e-12, cap: int | None = None):
        """Finite support and renormalized probabilities (ks, ps)."""
        if self.kind == "delta":
            v = int(round(self.value))
            return np.array([v]), np.array([1.0])
        lam = self.value
        ks, ps, cum = [], [], 0.0
        k = 0
        while cum < 1.0 - tail:
            p = self.pmf(k)
            ks.append(k)
            ps.append(p)
            cum += p
            k += 1
            if cap is not None and k > cap:
                break
        ps = np.asarray(ps)
        return np.asarray(ks), ps / ps.sum()


@dataclass(frozen=True)
class EnsembleSpec:
    """Parameters of a sparse signature ensemble.

    Invariant: alpha = K/N = L/C exactly.  For the regular kind C and L are
    integers with K*C == N*L; partly_regular fixes the user degree at the
    integer C with Poissonian chip degrees; irregular is i.i.d. Bernoulli(C/N)
    per entry, giving Poissonian degrees on both sides.
    """

    kind: str
    C: float
    L: float
    N: int
    K: int
    gain: GainDistribution = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EnsembleError(f"unknown ensemble kind {self.kind!r}")
        if self.N <= 0 or self.K <= 0 or self.C <= 0 or self.L <= 0:
            raise EnsembleError("sizes and degrees must be positive")
        if abs(self.K * self.C - self.N * self.L) > 1e-9 * max(1.0, self.N * self.L):
            raise EnsembleError(
                f"load identity violated: K*C={self.K * self.C} != N*L={self.N * self.L}")
        if self.kind in ("regular", "partly_regular") and self.C != int(self.C):
            raise EnsembleError("C must be an integer for this ensemble kind")
        if self.kind == "regular":
            if self.L != int(self.L):
                raise EnsembleError("L must be an integer for the regular ensemble")
            if int(self.K * self.C) != int(self.N * self.L):
                raise EnsembleError("regular ensemble needs K*C == N*L exactly")
        if self.gain is None:
            object.__setattr__(self, "gain", GainDistribution.for_chip_mean(self.L))

    @property
    def alpha(self) -> float:
        return self.K / self.N

    @property
    def label(self) -> str:
        return f"{self.L:g}:{self.C:g}"

    @classmethod
    def make(cls, kind: str, C: float, L: float, N: int, K: int | None = None,
             gain_kind: str = "bpsk") -> "EnsembleSpec":
        """Build a spec, deriving K = N*L/C when it is not given."""
        if K is None:
            K = N * L / C
            if abs(K - round(K)) > 1e-9:
                raise EnsembleError(f"N*L/C = {K} is not an integer; pick another N")
            K = int(round(K))
        return cls(kind=kind, C=C, L=L, N=N, K=K,
                   gain=GainDistribution.for_chip_mean(L, gain_kind))


def degree_distribution(spec: EnsembleSpec, role: str, excess: bool) -> DegreeDist:
    """Full or excess degree distribution of one side of the graph.

    Poissonian sides have identical full and excess distributions; fixed
    degrees d have excess d-1.
    """
    if role not in ("chip", "user"):
        raise EnsembleError(f"role must be 'chip' or 'user', got {role!r}")
    if role == "chip":
        fixed = spec.kind == "regular"
        mean = spec.L
    else:
        fixed = spec.kind in ("regular", "partly_regular")
        mean = spec.C
    if fixed:
        return DegreeDist("delta", mean - 1 if excess else mean)
    return DegreeDist("poisson", mean)


class SignatureMatrix:
    """Sparse chip-by-user signature matrix as an edge list with gains."""

    def __init__(self, N: int, K: int, mu: np.ndarray, k: np.ndarray,
                 xi: np.ndarray, kind: str = "regular", C: float = 0.0, L: float = 0.0):
        self.N = int(N)
        self.K = int(K)
        order = np.lexsort((k, mu))
        self.mu = np.asarray(mu, dtype=np.int64)[order]
        self.k = np.asarray(k, dtype=np.int64)[order]
        self.xi = np.asarray(xi, dtype=np.float64)[order]
        self.kind = kind
        self.C = C
        self.L = L
        if self.mu.size:
            if self.mu.min() < 0 or self.mu.max() >= N or self.k.min() < 0 or self.k.max() >= K:
                raise EnsembleError("edge endpoint out of range")
        pairs = self.mu * self.K + self.k
        if np.unique(pairs).size != pairs.size:
            raise EnsembleError("duplicate (chip, user) entry")
        self._chip_csr = None
        self._user_csr = None

    @property
    def n_entries(self) -> int:
        return self.xi.size

    @property
    def chip_degrees(self) -> np.ndarray:
        return np.bincount(self.mu, minlength=self.N)

    @property
    def user_degrees(self) -> np.ndarray:
        return np.bincount(self.k, minlength=self.K)

    def chip_csr(self):
        """(ptr, users, gains) grouped by chip; edge order is the native one."""
        if self._chip_csr is None:
            ptr = np.zeros(self.N + 1, dtype=np.int64)
            np.cumsum(np.bincount(self.mu, minlength=self.N), out=ptr[1:])
            self._chip_csr = (ptr, self.k, self.xi)
        return self._chip_csr

    def user_csr(self):
        """(ptr, chips, gains, edge_idx) grouped by user."""
        if self._user_csr is None:
            order = np.lexsort((self.mu, self.k))
            ptr = np.zeros(self.K + 1, dtype=np.int64)
            np.cumsum(np.bincount(self.k, minlength=self.K), out=ptr[1:])
            self._user_csr = (ptr, self.mu[order], self.xi[order], order)
        return self._user_csr

    def toarray(self) -> np.ndarray:
        dense = np.zeros((self.N, self.K))
        dense[self.mu, self.k] = self.xi
        return dense

    def gauged(self, bits: np.ndarray) -> "SignatureMatrix":
        """New matrix with every gain multiplied by its user's bit."""
        b = np.asarray(bits)
        return SignatureMatrix(self.N, self.K, self.mu, self.k,
                               self.xi * b[self.k], self.kind, self.C, self.L)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"{self.N} {self.K} {self.kind} {float(self.C)!r} {float(self.L)!r}\n")
            for mu, k, xi in zip(self.mu, self.k, self.xi):
                fh.write(f"{mu} {k} {float(xi)!r}\n")

    @classmethod
    def load(cls, path) -> "SignatureMatrix":
        with open(path) as fh:
            head = fh.readline().split()
            N, K, kind = int(head[0]), int(head[1]), head[2]
            C, L = float(head[3]), float(head[4])
            mu, k, xi = [], [], []
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                mu.append(int(parts[0]))
                k.append(int(parts[1]))
                xi.append(float(parts[2]))
        return cls(N, K, np.array(mu, dtype=np.int64), np.array(k, dtype=np.int64),
                   np.array(xi), kind, C, L)


def sample_signature(spec: EnsembleSpec, seed: int) -> SignatureMatrix:
    """Draw a signature matrix from the ensemble; deterministic given seed."""
    rng = np.random.default_rng(seed)
    if spec.kind == "regular":
        mu, k = _regular_edges(spec, rng)
    elif spec.kind == "partly_regular":
        mu, k = _partly_regular_edges(spec, rng)
    else:
        mu, k = _irregular_edges(spec, rng)
    xi = spec.gain.sample(rng, size=mu.size)
    return SignatureMatrix(spec.N, spec.K, mu, k, xi, spec.kind, spec.C, spec.L)


def _regular_edges(spec: EnsembleSpec, rng: np.random.Generator):
    """Configuration model with edge-swap repair of parallel edges."""
    C, L = int(spec.C), int(spec.L)
    E = spec.K * C
    for _attempt in range(50):
        k = np.repeat(np.arange(spec.K), C)
        mu = np.repeat(np.arange(spec.N), L)
        rng.shuffle(mu)
        if _repair_parallel(mu, k, rng, max_swaps=100 * E):
            return mu, k
    raise EnsembleError("could not repair parallel edges; ensemble too tight")


def _repair_parallel(mu: np.ndarray, k: np.ndarray, rng: np.random.Generator,
                     max_swaps: int) -> bool:
    E = mu.size
    counts: dict[tuple[int, int], int] = {}
    for e in range(E):
        p = (int(mu[e]), int(k[e]))
        counts[p] = counts.get(p, 0) + 1
    dup = [e for e in range(E) if counts[(int(mu[e]), int(k[e]))] > 1]
    swaps = 0
    while dup and swaps < max_swaps:
        e1 = dup[-1]
        p1 = (int(mu[e1]), int(k[e1]))
        if counts[p1] <= 1:  # already fixed by an earlier swap
            dup.pop()
            continue
        e2 = int(rng.integers(0, E))
        swaps += 1
        if e2 == e1:
            continue
        p2 = (int(mu[e2]), int(k[e2]))
        q1 = (p1[0], p2[1])
        q2 = (p2[0], p1[1])
        if counts.get(q1, 0) or counts.get(q2, 0) or q1 == q2:
            continue
        counts[p1] -= 1
        counts[p2] -= 1
        counts[q1] = counts.get(q1, 0) + 1
        counts[q2] = counts.get(q2, 0) + 1
        k[e1], k[e2] = k[e2], k[e1]
        dup.pop()
    return not dup


def _distinct_chips(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """d distinct uniform chips out of n; rejection is cheap since d << n."""
    if d > n:
        raise EnsembleError("user degree exceeds the number of chips")
    picks = rng.integers(0, n, size=d)
    while np.unique(picks).size != d:
        picks = rng.integers(0, n, size=d)
    return picks


def _partly_regular_edges(spec: EnsembleSpec, rng: np.random.Generator):
    C = int(spec.C)
    mu = np.empty(spec.K * C, dtype=np.int64)
    for u in range(spec.K):
        mu[u * C:(u + 1) * C] = _distinct_chips(rng, spec.N, C)
    k = np.repeat(np.arange(spec.K), C)
    return mu, k


def _irregular_edges(spec: EnsembleSpec, rng: np.random.Generator):
    # i.i.d. Bernoulli(C/N) per entry == per-user Binomial(N, C/N) degree
    # with a uniform distinct chip set of that size
    degs = rng.binomial(spec.N, spec.C / spec.N, size=spec.K)
    mu = np.empty(int(degs.sum()), dtype=np.int64)
    k = np.repeat(np.arange(spec.K), degs)
    pos = 0
    for u in range(spec.K):
        d = int(degs[u])
        if d:
            mu[pos:pos + d] = _distinct_chips(rng, spec.N, d)
            pos += d
    return mu, k
