"""Binary-input AWGN transmission and noise bookkeeping.

The noise axis used throughout is the power spectral density
PSD = 1/(2 sigma0^2), reported in dB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ensembles import SignatureMatrix


@dataclass
class ChannelInstance:
    """One transmitted word: y = S b + omega with omega ~ N(0, sigma0^2)."""

    bits: np.ndarray      # (K,) +-1
    omega: np.ndarray     # (N,)
    y: np.ndarray         # (N,)
    sigma0_sq: float


def transmit(S: SignatureMatrix, bits, sigma0_sq: float, seed: int) -> ChannelInstance:
    """Send bits through the channel; deterministic given seed.

    sigma0_sq == 0 gives the noiseless channel.
    """
    b = np.asarray(bits, dtype=np.float64)
    if b.shape != (S.K,):
        raise ValueError(f"bits must have length K={S.K}")
    if not np.all(np.abs(b) == 1.0):
        raise ValueError("bits must be +-1")
    if sigma0_sq < 0:
        raise ValueError("sigma0_sq must be non-negative")
    rng = np.random.default_rng(seed)
    if sigma0_sq == 0.0:
        omega = np.zeros(S.N)
    else:
        omega = rng.normal(0.0, math.sqrt(sigma0_sq), size=S.N)
    y = np.zeros(S.N)
    np.add.at(y, S.mu, S.xi * b[S.k])
    y += omega
    return ChannelInstance(bits=b, omega=omega, y=y, sigma0_sq=float(sigma0_sq))


def random_bits(K: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.integers(0, 2, size=K) * 2 - 1).astype(np.float64)


def psd_db(sigma0_sq: float) -> float:
    """Power spectral density 1/(2 sigma0^2) in dB."""
    if sigma0_sq <= 0:
        raise ValueError("sigma0_sq must be positive")
    return 10.0 * math.log10(1.0 / (2.0 * sigma0_sq))


def sigma0_sq_from_psd_db(psd: float) -> float:
    """Inverse of psd_db; round-trips to 1e-12."""
    return 10.0 ** (-psd / 10.0) / 2.0


def save_instance(inst: ChannelInstance, path, include_truth: bool = True) -> None:
    """Text export: header "N K sigma0_sq", y values, then optional b and
    omega sections for test fixtures."""
    with open(path, "w") as fh:
        fh.write(f"{inst.y.size} {inst.bits.size} {float(inst.sigma0_sq)!r}\n")
        for v in inst.y:
            fh.write(f"{float(v)!r}\n")
        if include_truth:
            fh.write("b\n")
            for v in inst.bits:
                fh.write(f"{int(v)}\n")
            fh.write("omega\n")
            for v in inst.omega:
                fh.write(f"{float(v)!r}\n")


def load_instance(path) -> ChannelInstance:
    with open(path) as fh:
        head = fh.readline().split()
        N, K, s0 = int(head[0]), int(head[1]), float(head[2])
        y = np.array([float(fh.readline()) for _ in range(N)])
        bits = np.full(K, np.nan)
        omega = np.full(N, np.nan)
        line = fh.readline().strip()
        if line == "b":
            bits = np.array([float(fh.readline()) for _ in range(K)])
            line = fh.readline().strip()
        if line == "omega":
            omega = np.array([float(fh.readline()) for _ in range(N)])
    return ChannelInstance(bits=bits, omega=omega, y=y, sigma0_sq=s0)
