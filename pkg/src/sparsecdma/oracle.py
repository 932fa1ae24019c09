"""Brute-force posterior evaluation on small instances.

Sums over all 2**K bit configurations with weight exp(-beta * H), where
H(tau) = sum_mu (y_mu - (S tau)_mu)^2 / (2 sigma^2).  Used to validate the
message-passing decoder, the thermodynamic estimators and the Bayes-optimal
(Nishimori) identities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HARD_CAP = 20
_CHUNK = 1 << 14


@dataclass
class ExactPosterior:
    marginals: np.ndarray   # (K,) in [-1, 1]
    log_z: float
    mean_energy: float      # <H>

    def free_energy(self, N: int, beta: float) -> float:
        return -self.log_z / (N * beta)

    def entropy(self, N: int, beta: float) -> float:
        """Per-chip entropy from s = beta (e - f)."""
        return beta * (self.mean_energy / N - self.free_energy(N, beta))


def enumerate_posterior(graph, cap: int = HARD_CAP) -> ExactPosterior:
    """Exact marginals, log partition function and mean energy.

    graph is a FactorGraph (adjacency + received values + model noise).
    """
    K = graph.K
    if K > cap:
        raise ValueError(f"K={K} exceeds enumeration cap {cap}")
    S = graph.dense_matrix()
    y = graph.y
    c = graph.beta / (2.0 * graph.sigma_sq)

    # streaming log-sum-exp over chunks of configurations
    m_best = -np.inf
    z_scaled = 0.0
    acc_tau = np.zeros(K)
    acc_h = 0.0
    total = 1 << K
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        idx = np.arange(start, stop, dtype=np.uint64)
        tau = ((idx[:, None] >> np.arange(K, dtype=np.uint64)[None, :]) & 1).astype(np.float64)
        tau = 2.0 * tau - 1.0
        r = y[None, :] - tau @ S.T
        h = (r * r).sum(axis=1) / (2.0 * graph.sigma_sq)
        logw = -graph.beta * h
        chunk_best = logw.max()
        if chunk_best > m_best:
            scale = np.exp(m_best - chunk_best)
            z_scaled *= scale
            acc_tau *= scale
            acc_h *= scale
            m_best = chunk_best
        w = np.exp(logw - m_best)
        z_scaled += w.sum()
        acc_tau += w @ tau
        acc_h += w @ h
    log_z = np.log(z_scaled) + m_best
    return ExactPosterior(marginals=acc_tau / z_scaled,
                          log_z=float(log_z),
                          mean_energy=float(acc_h / z_scaled))


def distribution_entropy(graph, cap: int = HARD_CAP) -> float:
    """Direct -sum p ln p of the enumerated posterior, per chip."""
    K = graph.K
    if K > cap:
        raise ValueError(f"K={K} exceeds enumeration cap {cap}")
    S = graph.dense_matrix()
    y = graph.y
    total = 1 << K
    logw = np.empty(total)
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        idx = np.arange(start, stop, dtype=np.uint64)
        tau = ((idx[:, None] >> np.arange(K, dtype=np.uint64)[None, :]) & 1).astype(np.float64)
        tau = 2.0 * tau - 1.0
        r = y[None, :] - tau @ S.T
        logw[start:stop] = -graph.beta * (r * r).sum(axis=1) / (2.0 * graph.sigma_sq)
    m = logw.max()
    w = np.exp(logw - m)
    z = w.sum()
    p = w / z
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum() / graph.N)
