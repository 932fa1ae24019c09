"""Belief-propagation MPM decoder on a finite factor graph.

Chips are factor nodes carrying the received value y_a; users are variable
nodes.  Messages are cavity magnetizations in [-1, 1] updated with a flooding
schedule (all chip messages, then all user messages).  The chip trace is done
in the log domain and costs 2**degree, so chip degrees are capped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelInstance
from .ensembles import SignatureMatrix
from .kernels import SATURATION_EPS, tau_table

DEFAULT_DEGREE_CAP = 20


class DegreeCapError(ValueError):
    """A chip degree exceeds the exact-trace budget."""


@dataclass
class FactorGraph:
    """Decoding instance: signature matrix, received values, model noise."""

    S: SignatureMatrix
    y: np.ndarray
    sigma_sq: float
    beta: float = 1.0
    degree_cap: int = DEFAULT_DEGREE_CAP

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.shape != (self.S.N,):
            raise ValueError("y must have one entry per chip")
        if self.sigma_sq <= 0:
            raise ValueError("model noise variance must be positive")
        dmax = int(self.S.chip_degrees.max()) if self.S.n_entries else 0
        if dmax > self.degree_cap:
            raise DegreeCapError(f"chip degree {dmax} exceeds cap {self.degree_cap}")

    @property
    def N(self) -> int:
        return self.S.N

    @property
    def K(self) -> int:
        return self.S.K

    @classmethod
    def from_instance(cls, S: SignatureMatrix, inst: ChannelInstance,
                      sigma_sq: float | None = None, beta: float = 1.0,
                      degree_cap: int = DEFAULT_DEGREE_CAP) -> "FactorGraph":
        """Nishimori mode by default: model variance = true channel variance."""
        s2 = inst.sigma0_sq if sigma_sq is None else sigma_sq
        return cls(S=S, y=inst.y, sigma_sq=s2, beta=beta, degree_cap=degree_cap)

    def dense_matrix(self) -> np.ndarray:
        return self.S.toarray()


@dataclass
class BPResult:
    magnetizations: np.ndarray
    estimates: np.ndarray
    converged: bool
    sweeps: int
    max_delta: float


def bp_update_chip(y_a: float, gain_i: float, gains_rest, x_rest,
                   sigma_sq: float, beta: float = 1.0) -> float:
    """Chip-to-user cavity message.

    Traces the target spin together with the other spins on the chip, each of
    the latter weighted by (1 + tau x); returns the posterior cavity mean of
    the target spin.
    """
    g = np.concatenate([np.atleast_1d(np.asarray(gains_rest, dtype=np.float64)),
                        [gain_i]])
    x = np.atleast_1d(np.asarray(x_rest, dtype=np.float64))
    d = x.size
    tau = tau_table(d + 1)
    r = y_a - tau @ g
    logw = -(beta / (2.0 * sigma_sq)) * r * r
    if d:
        with np.errstate(divide="ignore"):
            logw = logw + np.log1p(tau[:, :d] * x[None, :]).sum(axis=1)
    cav = tau[:, -1]
    return _ratio_from_logw(logw, cav)


def bp_update_user(xhat_rest) -> float:
    """User-to-chip message: tanh of the summed atanh of incoming messages."""
    xh = np.atleast_1d(np.asarray(xhat_rest, dtype=np.float64))
    if xh.size == 0:
        return 0.0
    c = np.clip(xh, -1.0 + SATURATION_EPS, 1.0 - SATURATION_EPS)
    return float(np.tanh(np.arctanh(c).sum()))


def _ratio_from_logw(logw: np.ndarray, cav: np.ndarray) -> float:
    lp = _lse(logw[cav > 0])
    lm = _lse(logw[cav < 0])
    if math.isinf(lp) and math.isinf(lm):
        return 0.0
    return float(np.tanh(0.5 * (lp - lm)))


def _lse(v: np.ndarray) -> float:
    m = v.max()
    if not np.isfinite(m):
        return -np.inf
    return float(np.log(np.exp(v - m).sum()) + m)


class _EdgeLayout:
    """Degree-grouped CSR views used by the vectorized flooding sweeps."""

    def __init__(self, graph: FactorGraph):
        S = graph.S
        self.E = S.n_entries
        chip_ptr, chip_users, chip_gains = S.chip_csr()
        user_ptr, _, _, user_edges = S.user_csr()
        self.chip_groups = _group(chip_ptr)
        self.user_groups = _group(user_ptr)
        self.chip_users = chip_users
        self.chip_gains = chip_gains
        self.user_edges = user_edges  # edge index (chip order) per user-order slot
        self.user_ptr = user_ptr
        self.chip_ptr = chip_ptr
        self.y = graph.y


def _group(ptr: np.ndarray) -> dict[int, np.ndarray]:
    """Map degree -> array of node indices with that degree."""
    degs = np.diff(ptr)
    out: dict[int, np.ndarray] = {}
    for d in np.unique(degs):
        out[int(d)] = np.flatnonzero(degs == d)
    return out


def bp_decode(graph: FactorGraph, max_sweeps: int = 200, tol: float = 1e-10,
              damping: float = 0.0) -> BPResult:
    """Iterate the cavity equations to a fixed point and read out marginals.

    Messages start uniform (x = 0).  Convergence is declared when the largest
    message change in a sweep drops below tol; otherwise the last iterate is
    returned with converged=False.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must be in [0, 1)")
    lay = _EdgeLayout(graph)
    E = lay.E
    x_uc = np.zeros(E)    # user -> chip, indexed in chip-CSR edge order
    xh_cu = np.zeros(E)   # chip -> user, same indexing
    beta, s2 = graph.beta, graph.sigma_sq
    max_delta = np.inf
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        new_xh = np.empty(E)
        for d, chips in lay.chip_groups.items():
            if d == 0:
                continue
            sl = (lay.chip_ptr[chips][:, None] + np.arange(d)[None, :])
            _chip_pass(lay.y[chips], lay.chip_gains[sl], x_uc[sl],
                       s2, beta, out=new_xh, slots=sl)
        if damping:
            new_xh = (1 - damping) * new_xh + damping * xh_cu
        delta = float(np.max(np.abs(new_xh - xh_cu))) if E else 0.0
        xh_cu = new_xh

        new_x = np.empty(E)
        for d, users in lay.user_groups.items():
            if d == 0:
                continue
            sl = (lay.user_ptr[users][:, None] + np.arange(d)[None, :])
            e = lay.user_edges[sl]
            inc = np.clip(xh_cu[e], -1.0 + SATURATION_EPS, 1.0 - SATURATION_EPS)
            at = np.arctanh(inc)
            tot = at.sum(axis=1, keepdims=True)
            new_x[e.ravel()] = np.tanh(tot - at).ravel()
        if damping:
            new_x = (1 - damping) * new_x + damping * x_uc
        delta = max(delta, float(np.max(np.abs(new_x - x_uc))) if E else 0.0)
        x_uc = new_x
        max_delta = delta
        if delta < tol:
            break

    m = np.zeros(graph.K)
    for d, users in lay.user_groups.items():
        if d == 0:
            continue
        sl = (lay.user_ptr[users][:, None] + np.arange(d)[None, :])
        e = lay.user_edges[sl]
        inc = np.clip(xh_cu[e], -1.0 + SATURATION_EPS, 1.0 - SATURATION_EPS)
        m[users] = np.tanh(np.arctanh(inc).sum(axis=1))
    estimates = np.where(m >= 0, 1.0, -1.0)
    return BPResult(magnetizations=m, estimates=estimates,
                    converged=max_delta < tol, sweeps=sweeps, max_delta=max_delta)


def _chip_pass(y, gains, x, sigma_sq, beta, out, slots):
    """Vectorized chip update for all chips of one degree.

    y: (n,), gains/x: (n, d); writes the d outgoing messages of each chip
    into out[slots].
    """
    n, d = x.shape
    tau = tau_table(d)
    r = y[:, None] - gains @ tau.T                      # (n, T)
    base = -(beta / (2.0 * sigma_sq)) * r * r
    with np.errstate(divide="ignore"):
        terms = np.log1p(x[:, None, :] * tau[None, :, :])  # (n, T, d)
    # prefix/suffix sums give exact leave-one-out message products
    pre = np.zeros((n, tau.shape[0], d + 1))
    suf = np.zeros((n, tau.shape[0], d + 1))
    for j in range(d):
        pre[:, :, j + 1] = pre[:, :, j] + terms[:, :, j]
        suf[:, :, d - 1 - j] = suf[:, :, d - j] + terms[:, :, d - 1 - j]
    msgs = np.empty((n, d))
    for j in range(d):
        logw = base + pre[:, :, j] + suf[:, :, j + 1]
        tj = tau[:, j]
        lp = _lse_rows(logw[:, tj > 0])
        lm = _lse_rows(logw[:, tj < 0])
        msgs[:, j] = _tanh_pair(lp, lm)
    out[slots.ravel()] = msgs.ravel()


def _lse_rows(v: np.ndarray) -> np.ndarray:
    m = v.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(v - safe[:, None]).sum(axis=1)) + safe


def _tanh_pair(lp: np.ndarray, lm: np.ndarray) -> np.ndarray:
    out = np.zeros_like(lp)
    ok = ~(np.isneginf(lp) & np.isneginf(lm))
    out[ok] = np.tanh(0.5 * (lp[ok] - lm[ok]))
    return out
