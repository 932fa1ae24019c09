"""Cavity-update kernels shared by the population-dynamics solver and its tests.

All kernels work in the gauge where the sent word is all-ones, so a chip of
excess degree d sees d incoming cavity magnetizations x_1..x_d, d+1 gain
factors (the last one belonging to the cavity edge itself) and one noise draw.
Gaussian factors are exponentiated after subtracting the per-sample maximum;
message products (1 + tau x) are taken in the linear domain, which is exact
and bounded by 2**d.  Rows that still underflow fall back to a full
log-domain trace.  Outputs are guaranteed to lie in [-1, 1].
"""

from __future__ import annotations

import numpy as np

_TAU_CACHE: dict[int, np.ndarray] = {}

#: messages are clamped to this distance from +-1 before atanh-style combines
SATURATION_EPS = 1e-12


def tau_table(n: int) -> np.ndarray:
    """All 2**n sign configurations as a (2**n, n) array of +-1 floats."""
    if n not in _TAU_CACHE:
        if n < 0:
            raise ValueError("n must be non-negative")
        if n > 24:
            raise ValueError(f"refusing to enumerate 2**{n} configurations")
        bits = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
        _TAU_CACHE[n] = (2.0 * bits - 1.0).astype(np.float64)
    return _TAU_CACHE[n]


def _as_batch(x: np.ndarray, xi: np.ndarray, omega: np.ndarray):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    omega = np.atleast_1d(np.asarray(omega, dtype=np.float64))
    if xi.shape[1] != x.shape[1] + 1:
        raise ValueError("need one more gain than incoming magnetizations")
    if omega.shape[0] != x.shape[0]:
        raise ValueError("batch size mismatch")
    return x, xi, omega


def _gauss_log(x, xi, omega, sigma_sq, beta):
    """Gaussian log factor of every spin configuration, (batch, 2**(d+1)).

    The configuration table's last column is the cavity spin.  sigma_sq == 0
    keeps only configurations minimizing the residual field.
    """
    d = x.shape[1]
    tau = tau_table(d + 1)
    a = omega[:, None] + xi @ (1.0 - tau).T
    if sigma_sq == 0.0:
        a2 = a * a
        gauss = np.where(a2 <= a2.min(axis=1, keepdims=True) + 1e-24, 0.0, -np.inf)
    else:
        gauss = -(beta / (2.0 * sigma_sq)) * a * a
    return gauss, tau


def _msg_products(x, tau, d):
    """prod_l (1 + tau_l x_l) for every configuration, built incrementally."""
    P = np.ones((x.shape[0], tau.shape[0]))
    for l in range(d):
        P *= 1.0 + x[:, l, None] * tau[None, :, l]
    return P


def chip_cavity(x, xi, omega, sigma_sq, beta=1.0):
    """Outgoing chip-to-user cavity magnetization.

    x: (batch, d) incoming magnetizations, xi: (batch, d+1) gains,
    omega: (batch,) noise draws.  Accepts bare 1-d/0-d input for a single
    sample.  sigma_sq == 0 selects the exact zero-noise trace.
    """
    scalar = np.ndim(omega) == 0
    x, xi, omega = _as_batch(x, xi, omega)
    d = x.shape[1]
    gauss, tau = _gauss_log(x, xi, omega, sigma_sq, beta)
    P = _msg_products(x, tau, d)
    rowmax = gauss.max(axis=1, keepdims=True)
    w = np.exp(gauss - rowmax) * P
    den = w.sum(axis=1)
    num = w @ tau[:, -1]
    out = np.empty_like(den)
    ok = den > 0.0
    out[ok] = num[ok] / den[ok]
    if not ok.all():
        out[~ok] = _chip_cavity_logdomain(x[~ok], gauss[~ok], P[~ok], tau)
    np.clip(out, -1.0, 1.0, out=out)
    return float(out[0]) if scalar else out


def _chip_cavity_logdomain(x, gauss, P, tau):
    """Exact log-domain trace for rows whose linear weights underflowed."""
    with np.errstate(divide="ignore"):
        logw = gauss + np.log(P)
    cav = tau[:, -1]
    lp = _logsumexp_where(logw, cav > 0)
    lm = _logsumexp_where(logw, cav < 0)
    return _tanh_half_diff(lp, lm)


def chip_cavity_with_grad(x, xi, omega, sigma_sq, beta=1.0):
    """Cavity magnetization plus d(xhat)/d(x_j) for every incoming edge.

    The leave-one-out message products are formed by repeated multiplication,
    never by division, so saturated inputs stay exact.
    """
    scalar = np.ndim(omega) == 0
    x, xi, omega = _as_batch(x, xi, omega)
    n, d = x.shape
    gauss, tau = _gauss_log(x, xi, omega, sigma_sq, beta)
    rowmax = gauss.max(axis=1, keepdims=True)
    wb = np.exp(gauss - rowmax)
    P = _msg_products(x, tau, d)
    w = wb * P
    den = w.sum(axis=1)
    cav = tau[:, -1]
    num = w @ cav
    xhat = np.empty_like(den)
    ok = den > 0.0
    xhat[ok] = num[ok] / den[ok]
    if not ok.all():
        xhat[~ok] = _chip_cavity_logdomain(x[~ok], gauss[~ok], P[~ok], tau)
    np.clip(xhat, -1.0, 1.0, out=xhat)
    grad = np.zeros((n, d))
    woj = np.empty_like(wb)
    for j in range(d):
        np.copyto(woj, wb)
        for l in range(d):
            if l != j:
                woj *= 1.0 + x[:, l, None] * tau[None, :, l]
        tj = tau[:, j]
        num_b = woj @ (tj * cav)
        num_d = woj @ tj
        dj = (woj * (1.0 + tj[None, :] * x[:, j:j + 1])).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = (num_b - num_d * xhat) / dj
        grad[:, j] = np.where(dj > 0.0, g, 0.0)
    if scalar:
        return float(xhat[0]), grad[0]
    return xhat, grad


def user_merge(xhat) -> np.ndarray | float:
    """Combine incoming chip-to-user magnetizations: tanh of summed atanh."""
    xh = np.atleast_2d(np.asarray(xhat, dtype=np.float64))
    scalar = np.asarray(xhat).ndim <= 1
    if xh.shape[1] == 0:
        out = np.zeros(xh.shape[0])
    else:
        c = np.clip(xh, -1.0 + SATURATION_EPS, 1.0 - SATURATION_EPS)
        out = np.tanh(np.arctanh(c).sum(axis=1))
    return float(out[0]) if scalar else out


def user_merge_with_grad(xhat):
    """Merged magnetization plus d(x)/d(xhat_c) = (1 - x**2)/(1 - xhat_c**2)."""
    xh = np.atleast_2d(np.asarray(xhat, dtype=np.float64))
    scalar = np.asarray(xhat).ndim <= 1
    c = np.clip(xh, -1.0 + SATURATION_EPS, 1.0 - SATURATION_EPS)
    if xh.shape[1] == 0:
        x = np.zeros(xh.shape[0])
        grad = np.zeros_like(xh)
    else:
        x = np.tanh(np.arctanh(c).sum(axis=1))
        grad = (1.0 - x * x)[:, None] / (1.0 - c * c)
    if scalar:
        return float(x[0]), grad[0]
    return x, grad


def _logsumexp_where(logw: np.ndarray, mask: np.ndarray) -> np.ndarray:
    sub = logw[:, mask]
    m = sub.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(sub - m).sum(axis=1)) + m[:, 0]


def _tanh_half_diff(lp: np.ndarray, lm: np.ndarray) -> np.ndarray:
    """(e^lp - e^lm)/(e^lp + e^lm) without leaving the log domain."""
    out = np.empty_like(lp)
    both = np.isneginf(lp) & np.isneginf(lm)
    out[~both] = np.tanh(0.5 * (lp[~both] - lm[~both]))
    out[both] = 0.0
    return out
