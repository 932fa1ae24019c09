"""Performance measures computed from converged populations.

Free energy, energy and entropy per chip come from Monte-Carlo estimates of
the three saddle-point functional terms; bit error rate, multiuser efficiency
and mutual information come from the overlap (posterior magnetization)
distribution.  Spectral efficiency is nu = alpha - s/ln 2 bits per chip.

Conventions documented here because the literature varies:
  * SNR is the per-user received power over the noise variance.  With gains
    normalized to mean square 1/L the per-user power is C/L = 1/alpha, so
    SNR = 1/(alpha sigma0^2).
  * The multiuser efficiency inverts the Gaussian tail function Q: a
    single-user Gaussian channel at the same SNR has error rate Q(sqrt(SNR))
    and multiuser efficiency exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcinv, xlogy

from . import kernels
from .ensembles import EnsembleSpec, degree_distribution

LN2 = math.log(2.0)
NISHIMORI_ENERGY = 0.5


@dataclass
class Estimate:
    value: float
    se: float

    def __iter__(self):
        yield self.value
        yield self.se


@dataclass
class PerformanceReport:
    """One row of the sweep output."""

    psd_db: float
    f: float = math.nan
    f_se: float = math.nan
    e: float = math.nan
    s: float = math.nan
    s_se: float = math.nan
    nu: float = math.nan
    mi: float = math.nan
    mi_se: float = math.nan
    p_b: float = math.nan
    p_b_se: float = math.nan
    mue: float = math.nan
    lam: float = math.nan
    lam_se: float = math.nan
    solution: str = "unique"       # unique | good | bad
    converged: bool = False
    sweeps: int = 0

    CSV_FIELDS = ("psd_db", "f", "f_se", "e", "s", "s_se", "nu", "mi", "mi_se",
                  "p_b", "mue", "lambda", "lambda_se", "solution", "converged",
                  "sweeps")

    def csv_row(self) -> str:
        vals = [self.psd_db, self.f, self.f_se, self.e, self.s, self.s_se,
                self.nu, self.mi, self.mi_se, self.p_b, self.mue,
                self.lam, self.lam_se]
        cells = [repr(float(v)) for v in vals]
        cells += [self.solution, "1" if self.converged else "0", str(self.sweeps)]
        return ",".join(cells)

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_FIELDS)


# -- overlap-based measures ---------------------------------------------------

def ber(overlap: np.ndarray) -> Estimate:
    """Bit error rate; zero magnetization ties contribute one half."""
    m = np.asarray(overlap, dtype=np.float64)
    if m.size == 0:
        raise ValueError("empty overlap sample")
    err = np.where(m < 0, 1.0, np.where(m > 0, 0.0, 0.5))
    return Estimate(float(err.mean()), float(err.std() / math.sqrt(m.size)))


def binary_entropy_bits(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return -(xlogy(q, q) + xlogy(1.0 - q, 1.0 - q)) / LN2


def mutual_info(overlap: np.ndarray, alpha: float) -> Estimate:
    """Bits per chip between sent and reconstructed words."""
    m = np.asarray(overlap, dtype=np.float64)
    if m.size == 0:
        raise ValueError("empty overlap sample")
    h = binary_entropy_bits((1.0 + m) / 2.0)
    return Estimate(float(alpha * (1.0 - h.mean())),
                    float(alpha * h.std() / math.sqrt(m.size)))


def snr(spec_or_alpha, sigma0_sq: float) -> float:
    alpha = getattr(spec_or_alpha, "alpha", spec_or_alpha)
    return 1.0 / (alpha * sigma0_sq)


def sug_ber(snr_value: float) -> float:
    """Single-user Gaussian channel error rate Q(sqrt(SNR))."""
    return 0.5 * erfc(math.sqrt(snr_value / 2.0))


def mue(p_b: float, sigma0_sq: float, spec_or_alpha) -> tuple[float, bool]:
    """Multiuser efficiency: SNR degradation versus the single-user channel.

    Returns (value, exact) where exact=False flags the p_b == 0 limit, which
    is reported as 1.  Round trip: mue(sug_ber(snr)) == 1.
    """
    if not 0.0 <= p_b <= 0.5:
        raise ValueError("p_b must be in [0, 1/2]")
    s = snr(spec_or_alpha, sigma0_sq)
    if p_b == 0.0:
        return 1.0, False
    qinv = math.sqrt(2.0) * float(erfcinv(2.0 * p_b))
    return qinv * qinv / s, True


def entropy_and_nu(f: float, e: float, beta: float, alpha: float) -> tuple[float, float]:
    """s = beta (e - f) nats per chip; nu = alpha - s/ln2 bits per chip."""
    s = beta * (e - f)
    return s, alpha - s / LN2


# -- thermodynamic Monte-Carlo estimators -------------------------------------

def _chip_term_samples(user_values, spec: EnsembleSpec, sigma0_sq, beta, n, rng,
                       sigma_sq: float | None = None):
    """(ln Tr, thermal chip energy) over one full-degree chip, per sample.

    The model variance sigma_sq defaults to the channel variance sigma0_sq
    (Nishimori mode).
    """
    if sigma_sq is None:
        sigma_sq = sigma0_sq
    if sigma_sq <= 0:
        raise ValueError("model noise variance must be positive here")
    full = degree_distribution(spec, "chip", excess=False)
    degs = np.asarray(full.sample(rng, size=n))
    dmax = int(degs.max())
    idx = rng.integers(0, user_values.size, size=(n, dmax)) if dmax else np.zeros((n, 0), np.int64)
    gains = spec.gain.sample(rng, size=(n, dmax))
    omega = (rng.normal(0.0, math.sqrt(sigma0_sq), size=n)
             if sigma0_sq > 0 else np.zeros(n))
    out = np.empty(n)
    energy = np.empty(n)
    for d in np.unique(degs):
        sel = np.flatnonzero(degs == d)
        x = user_values[idx[sel, :d]]
        xi = gains[sel, :d]
        tau = kernels.tau_table(int(d)) if d else np.zeros((1, 0))
        a = omega[sel, None] + xi @ (1.0 - tau).T
        ch = a * a / (2.0 * sigma_sq)
        gauss = -beta * ch
        P = np.ones((sel.size, tau.shape[0]))
        for l in range(int(d)):
            P *= 1.0 + x[:, l, None] * tau[None, :, l]
        rowmax = gauss.max(axis=1, keepdims=True)
        w = np.exp(gauss - rowmax) * P
        den = w.sum(axis=1)
        out[sel] = np.log(den) + rowmax[:, 0]
        energy[sel] = (w * ch).sum(axis=1) / den
    return out, energy


def _link_term_samples(user_values, chip_values, n, rng):
    x = user_values[rng.integers(0, user_values.size, size=n)]
    xh = chip_values[rng.integers(0, chip_values.size, size=n)]
    xh = np.clip(xh, -1.0 + 1e-15, 1.0 - 1e-15)
    x = np.clip(x, -1.0 + 1e-15, 1.0 - 1e-15)
    return np.log1p(x * xh)


def _user_term_samples(chip_values, spec: EnsembleSpec, n, rng):
    full = degree_distribution(spec, "user", excess=False)
    degs = np.asarray(full.sample(rng, size=n))
    dmax = int(degs.max())
    idx = rng.integers(0, chip_values.size, size=(n, dmax)) if dmax else np.zeros((n, 0), np.int64)
    out = np.empty(n)
    for d in np.unique(degs):
        sel = np.flatnonzero(degs == d)
        xh = np.clip(chip_values[idx[sel, :d]], -1.0 + 1e-15, 1.0 - 1e-15)
        lp = np.log1p(xh).sum(axis=1)
        lm = np.log1p(-xh).sum(axis=1)
        out[sel] = np.logaddexp(lp, lm)
    return out


def free_energy_rs(user_values, chip_values, spec: EnsembleSpec, sigma0_sq: float,
                   beta: float = 1.0, samples: int = 1_000_000,
                   seed: int = 0) -> Estimate:
    """Monte-Carlo free energy per chip from converged populations."""
    rng = np.random.default_rng(seed)
    user_values = np.asarray(user_values, dtype=np.float64)
    chip_values = np.asarray(chip_values, dtype=np.float64)
    t1, _ = _chip_term_samples(user_values, spec, sigma0_sq, beta, samples, rng)
    t2 = _link_term_samples(user_values, chip_values, samples, rng)
    t3 = _user_term_samples(chip_values, spec, samples, rng)
    alpha = spec.alpha
    g = (t1.mean() - spec.L * LN2) - spec.L * t2.mean() + alpha * t3.mean()
    se = math.sqrt(t1.var() / samples
                   + (spec.L ** 2) * t2.var() / samples
                   + (alpha ** 2) * t3.var() / samples)
    return Estimate(-g / beta, se / beta)


def energy_rs(user_values, spec: EnsembleSpec, sigma0_sq: float, beta: float = 1.0,
              sigma_sq: float | None = None, samples: int = 200_000,
              seed: int = 0) -> Estimate:
    """Energy per chip.

    In Nishimori mode (beta == 1 and model variance == channel variance) the
    energy is the constant 1/2 exactly; otherwise it is the thermal chip
    energy sampled from the populations.
    """
    if sigma_sq is None or sigma_sq == sigma0_sq:
        if beta == 1.0:
            return Estimate(NISHIMORI_ENERGY, 0.0)
        sigma_sq = sigma0_sq
    rng = np.random.default_rng(seed)
    user_values = np.asarray(user_values, dtype=np.float64)
    _, energy = _chip_term_samples(user_values, spec, sigma0_sq, beta, samples,
                                   rng, sigma_sq=sigma_sq)
    return Estimate(float(energy.mean()), float(energy.std() / math.sqrt(samples)))


def build_report(spec: EnsembleSpec, psd_db: float, overlap: np.ndarray,
                 solution: str, converged: bool, sweeps: int,
                 f: Estimate | None = None, e: Estimate | None = None,
                 beta: float = 1.0, lam: tuple[float, float] | None = None) -> PerformanceReport:
    """Assemble a report row from an overlap sample and optional estimates."""
    alpha = spec.alpha
    pb = ber(overlap)
    mi = mutual_info(overlap, alpha)
    rep = PerformanceReport(psd_db=psd_db, p_b=pb.value, p_b_se=pb.se,
                            mi=mi.value, mi_se=mi.se, solution=solution,
                            converged=converged, sweeps=sweeps)
    from .channel import sigma0_sq_from_psd_db
    s0 = sigma0_sq_from_psd_db(psd_db)
    rep.mue = mue(min(pb.value, 0.5), s0, alpha)[0]
    if f is not None:
        if e is None:
            e = Estimate(NISHIMORI_ENERGY, 0.0) if beta == 1.0 else None
        rep.f, rep.f_se = f.value, f.se
        rep.e = e.value
        s, nu = entropy_and_nu(f.value, e.value, beta, alpha)
        rep.s, rep.nu = s, nu
        rep.s_se = beta * math.hypot(f.se, e.se)
    if lam is not None:
        rep.lam, rep.lam_se = lam
    return rep
