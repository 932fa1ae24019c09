"""Local stability of the replica-symmetric fixed point.

Squared perturbations ride along the population updates: each magnetization
carries a non-negative weight, refreshed as the incoming weights times the
squared partial derivatives of the update it just went through.  Weights are
renormalized to mean one after every half-sweep; the discarded means are the
growth factors.  Their product over one chip/user alternation estimates
exp(lambda); lambda < 0 certifies local stability.

Convention: lambda is quoted per half-sweep pair, i.e. per user-chip-user
step in the underlying graph.  The chip-side estimator pairs each chip
half-sweep with the preceding user half-sweep, the user-side estimator pairs
it with the following one; over a window the two agree up to boundary terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .ensembles import EnsembleSpec, degree_distribution
from .popdyn import RSRun, RSSolution

FROZEN_LAMBDA = -math.inf


@dataclass
class PerturbedPopulation:
    """Cavity magnetizations paired with perturbation weights (mean one)."""

    values: np.ndarray
    weights: np.ndarray
    role: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.values.shape != self.weights.shape:
            raise ValueError("values and weights must align")
        if (self.weights < 0).any():
            raise ValueError("weights must be non-negative")


def perturbed_chip_update(pop: PerturbedPopulation, spec: EnsembleSpec,
                          sigma0_sq: float, beta: float,
                          rng: np.random.Generator) -> tuple[float, float]:
    """One chip-side draw: new magnetization and its perturbation weight.

    The weight is sum_j v_j (d xhat / d x_j)^2 over the sampled neighbors,
    with derivatives evaluated analytically at the sampled arguments.
    """
    d = int(degree_distribution(spec, "chip", excess=True).sample(rng))
    idx = rng.integers(0, pop.values.size, size=d)
    x = pop.values[idx]
    xi = np.atleast_1d(spec.gain.sample(rng, size=d + 1))
    om = float(rng.normal(0.0, math.sqrt(sigma0_sq))) if sigma0_sq > 0 else 0.0
    xhat, grad = kernels.chip_cavity_with_grad(x[None, :], xi[None, :],
                                               np.array([om]), sigma0_sq, beta)
    vhat = float((pop.weights[idx] * grad[0] ** 2).sum()) if d else 0.0
    return float(xhat[0]), vhat


def perturbed_user_update(pop: PerturbedPopulation, spec: EnsembleSpec,
                          rng: np.random.Generator) -> tuple[float, float]:
    """One user-side draw: new magnetization and its perturbation weight."""
    d = int(degree_distribution(spec, "user", excess=True).sample(rng))
    idx = rng.integers(0, pop.values.size, size=d)
    xh = pop.values[idx]
    x, grad = kernels.user_merge_with_grad(xh[None, :])
    v = float((pop.weights[idx] * grad[0] ** 2).sum()) if d else 0.0
    return float(x[0]), v


@dataclass
class LambdaEstimate:
    lam_chip: float
    lam_user: float
    lam_mean: float
    se_chip: float
    se_user: float
    se_mean: float
    window: int
    noisy: bool  # standard error exceeds |mean|; near-ferromagnetic warning

    def as_dict(self) -> dict:
        return {"lambda_chip": self.lam_chip, "lambda_user": self.lam_user,
                "lambda_mean": self.lam_mean, "se_chip": self.se_chip,
                "se_user": self.se_user, "se_mean": self.se_mean,
                "window": self.window, "noisy": self.noisy}


def estimate_lambda(run: RSRun | RSSolution, window: int = 200) -> LambdaEstimate:
    """Per-cycle perturbation growth rate from the last `window` sweeps.

    Frozen populations kill all derivatives; their growth factors vanish and
    the estimate is the strongly negative sentinel -inf.
    """
    growth = run.log_growth
    if len(growth) < window + 1:
        raise ValueError(f"need at least {window + 1} tracked sweeps, "
                         f"have {len(growth)}")
    chip_log = np.array([g[0] for g in growth])
    user_log = np.array([g[1] for g in growth])
    # user-side pairs within a sweep; chip-side pairs straddle two sweeps
    pair_user = (chip_log + user_log)[-window:]
    pair_chip = (chip_log[1:] + user_log[:-1])[-window:]
    lam_user, se_user = _robust_mean(pair_user)
    lam_chip, se_chip = _robust_mean(pair_chip)
    lam_mean = 0.5 * (lam_chip + lam_user)
    se_mean = 0.5 * math.hypot(se_chip, se_user)
    noisy = not (math.isfinite(lam_mean) and se_mean < abs(lam_mean))
    return LambdaEstimate(lam_chip, lam_user, lam_mean, se_chip, se_user,
                          se_mean, window, noisy)


def _robust_mean(v: np.ndarray) -> tuple[float, float]:
    if not np.isfinite(v).all():
        return FROZEN_LAMBDA, 0.0
    return float(v.mean()), float(v.std() / math.sqrt(v.size))
