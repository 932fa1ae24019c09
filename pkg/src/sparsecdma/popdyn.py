"""Population-dynamics solver for the replica-symmetric fixed point.

Two populations of cavity magnetizations are iterated alternately: the
chip-side population is refilled from the user side (excess chip degree,
fresh gains and noise per sample) and the user side from the chip side
(excess user degree).  Within a half-sweep every value is replaced; since a
half-sweep only reads the opposite population, batched updates are exactly
equivalent to sequential replacement.

Runs from ferromagnetic (all ones) and random initializations bracket the
fixed point; their meeting defines convergence, and failure to meet flags
solution coexistence.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp

from . import kernels
from .ensembles import DegreeDist, EnsembleSpec, degree_distribution

DEFAULT_M = 50_000
DEFAULT_MAX_SWEEPS = 2_000
AGREE_SIGMAS = 3.0
AGREE_STREAK = 10
SE_FLOOR = 1e-9
DISTANCE_THRESHOLD = 0.02
BAD_SOLUTION_SWEEPS = 500


@dataclass
class Population:
    """A finite sample standing in for one cavity-magnetization density."""

    values: np.ndarray
    role: str  # "user" | "chip"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.role not in ("user", "chip"):
            raise ValueError("role must be 'user' or 'chip'")
        if self.values.size and (np.abs(self.values) > 1.0).any():
            raise ValueError("population values must lie in [-1, 1]")

    @property
    def M(self) -> int:
        return self.values.size


@dataclass
class SweepSummary:
    """Convergence statistics drawn from the current populations."""

    mean_m: float
    mean_m2: float
    p_b: float
    se_mean_m: float
    se_mean_m2: float
    se_p_b: float

    def agrees_with(self, other: "SweepSummary", n_sigma: float = AGREE_SIGMAS) -> bool:
        for a, b, sa, sb in ((self.mean_m, other.mean_m, self.se_mean_m, other.se_mean_m),
                             (self.mean_m2, other.mean_m2, self.se_mean_m2, other.se_mean_m2),
                             (self.p_b, other.p_b, self.se_p_b, other.se_p_b)):
            tol = n_sigma * math.hypot(sa, sb) + SE_FLOOR
            if abs(a - b) > tol:
                return False
        return True


@dataclass
class RSSolution:
    user_pop: Population
    chip_pop: Population
    init: str
    sweeps: int
    converged: bool
    sigma0_sq: float
    beta: float
    spec: EnsembleSpec
    seed: int
    trace: list[SweepSummary] = field(default_factory=list)
    log_growth: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class CoexistenceVerdict:
    psd_db: float
    classification: str            # "single" | "coexist"
    distance: float
    convergence_time: float        # sweeps; nan when coexisting
    sweeps_run: int
    good: RSSolution | None = None
    bad: RSSolution | None = None


class RSRun:
    """Stepper for one population pair; drives sweeps and summaries.

    Stability tracking rides along without touching the value stream: the
    perturbation weights reuse the same sampled neighbors, gains and noise as
    the value updates, and are renormalized to mean one after each half-sweep
    (the discarded means are the growth factors).
    """

    def __init__(self, spec: EnsembleSpec, sigma0_sq: float, M: int, init: str,
                 seed: int, beta: float = 1.0, track_stability: bool = False,
                 summary_draws: int | None = None):
        if init not in ("random", "ferromagnetic"):
            raise ValueError("init must be 'random' or 'ferromagnetic'")
        if M < 2:
            raise ValueError("population size too small")
        self.spec = spec
        self.sigma0_sq = float(sigma0_sq)
        self.beta = float(beta)
        self.M = int(M)
        self.init = init
        self.seed = int(seed)
        ss = np.random.SeedSequence(seed)
        kids = ss.spawn(2)
        self.rng = np.random.default_rng(kids[0])
        if init == "ferromagnetic":
            self.user = np.ones(M)
            self.chip = np.ones(M)
        else:
            self.user = self.rng.uniform(-1.0, 1.0, size=M)
            self.chip = self.rng.uniform(-1.0, 1.0, size=M)
        self.chip_excess = degree_distribution(spec, "chip", excess=True)
        self.user_excess = degree_distribution(spec, "user", excess=True)
        self.user_full = degree_distribution(spec, "user", excess=False)
        self._weight_rng = np.random.default_rng(kids[1])
        self.track_stability = False
        self.v_user = self.v_chip = None
        if track_stability:
            self.enable_stability()
        self.sweep_count = 0
        self.log_growth: list[tuple[float, float]] = []   # (ln rho_chip, ln rho_user)
        # 10_000 draws at production sizes; for small populations the draw
        # count is capped at M/3 so meeting detection is not drowned by
        # population-level fluctuations
        self.summary_draws = summary_draws if summary_draws else min(10_000, max(500, M // 3))
        self.trace: list[SweepSummary] = []

    def enable_stability(self) -> None:
        """Start tracking perturbation weights from the current state.

        Weights are initialized as squared Gaussians from the run's dedicated
        weight stream; the value stream is untouched, so enabling tracking
        mid-run never changes the population trajectory.
        """
        if self.track_stability:
            return
        self.track_stability = True
        self.v_user = self._weight_rng.normal(size=self.M) ** 2
        self.v_chip = self._weight_rng.normal(size=self.M) ** 2
        self.v_user /= self.v_user.mean()
        self.v_chip /= self.v_chip.mean()

    # -- sweeps ---------------------------------------------------------

    def sweep(self) -> SweepSummary:
        self._chip_half()
        self._user_half()
        self.sweep_count += 1
        s = self.summary()
        self.trace.append(s)
        return s

    def _chip_half(self):
        M = self.M
        degs = np.asarray(self.chip_excess.sample(self.rng, size=M))
        dmax = int(degs.max())
        idx = self.rng.integers(0, M, size=(M, dmax)) if dmax else np.zeros((M, 0), dtype=np.int64)
        gains = self.spec.gain.sample(self.rng, size=(M, dmax + 1))
        omega = (self.rng.normal(0.0, math.sqrt(self.sigma0_sq), size=M)
                 if self.sigma0_sq > 0 else np.zeros(M))
        new = np.empty(M)
        new_w = np.empty(M) if self.track_stability else None
        for d in np.unique(degs):
            sel = np.flatnonzero(degs == d)
            x = self.user[idx[sel, :d]]
            xi = gains[sel, :d + 1]
            om = omega[sel]
            if self.track_stability:
                val, grad = kernels.chip_cavity_with_grad(x, xi, om, self.sigma0_sq, self.beta)
                new[sel] = val
                new_w[sel] = (self.v_user[idx[sel, :d]] * grad * grad).sum(axis=1) if d else 0.0
            else:
                new[sel] = kernels.chip_cavity(x, xi, om, self.sigma0_sq, self.beta)
        self.chip = new
        if self.track_stability:
            rho = float(new_w.mean())
            self.log_growth.append((math.log(rho) if rho > 0 else -math.inf, 0.0))
            self.v_chip = new_w / rho if rho > 0 else np.ones(M)

    def _user_half(self):
        M = self.M
        degs = np.asarray(self.user_excess.sample(self.rng, size=M))
        dmax = int(degs.max())
        idx = self.rng.integers(0, M, size=(M, dmax)) if dmax else np.zeros((M, 0), dtype=np.int64)
        new = np.empty(M)
        new_w = np.empty(M) if self.track_stability else None
        for d in np.unique(degs):
            sel = np.flatnonzero(degs == d)
            xh = self.chip[idx[sel, :d]]
            if self.track_stability:
                val, grad = kernels.user_merge_with_grad(xh)
                new[sel] = val
                new_w[sel] = (self.v_chip[idx[sel, :d]] * grad * grad).sum(axis=1) if d else 0.0
            else:
                new[sel] = kernels.user_merge(xh)
        self.user = new
        if self.track_stability:
            rho = float(new_w.mean())
            lc, _ = self.log_growth[-1]
            self.log_growth[-1] = (lc, math.log(rho) if rho > 0 else -math.inf)
            self.v_user = new_w / rho if rho > 0 else np.ones(M)

    # -- observables ----------------------------------------------------

    def overlap_sample(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """Posterior magnetizations m drawn with the full user degree law."""
        r = rng if rng is not None else self.rng
        degs = np.asarray(self.user_full.sample(r, size=n))
        dmax = int(degs.max())
        idx = r.integers(0, self.M, size=(n, dmax)) if dmax else np.zeros((n, 0), dtype=np.int64)
        out = np.empty(n)
        for d in np.unique(degs):
            sel = np.flatnonzero(degs == d)
            out[sel] = kernels.user_merge(self.chip[idx[sel, :d]])
        return out

    def summary(self) -> SweepSummary:
        # standard errors of the draw estimates; populations should be at
        # least a few times larger than summary_draws or meeting detection
        # stalls on population-level fluctuations
        n = self.summary_draws
        m = self.overlap_sample(n)
        err = np.where(m < 0, 1.0, np.where(m > 0, 0.0, 0.5))
        rt = math.sqrt(n)
        return SweepSummary(
            mean_m=float(m.mean()), mean_m2=float((m * m).mean()),
            p_b=float(err.mean()),
            se_mean_m=float(m.std() / rt),
            se_mean_m2=float((m * m).std() / rt),
            se_p_b=float(err.std() / rt))

    def solution(self, converged: bool) -> RSSolution:
        return RSSolution(
            user_pop=Population(self.user.copy(), "user"),
            chip_pop=Population(self.chip.copy(), "chip"),
            init=self.init, sweeps=self.sweep_count, converged=converged,
            sigma0_sq=self.sigma0_sq, beta=self.beta, spec=self.spec,
            seed=self.seed, trace=list(self.trace),
            log_growth=list(self.log_growth))

    # -- checkpointing ----------------------------------------------------

    def save_checkpoint(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        _save_population(os.path.join(directory, "user.pop"),
                         self.user, "user", self.sweep_count)
        _save_population(os.path.join(directory, "chip.pop"),
                         self.chip, "chip", self.sweep_count)
        state = {
            "sweep": self.sweep_count,
            "seed": self.seed,
            "init": self.init,
            "sigma0_sq": self.sigma0_sq,
            "beta": self.beta,
            "M": self.M,
            "summary_draws": self.summary_draws,
            "track_stability": self.track_stability,
            "rng_state": self.rng.bit_generator.state,
            "weight_rng_state": self._weight_rng.bit_generator.state,
            "log_growth": self.log_growth,
        }
        if self.track_stability:
            _save_population(os.path.join(directory, "user.weights"),
                             self.v_user, "user", self.sweep_count)
            _save_population(os.path.join(directory, "chip.weights"),
                             self.v_chip, "chip", self.sweep_count)
        with open(os.path.join(directory, "state.json"), "w") as fh:
            json.dump(state, fh)

    @classmethod
    def resume(cls, spec: EnsembleSpec, directory) -> "RSRun":
        with open(os.path.join(directory, "state.json")) as fh:
            state = json.load(fh)
        run = cls(spec, state["sigma0_sq"], state["M"], state["init"], state["seed"],
                  beta=state["beta"], track_stability=state["track_stability"],
                  summary_draws=state["summary_draws"])
        run.user, _, _ = _load_population(os.path.join(directory, "user.pop"))
        run.chip, _, _ = _load_population(os.path.join(directory, "chip.pop"))
        if state["track_stability"]:
            run.v_user, _, _ = _load_population(os.path.join(directory, "user.weights"))
            run.v_chip, _, _ = _load_population(os.path.join(directory, "chip.weights"))
        run.sweep_count = state["sweep"]
        run.log_growth = [tuple(p) for p in state["log_growth"]]
        run.rng.bit_generator.state = state["rng_state"]
        run._weight_rng.bit_generator.state = state["weight_rng_state"]
        return run


def _save_population(path, values: np.ndarray, role: str, sweep: int) -> None:
    with open(path, "w") as fh:
        fh.write(f"{values.size} {role} {sweep}\n")
        for v in values:
            fh.write(f"{float(v)!r}\n")


def _load_population(path):
    with open(path) as fh:
        head = fh.readline().split()
        M, role, sweep = int(head[0]), head[1], int(head[2])
        values = np.array([float(fh.readline()) for _ in range(M)])
    return values, role, sweep


def save_population(pop: Population, path, sweep: int = 0) -> None:
    _save_population(path, pop.values, pop.role, sweep)


def load_population(path) -> Population:
    values, role, _ = _load_population(path)
    return Population(values, role)


# -- single-draw update operations (contract surface, used by tests) -------

def chip_update(user_pop, spec: EnsembleSpec, sigma0_sq: float, beta: float,
                rng: np.random.Generator) -> float:
    """One new chip-side value: sample the excess chip degree, gains, noise
    and that many user-side values, then evaluate the gauged two-state trace."""
    W = user_pop.values if isinstance(user_pop, Population) else np.asarray(user_pop)
    d = int(degree_distribution(spec, "chip", excess=True).sample(rng))
    x = W[rng.integers(0, W.size, size=d)]
    xi = np.atleast_1d(spec.gain.sample(rng, size=d + 1))
    om = float(rng.normal(0.0, math.sqrt(sigma0_sq))) if sigma0_sq > 0 else 0.0
    return float(kernels.chip_cavity(x[None, :], xi[None, :], np.array([om]),
                                     sigma0_sq, beta)[0])


def user_update(chip_pop, spec: EnsembleSpec, rng: np.random.Generator) -> float:
    """One new user-side value from the excess user degree distribution."""
    What = chip_pop.values if isinstance(chip_pop, Population) else np.asarray(chip_pop)
    d = int(degree_distribution(spec, "user", excess=True).sample(rng))
    xh = What[rng.integers(0, What.size, size=d)]
    return float(kernels.user_merge(xh[None, :])[0])


def overlap_distribution(sol: RSSolution, spec: EnsembleSpec, samples: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Posterior-magnetization draws from a solution (full user degree)."""
    What = sol.chip_pop.values
    full = degree_distribution(spec, "user", excess=False)
    degs = np.asarray(full.sample(rng, size=samples))
    dmax = int(degs.max())
    idx = (rng.integers(0, What.size, size=(samples, dmax))
           if dmax else np.zeros((samples, 0), dtype=np.int64))
    out = np.empty(samples)
    for d in np.unique(degs):
        sel = np.flatnonzero(degs == d)
        out[sel] = kernels.user_merge(What[idx[sel, :d]])
    return out


# -- solvers ----------------------------------------------------------------

def solve_rs(spec: EnsembleSpec, sigma0_sq: float, beta: float = 1.0,
             M: int = DEFAULT_M, init: str = "random",
             max_sweeps: int = DEFAULT_MAX_SWEEPS, seed: int = 0,
             track_stability: bool = False, min_sweeps: int = 20,
             summary_draws: int | None = None) -> RSSolution:
    """Iterate a single population pair until its summary is stationary.

    Stationarity: the summary agrees (within the usual 3 combined standard
    errors) with the one from AGREE_STREAK sweeps earlier, for AGREE_STREAK
    consecutive sweeps.  The two-initialization meeting criterion lives in
    solve_rs_pair; this one serves production runs of a known-unique branch.
    """
    run = RSRun(spec, sigma0_sq, M, init, seed, beta=beta,
                track_stability=track_stability, summary_draws=summary_draws)
    streak = 0
    converged = False
    for _ in range(max_sweeps):
        run.sweep()
        t = run.sweep_count
        if t > max(min_sweeps, AGREE_STREAK):
            if run.trace[t - 1].agrees_with(run.trace[t - 1 - AGREE_STREAK]):
                streak += 1
            else:
                streak = 0
            if streak >= AGREE_STREAK:
                converged = True
                break
    return run.solution(converged)


@dataclass
class DualOutcome:
    met: bool
    meeting_sweep: float      # first sweep of the agreement streak; nan if never
    sweeps_run: int
    distance: float


def _solution_distance(run_a: RSRun, run_b: RSRun, sweeps: int = 10,
                       draws_per_sweep: int = 2000) -> float:
    """|P_b difference| plus the Kolmogorov-Smirnov distance of overlaps.

    Draws are pooled across a few extra paired sweeps so the distance
    reflects the stationary overlap laws rather than single population
    snapshots, whose empirical fluctuation is O(M**-0.5).  Advances both
    runs by `sweeps` sweeps.
    """
    ma, mb = [], []
    for _ in range(sweeps):
        run_a.sweep()
        run_b.sweep()
        ma.append(run_a.overlap_sample(draws_per_sweep))
        mb.append(run_b.overlap_sample(draws_per_sweep))
    ma = np.concatenate(ma)
    mb = np.concatenate(mb)
    pa = float(np.where(ma < 0, 1.0, np.where(ma > 0, 0.0, 0.5)).mean())
    pb = float(np.where(mb < 0, 1.0, np.where(mb > 0, 0.0, 0.5)).mean())
    ks = float(ks_2samp(ma, mb, method="asymp").statistic)
    return abs(pa - pb) + ks


def solve_rs_pair(spec: EnsembleSpec, sigma0_sq: float, beta: float = 1.0,
                  M: int = DEFAULT_M, max_sweeps: int = DEFAULT_MAX_SWEEPS,
                  seed: int = 0, track_stability: bool = False,
                  bad_snapshot_at: int | None = None,
                  summary_draws: int | None = None):
    """Advance ferromagnetic and random runs in lockstep.

    The two runs converge to the unique solution from opposite directions
    where one exists.  A tentative meeting is declared when all summary
    components agree within 3 combined standard errors for AGREE_STREAK
    consecutive sweeps; the meeting is accepted once the pooled solution
    distance also clears DISTANCE_THRESHOLD, otherwise the runs continue.
    Returns (ferro_run, random_run, DualOutcome, bad_snapshot) where
    bad_snapshot is the random branch frozen after bad_snapshot_at sweeps.
    """
    ss = np.random.SeedSequence(seed)
    s_f, s_r = [int(c.generate_state(1)[0]) for c in ss.spawn(2)]
    ferro = RSRun(spec, sigma0_sq, M, "ferromagnetic", s_f, beta=beta,
                  track_stability=track_stability, summary_draws=summary_draws)
    rand = RSRun(spec, sigma0_sq, M, "random", s_r, beta=beta,
                 track_stability=track_stability, summary_draws=summary_draws)
    streak = 0
    meeting = math.nan
    met = False
    distance = math.nan
    bad_snapshot = None

    def maybe_snapshot():
        nonlocal bad_snapshot
        if (bad_snapshot_at is not None and bad_snapshot is None
                and rand.sweep_count >= bad_snapshot_at):
            bad_snapshot = rand.solution(converged=False)

    while ferro.sweep_count < max_sweeps:
        sf = ferro.sweep()
        sr = rand.sweep()
        maybe_snapshot()
        streak = streak + 1 if sf.agrees_with(sr) else 0
        if streak >= AGREE_STREAK:
            candidate = ferro.sweep_count - AGREE_STREAK + 1
            distance = _solution_distance(ferro, rand)
            maybe_snapshot()
            if distance < DISTANCE_THRESHOLD:
                met = True
                meeting = candidate
                break
            streak = 0
    if not met:
        distance = _solution_distance(ferro, rand)
        maybe_snapshot()
    return ferro, rand, DualOutcome(met=met, meeting_sweep=meeting,
                                    sweeps_run=ferro.sweep_count,
                                    distance=distance), bad_snapshot


def classify_coexistence(spec: EnsembleSpec, psd_grid, M: int = DEFAULT_M,
                         seed: int = 0, beta: float = 1.0,
                         max_sweeps: int = DEFAULT_MAX_SWEEPS,
                         track_stability: bool = False,
                         summary_draws: int | None = None) -> list[CoexistenceVerdict]:
    """Dual-initialization scan over a sorted PSD grid.

    A grid point is "single" when the runs meet (summary agreement sustained
    for AGREE_STREAK sweeps and pooled distance below DISTANCE_THRESHOLD),
    else "coexist".  For coexisting points the random branch is snapshotted
    after BAD_SOLUTION_SWEEPS sweeps as the bad solution, per the fixed-budget
    measurement protocol.
    """
    from .channel import sigma0_sq_from_psd_db

    grid = list(psd_grid)
    if grid != sorted(grid):
        raise ValueError("psd grid must be sorted")
    ss = np.random.SeedSequence(seed)
    out = []
    for psd, child in zip(grid, ss.spawn(len(grid))):
        s0 = sigma0_sq_from_psd_db(psd)
        point_seed = int(child.generate_state(1)[0])
        snap_at = BAD_SOLUTION_SWEEPS if max_sweeps >= BAD_SOLUTION_SWEEPS else None
        ferro, rand, outcome, bad_snap = solve_rs_pair(
            spec, s0, beta=beta, M=M, max_sweeps=max_sweeps, seed=point_seed,
            track_stability=track_stability, bad_snapshot_at=snap_at,
            summary_draws=summary_draws)
        single = outcome.met
        verdict = CoexistenceVerdict(
            psd_db=float(psd),
            classification="single" if single else "coexist",
            distance=outcome.distance,
            convergence_time=outcome.meeting_sweep if single else math.nan,
            sweeps_run=outcome.sweeps_run,
            good=ferro.solution(converged=outcome.met),
            bad=(bad_snap if (not single and bad_snap is not None)
                 else rand.solution(converged=outcome.met)))
        out.append(verdict)
    return out
