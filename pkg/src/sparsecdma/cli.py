"""Reproducible experiment runner.

Subcommands:
  generate    sample a signature matrix to a text file
  decode      run the message-passing decoder on matrix + instance files
  popdyn      dual-initialization fixed-point solve at one noise level
  stability   popdyn plus the perturbation-growth stability estimate
  sweep       config-driven grid of runs producing CSV artifacts + manifest
  chip-bound  zero-noise single-chip information table
  defaults    print the default sweep config

Config files are INI text; identical config + seeds reproduce byte-identical
CSV bodies.  Exit codes: 0 ok, 1 partial failure, 2 invalid config/usage.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import metrics, popdyn
from .bp import FactorGraph, bp_decode
from .channel import (load_instance, psd_db, random_bits, save_instance,
                      sigma0_sq_from_psd_db, transmit)
from .chipbound import bound_table_csv
from .ensembles import EnsembleSpec, SignatureMatrix, sample_signature
from .stability import estimate_lambda

EXIT_OK, EXIT_PARTIAL, EXIT_BADCONFIG = 0, 1, 2

DEFAULT_CONFIG = """\
[ensemble]
kind = regular
C = 3
L = 3
N = 999
gain = bpsk

[grid]
# start:stop:step in dB, or a comma-separated list
psd_db = 0:12:1

[run]
M = 50000
seeds = 1
max_sweeps = 2000
tasks = popdyn,metrics
lambda_window = 200
mc_samples = 1000000

[bp_instance]
N = 1500
trials = 200

[output]
dir = out
"""


@dataclass
class SweepConfig:
    specs: list[EnsembleSpec]
    psd_grid: list[float]
    M: int
    seeds: list[int]
    max_sweeps: int
    tasks: list[str]
    lambda_window: int
    mc_samples: int
    bp_N: int
    bp_trials: int
    out_dir: str
    raw: dict

    KNOWN_TASKS = ("popdyn", "stability", "metrics", "bp_instance", "chip_bound")


def parse_config(text: str) -> SweepConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    ens = cp["ensemble"]
    kind = ens.get("kind", "regular")
    C = float(ens.get("C", "3"))
    Ls = [float(v) for v in ens.get("L", "3").split(",")]
    N = int(ens.get("N", "999"))
    gain = ens.get("gain", "bpsk")
    specs = [EnsembleSpec.make(kind, C=C, L=L, N=N, gain_kind=gain) for L in Ls]

    grid_s = cp["grid"].get("psd_db", "0:12:1")
    if ":" in grid_s:
        start, stop, step = (float(v) for v in grid_s.split(":"))
        n = int(round((stop - start) / step)) + 1
        grid = [round(start + i * step, 10) for i in range(n)]
    else:
        grid = [float(v) for v in grid_s.split(",")]
    if not grid:
        raise ValueError("empty psd grid")
    if grid != sorted(grid):
        raise ValueError("psd grid must be sorted")

    run = cp["run"] if cp.has_section("run") else {}
    seeds = [int(v) for v in str(run.get("seeds", "1")).split(",")]
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    tasks = [t.strip() for t in str(run.get("tasks", "popdyn,metrics")).split(",") if t.strip()]
    for t in tasks:
        if t not in SweepConfig.KNOWN_TASKS:
            raise ValueError(f"unknown task {t!r}")
    bp = cp["bp_instance"] if cp.has_section("bp_instance") else {}
    out = cp["output"] if cp.has_section("output") else {}
    raw = {s: dict(cp[s]) for s in cp.sections()}
    return SweepConfig(
        specs=specs, psd_grid=grid, M=int(run.get("M", "50000")),
        seeds=seeds, max_sweeps=int(run.get("max_sweeps", "2000")),
        tasks=tasks, lambda_window=int(run.get("lambda_window", "200")),
        mc_samples=int(run.get("mc_samples", "1000000")),
        bp_N=int(bp.get("N", "1500")), bp_trials=int(bp.get("trials", "200")),
        out_dir=str(out.get("dir", "out")), raw=raw)


# -- point evaluation ---------------------------------------------------------

def _point_reports(spec: EnsembleSpec, psd: float, seed: int, M: int,
                   max_sweeps: int, tasks: list[str], lambda_window: int,
                   mc_samples: int) -> list[metrics.PerformanceReport]:
    """Solve one (spec, PSD, seed) grid point and build its report rows."""
    s0 = sigma0_sq_from_psd_db(psd)
    want_lambda = "stability" in tasks
    want_thermo = "metrics" in tasks
    snap = popdyn.BAD_SOLUTION_SWEEPS if max_sweeps >= popdyn.BAD_SOLUTION_SWEEPS else None
    ferro, rand, outcome, bad_snap = popdyn.solve_rs_pair(
        spec, s0, M=M, max_sweeps=max_sweeps, seed=seed, bad_snapshot_at=snap)
    single = outcome.met

    branches: list[tuple[str, popdyn.RSRun | popdyn.RSSolution]] = []
    if single:
        branches.append(("unique", ferro))
    else:
        branches.append(("good", ferro))
        branches.append(("bad", bad_snap if bad_snap is not None else rand))

    rows = []
    for tag, src in branches:
        if isinstance(src, popdyn.RSSolution):
            run = _reanimate(spec, src, M)
        else:
            run = src
        # measure overlap and thermodynamics at the protocol point, before
        # any extra sweeps needed by the stability window
        rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
        overlap = run.overlap_sample(50_000, rng)
        f_est = None
        if want_thermo:
            f_est = metrics.free_energy_rs(run.user, run.chip, spec, s0,
                                           samples=mc_samples, seed=seed + 13)
        measured_sweeps = run.sweep_count
        lam = None
        if want_lambda:
            run.enable_stability()
            warm = 30
            for _ in range(lambda_window + warm):
                run.sweep()
            est = estimate_lambda(run, window=lambda_window)
            lam = (est.lam_mean, est.se_mean)
        rep = metrics.build_report(
            spec, psd, overlap, solution=tag,
            converged=outcome.met, sweeps=measured_sweeps,
            f=f_est, lam=lam)
        rows.append(rep)
    return rows


def _reanimate(spec: EnsembleSpec, sol: popdyn.RSSolution, M: int) -> popdyn.RSRun:
    """Rebuild a stepper around a frozen solution snapshot."""
    run = popdyn.RSRun(spec, sol.sigma0_sq, M, "random", sol.seed + 101,
                       beta=sol.beta)
    run.user = sol.user_pop.values.copy()
    run.chip = sol.chip_pop.values.copy()
    run.sweep_count = sol.sweeps
    return run


def _point_task(args):
    (label, spec_args, psd, seed, M, max_sweeps, tasks, lw, mc) = args
    spec = EnsembleSpec.make(*spec_args)
    rows = _point_reports(spec, psd, seed, M, max_sweeps, tasks, lw, mc)
    return label, psd, seed, [ (r.csv_row()) for r in rows ]


# -- sweep driver -------------------------------------------------------------

def run_sweep(cfg: SweepConfig, threads: int = 1) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    t_start = time.time()
    artifacts = []
    failures = []

    popdyn_tasks = [t for t in cfg.tasks if t in ("popdyn", "stability", "metrics")]
    rows_path = os.path.join(cfg.out_dir, "sweep.csv")
    if popdyn_tasks:
        jobs = []
        for spec in cfg.specs:
            spec_args = (spec.kind, spec.C, spec.L, spec.N, spec.K)
            for psd in cfg.psd_grid:
                for seed in cfg.seeds:
                    jobs.append((spec.label, spec_args, psd, seed, cfg.M,
                                 cfg.max_sweeps, cfg.tasks, cfg.lambda_window,
                                 cfg.mc_samples))
        results = []
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for job, res in zip(jobs, pool.map(_point_task_safe, jobs)):
                    results.append(res)
        else:
            for job in jobs:
                results.append(_point_task_safe(job))
        with open(rows_path, "w") as fh:
            fh.write("spec,seed," + metrics.PerformanceReport.csv_header() + "\n")
            for res in results:
                if isinstance(res, str):
                    failures.append(res)
                    continue
                label, psd, seed, rows = res
                for row in rows:
                    fh.write(f"{label},{seed},{row}\n")
        artifacts.append(rows_path)

    if "bp_instance" in cfg.tasks:
        camp_path = os.path.join(cfg.out_dir, "campaign.csv")
        with open(camp_path, "w") as fh:
            fh.write("spec,seed,psd_db,N,trials,ber,wilson_lo,wilson_hi,se,nonconverged\n")
            for spec in cfg.specs:
                for psd in cfg.psd_grid:
                    for seed in cfg.seeds:
                        try:
                            base = EnsembleSpec.make(spec.kind, spec.C, spec.L, cfg.bp_N)
                            c = bp_instance_campaign(base, cfg.bp_N, psd,
                                                     cfg.bp_trials, seed)
                            fh.write(f"{spec.label},{seed},{psd!r},{cfg.bp_N},"
                                     f"{cfg.bp_trials},{c.ber!r},{c.wilson_lo!r},"
                                     f"{c.wilson_hi!r},{c.se!r},{c.nonconverged}\n")
                        except Exception as exc:  # noqa: BLE001 - recorded, run continues
                            failures.append(f"bp_instance {spec.label} {psd}: {exc}")
        artifacts.append(camp_path)

    if "chip_bound" in cfg.tasks:
        cb_path = os.path.join(cfg.out_dir, "chipbound.csv")
        Ls = sorted({int(s.L) for s in cfg.specs} | set(range(1, 11)))
        bound_table_csv(Ls, cb_path)
        artifacts.append(cb_path)

    manifest = {
        "config": cfg.raw,
        "seeds": cfg.seeds,
        "artifacts": [{"path": os.path.basename(p), "sha": _sha256(p)}
                      for p in artifacts],
        "wallclock": time.time() - t_start,
        "failures": failures,
        "status": "partial" if failures else "ok",
    }
    with open(os.path.join(cfg.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return EXIT_PARTIAL if failures else EXIT_OK


def _point_task_safe(args):
    try:
        return _point_task(args)
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest
        return f"popdyn {args[0]} psd={args[2]} seed={args[3]}: {exc}"


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


# -- finite-instance campaign -------------------------------------------------

@dataclass
class CampaignResult:
    ber: float
    wilson_lo: float
    wilson_hi: float
    se: float                 # per-trial (cluster) standard error
    trials: int
    bits: int
    errors: int
    nonconverged: int


def bp_instance_campaign(spec: EnsembleSpec, N: int, psd: float, trials: int,
                         seed: int, max_sweeps: int = 200,
                         tol: float = 1e-8) -> CampaignResult:
    """Empirical decoder error rate over freshly sampled instances."""
    K = N * spec.L / spec.C
    if abs(K - round(K)) > 1e-9:
        raise ValueError("N * alpha must be integral")
    spec = EnsembleSpec.make(spec.kind, spec.C, spec.L, N)
    s0 = sigma0_sq_from_psd_db(psd)
    ss = np.random.SeedSequence(seed)
    errors = 0
    bits = 0
    nonconv = 0
    trial_bers = []
    for child in ss.spawn(trials):
        s1, s2, s3 = [int(c.generate_state(1)[0]) for c in child.spawn(3)]
        S = sample_signature(spec, s1)
        b = random_bits(spec.K, s2)
        inst = transmit(S, b, s0, s3)
        res = bp_decode(FactorGraph.from_instance(S, inst),
                        max_sweeps=max_sweeps, tol=tol)
        if not res.converged:
            nonconv += 1
        wrong = int((res.estimates != b).sum())
        errors += wrong
        bits += spec.K
        trial_bers.append(wrong / spec.K)
    ber = errors / bits
    lo, hi = _wilson(errors, bits)
    se = float(np.std(trial_bers) / math.sqrt(trials))
    return CampaignResult(ber=ber, wilson_lo=lo, wilson_hi=hi, se=se,
                          trials=trials, bits=bits, errors=errors,
                          nonconverged=nonconv)


def _wilson(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return center - half, center + half


# -- subcommands --------------------------------------------------------------

def _cmd_generate(args) -> int:
    spec = EnsembleSpec.make(args.kind, C=args.C, L=args.L, N=args.N,
                             gain_kind=args.gain)
    S = sample_signature(spec, args.seed)
    S.save(args.out or "matrix.txt")
    print(f"wrote {args.out or 'matrix.txt'} ({S.n_entries} entries)")
    return EXIT_OK


def _cmd_decode(args) -> int:
    S = SignatureMatrix.load(args.matrix)
    inst = load_instance(args.instance)
    sigma_sq = args.sigma_sq if args.sigma_sq is not None else inst.sigma0_sq
    graph = FactorGraph(S=S, y=inst.y, sigma_sq=sigma_sq, beta=args.beta)
    res = bp_decode(graph, max_sweeps=args.max_sweeps, tol=args.tol,
                    damping=args.damping)
    record = {
        "seed": args.seed,
        "sweeps": res.sweeps,
        "converged": res.converged,
        "max_delta": res.max_delta,
        "ber": None,
    }
    if np.isfinite(inst.bits).all():
        record["ber"] = float((res.estimates != inst.bits).mean())
    if args.magnetizations:
        record["magnetizations"] = res.magnetizations.tolist()
    out = json.dumps(record)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out + "\n")
    else:
        print(out)
    return EXIT_OK


def _cmd_popdyn(args, with_lambda: bool = False) -> int:
    spec = EnsembleSpec.make(args.kind, C=args.C, L=args.L, N=args.N,
                             gain_kind=args.gain)
    tasks = ["popdyn", "metrics"] + (["stability"] if with_lambda else [])
    rows = _point_reports(spec, args.psd_db, args.seed, args.M,
                          args.max_sweeps, tasks, args.lambda_window,
                          args.mc_samples)
    record = {
        "spec": spec.label, "kind": spec.kind, "alpha": spec.alpha,
        "psd_db": args.psd_db, "M": args.M, "seed": args.seed,
        "solutions": [{k: getattr(r, k) for k in
                       ("solution", "converged", "sweeps", "p_b", "mue", "f",
                        "f_se", "e", "s", "s_se", "nu", "mi", "mi_se",
                        "lam", "lam_se")} for r in rows],
    }
    out = json.dumps(record, indent=2, default=float)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out + "\n")
    else:
        print(out)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    except (OSError, KeyError, ValueError, configparser.Error) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_BADCONFIG
    if args.out:
        cfg.out_dir = args.out
    return run_sweep(cfg, threads=args.threads)


def _cmd_chip_bound(args) -> int:
    out = args.out or "chipbound.csv"
    bound_table_csv(range(1, args.L_max + 1), out)
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_defaults(_args) -> int:
    sys.stdout.write(DEFAULT_CONFIG)
    return EXIT_OK


def _add_spec_args(p):
    p.add_argument("--kind", default="regular",
                   choices=["regular", "partly_regular", "irregular"])
    p.add_argument("-C", type=float, default=3)
    p.add_argument("-L", type=float, default=3)
    p.add_argument("-N", type=int, default=999)
    p.add_argument("--gain", default="bpsk", choices=["bpsk", "constant"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparsecdma", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0, help="master seed")
    ap.add_argument("--out", default=None, help="output file or directory")
    ap.add_argument("--threads", type=int, default=1)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample a signature matrix")
    _add_spec_args(g)

    d = sub.add_parser("decode", help="message-passing decode of one instance")
    d.add_argument("matrix")
    d.add_argument("instance")
    d.add_argument("--sigma-sq", type=float, default=None, dest="sigma_sq")
    d.add_argument("--beta", type=float, default=1.0)
    d.add_argument("--max-sweeps", type=int, default=200)
    d.add_argument("--tol", type=float, default=1e-10)
    d.add_argument("--damping", type=float, default=0.0)
    d.add_argument("--magnetizations", action="store_true")

    for name in ("popdyn", "stability"):
        p = sub.add_parser(name, help=f"{name} run at one noise level")
        _add_spec_args(p)
        p.add_argument("--psd-db", type=float, required=True, dest="psd_db")
        p.add_argument("-M", type=int, default=popdyn.DEFAULT_M)
        p.add_argument("--max-sweeps", type=int, default=popdyn.DEFAULT_MAX_SWEEPS)
        p.add_argument("--lambda-window", type=int, default=200)
        p.add_argument("--mc-samples", type=int, default=1_000_000)

    s = sub.add_parser("sweep", help="config-driven sweep")
    s.add_argument("config")

    c = sub.add_parser("chip-bound", help="zero-noise single-chip bound table")
    c.add_argument("--L-max", type=int, default=10)

    sub.add_parser("defaults", help="print the default sweep config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "decode":
            return _cmd_decode(args)
        if args.command == "popdyn":
            return _cmd_popdyn(args, with_lambda=False)
        if args.command == "stability":
            return _cmd_popdyn(args, with_lambda=True)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "chip-bound":
            return _cmd_chip_bound(args)
        if args.command == "defaults":
            return _cmd_defaults(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BADCONFIG
    return EXIT_BADCONFIG


if __name__ == "__main__":
    sys.exit(main())
