#!/usr/bin/env python3
"""
QUATERNION NMF RUNNER
Synthesizes data, factorizes quaternion images and writes report artifacts.

Usage:
    python run_qnmf.py synth --mode stokes --rows 64 --cols 64 --rank 4 --out synth/s1
    python run_qnmf.py factorize synth/s1_M.qmat --mode stokes --rank 4 --out runs/s1
    python run_qnmf.py factorize faces/ --mode rgb --rank 10 --method all --out runs/faces
    python run_qnmf.py metrics synth/s1_M.qmat --mode stokes --w runs/s1_W.qmat --h runs/s1_H.csv --out runs/check
    python run_qnmf.py sweep image.qstk --mode stokes --ranks 2 4 8 16 --method all --jobs 4 --out runs/table1
"""

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from constraint_proj import DEFAULT_XI, ConstraintSet, is_feasible, project_array
from errors import ConfigError, DegenerateInputError, DimensionError, InfeasibleInputError, QnmfError
from imaging_io import (
    ReportRow,
    TilingSpec,
    qmat_to_rgb,
    qmat_to_rgb_stack,
    qmat_to_stokes,
    read_h_csv,
    read_ppm,
    read_qmat,
    read_qstok,
    rgb_stack_to_qmat,
    rgb_to_qmat,
    stokes_to_qmat,
    write_h_csv,
    write_manifest,
    write_ppm,
    write_qmat,
    write_qstok,
    write_report_csv,
    write_timing_csv,
    write_trace_csv,
)
from init_spa import InitPlan, InitStrategy, init_factors
from metrics_stop import compute_metrics
from quat_core import N_COMPONENTS, QuatMatrix, qmat_fro_norm, qmat_mul_real
from solvers import Method, SolverConfig, qnmf_solve

logger = logging.getLogger(__name__)

# ============================================
# CONFIGURATION
# ============================================

DEFAULT_BLOCK = 8
DEFAULT_JOBS = 1
EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_USAGE = 2

METHOD_CHOICES = [m.value for m in Method] + ["all"]
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"


# ============================================
# INPUT LOADING
# ============================================

@dataclass
class InputData:
    """A data matrix plus what is needed to turn a reconstruction back into files."""

    M: QuatMatrix
    kind: str  # qmat, stokes, rgb or faces
    path: Path
    tiling: TilingSpec = None
    image_shape: tuple = None


def load_input(path, constraint: ConstraintSet, block: int = DEFAULT_BLOCK) -> InputData:
    path = Path(path)
    if path.is_dir():
        if constraint is not ConstraintSet.PURE_NONNEG:
            raise ConfigError(f"{path}: an image directory needs --mode rgb")
        files = sorted(path.glob("*.ppm"))
        if not files:
            raise FileNotFoundError(f"{path}: no .ppm files")
        images = [read_ppm(f) for f in files]
        print(f"  Loaded {len(images)} images from {path}")
        return InputData(rgb_stack_to_qmat(images), "faces", path,
                         image_shape=(images[0].height, images[0].width))

    suffix = path.suffix.lower()
    if suffix == ".qstk":
        if constraint is not ConstraintSet.STOKES:
            raise ConfigError(f"{path}: Stokes images need --mode stokes")
        img = read_qstok(path)
        tiling = TilingSpec.for_image(img.height, img.width, block)
        return InputData(stokes_to_qmat(img, tiling), "stokes", path, tiling=tiling)
    if suffix == ".ppm":
        if constraint is not ConstraintSet.PURE_NONNEG:
            raise ConfigError(f"{path}: RGB images need --mode rgb")
        img = read_ppm(path)
        return InputData(rgb_to_qmat(img), "rgb", path, image_shape=(img.height, img.width))
    if suffix == ".qmat":
        M = read_qmat(path)
        if not is_feasible(M, constraint):
            raise InfeasibleInputError(f"{path}: data matrix is outside the {constraint.value} set")
        return InputData(M, "qmat", path)
    raise ConfigError(f"{path}: unsupported input type {suffix!r}")


def write_reconstruction(data: InputData, recon: QuatMatrix, prefix: str) -> list:
    if data.kind == "stokes":
        written = [f"{prefix}_recon.qstk"]
        write_qstok(qmat_to_stokes(recon, data.tiling), written[0])
    elif data.kind == "rgb":
        written = [f"{prefix}_recon.ppm"]
        write_ppm(qmat_to_rgb(recon, data.image_shape), written[0])
    elif data.kind == "faces":
        written = []
        for i, img in enumerate(qmat_to_rgb_stack(recon, *data.image_shape)):
            written.append(f"{prefix}_recon_{i}.ppm")
            write_ppm(img, written[-1])
    else:
        written = [f"{prefix}_recon.qmat"]
        write_qmat(recon, written[0])
    return written


def input_digest(path) -> str:
    path = Path(path)
    digest = hashlib.sha256()
    files = sorted(path.glob("*.ppm")) if path.is_dir() else [path]
    for f in files:
        digest.update(f.read_bytes())
    return digest.hexdigest()


# ============================================
# CONFIG FROM FLAGS
# ============================================

def expand_methods(names) -> list:
    names = [names] if isinstance(names, str) else list(names)
    if not names:
        raise ConfigError("at least one method is required")
    methods = []
    for name in names:
        for method in (list(Method) if name == "all" else [Method(name)]):
            if method not in methods:
                methods.append(method)
    return methods


def solver_config(args, method: Method, rank: int) -> SolverConfig:
    return SolverConfig(
        method=method,
        rank=rank,
        max_outer=args.max_iter,
        outer_tol=args.tol,
        inner_iter=args.inner_iter,
        inner_tol=args.inner_tol,
        xi=args.xi,
        div_eps=args.div_eps,
        time_budget_secs=args.time_budget,
        seed=args.seed,
    )


def init_plan(args, rank: int) -> InitPlan:
    return InitPlan(strategy=InitStrategy(args.init), rank=rank, seed=args.seed)


def run_manifest(args, cfg: SolverConfig, methods: list, extra: dict = None) -> dict:
    entries = {k: (v.value if hasattr(v, "value") else v) for k, v in asdict(cfg).items()}
    entries.update({
        "subcommand": args.command,
        "mode": args.mode,
        "methods": ",".join(m.value for m in methods),
        "numpy_version": np.__version__,
        "created": datetime.now().isoformat(),
    })
    for name in ("init", "block", "jobs", "no_timing"):
        if hasattr(args, name):
            entries[name] = getattr(args, name)
    if getattr(args, "input", None):
        entries["input"] = args.input
        entries["input_sha256"] = input_digest(args.input)
    entries.update(extra or {})
    return entries


def _prepare_out(prefix: str) -> str:
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    return prefix


# ============================================
# SYNTHETIC DATA
# ============================================

def _feasible_factor(rng, constraint: ConstraintSet, m: int, r: int) -> np.ndarray:
    if constraint is ConstraintSet.STOKES:
        t = rng.uniform(0.0, 1.0, (m, r))
        direction = rng.standard_normal((3, m, r))
        direction /= np.linalg.norm(direction, axis=0)
        rho = rng.uniform(0.0, 1.0, (m, r)) * t
        return np.concatenate([t[None], direction * rho])
    return np.concatenate([np.zeros((1, m, r)), rng.uniform(0.0, 1.0, (3, m, r))])


def make_synthetic(constraint: ConstraintSet, m: int, n: int, r: int, seed: int = 0,
                   noise: float = 0.0, xi: float = DEFAULT_XI) -> tuple:
    """(M, W*, H*) with M = W* H* exactly when noise is 0.

    W* is feasible with about half of its entries zero (every column keeps
    one nonzero entry). H* is separable: r identity columns plus mixtures
    whose column sums lie in (0.2, 1], columns shuffled.
    """
    if min(m, n, r) < 1:
        raise ConfigError(f"dimensions must be positive, got m={m} n={n} r={r}")
    if r > n:
        raise DimensionError(f"rank {r} exceeds the {n} columns requested")
    if noise < 0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)

    planes = project_array(_feasible_factor(rng, constraint, m, r), constraint, xi)
    zero = rng.random((m, r)) < 0.5
    zero[rng.integers(0, m, r), np.arange(r)] = False
    planes[:, zero] = 0.0
    W = QuatMatrix(planes)

    H = np.zeros((r, n))
    H[:, :r] = np.eye(r)
    if n > r:
        weights = rng.dirichlet(np.ones(r), size=n - r).T
        H[:, r:] = weights * (1.0 - rng.uniform(0.0, 0.8, n - r))
    H = H[:, rng.permutation(n)]

    M = qmat_mul_real(W, H)
    if noise > 0:
        E = rng.standard_normal(M.planes.shape)
        scale = noise * qmat_fro_norm(M) / float(np.linalg.norm(E.ravel()))
        M = QuatMatrix(project_array(M.planes + scale * E, constraint, xi))
    return M, W, H


# ============================================
# SUBCOMMANDS
# ============================================

def cmd_synth(args) -> int:
    constraint = ConstraintSet.from_mode(args.mode)
    M, W, H = make_synthetic(constraint, args.rows, args.cols, args.rank, args.seed, args.noise, args.xi)
    prefix = _prepare_out(args.out)

    write_qmat(M, f"{prefix}_M.qmat")
    write_qmat(W, f"{prefix}_W_true.qmat")
    write_h_csv(H, f"{prefix}_H_true.csv")
    write_manifest({
        "subcommand": "synth",
        "mode": args.mode,
        "rows": args.rows,
        "cols": args.cols,
        "rank": args.rank,
        "noise": args.noise,
        "seed": args.seed,
        "xi": args.xi,
        "numpy_version": np.__version__,
        "created": datetime.now().isoformat(),
    }, f"{prefix}_manifest.txt")

    print(f"  ✓ Saved: {prefix}_M.qmat ({M.rows}x{M.cols}, rank {args.rank}, noise {args.noise:g})")
    print(f"  ✓ Saved: {prefix}_W_true.qmat, {prefix}_H_true.csv")
    return EXIT_OK


def run_outcome(report, key: str) -> dict:
    """Manifest entries recording how one run ended."""
    return {
        f"terminated_by_{key}": report.terminated_by.value,
        f"iterations_{key}": report.iterations,
        f"rescues_{key}": report.rescues,
    }


def _report_row(method: Method, rank: int, report, no_timing: bool) -> ReportRow:
    metrics = report.final_metrics
    time_s = None if no_timing or metrics is None else metrics.elapsed
    return ReportRow(method.label, rank, metrics, time_s)


def cmd_factorize(args) -> int:
    constraint = ConstraintSet.from_mode(args.mode)
    methods = expand_methods(args.method)
    data = load_input(args.input, constraint, args.block)
    prefix = _prepare_out(args.out)
    M = data.M

    print(f"  Input: {args.input} -> {M.rows}x{M.cols} quaternion matrix ({data.kind})")
    base_cfg = solver_config(args, methods[0], args.rank)
    init = init_factors(M, constraint, init_plan(args, args.rank), base_cfg)

    rows = []
    outcomes = {}
    exit_code = EXIT_OK
    for method in methods:
        cfg = base_cfg.replace(method=method)
        run_prefix = prefix if len(methods) == 1 else f"{prefix}_{method.value}"
        print(f"\n{'='*60}")
        print(f"  {method.label} (r={args.rank})")
        print('='*60)

        pair, report = qnmf_solve(M, constraint, cfg, init)
        write_qmat(pair.W, f"{run_prefix}_W.qmat")
        write_h_csv(pair.H, f"{run_prefix}_H.csv")
        write_trace_csv(report, f"{run_prefix}_trace.csv")
        write_timing_csv(report, f"{run_prefix}_timing.csv")
        written = write_reconstruction(data, pair.reconstruct(), run_prefix)
        rows.append(_report_row(method, args.rank, report, args.no_timing))
        outcomes.update(run_outcome(report, method.value))

        icon = "✓" if report.terminated_by.is_success else "✗"
        print(f"  {icon} {report.terminated_by.value} after {report.iterations} iterations, "
              f"Upsilon = {100 * report.final_metrics.upsilon:.2f}%")
        if report.rescues:
            print(f"  ⚠ {report.rescues} degenerate components rescued")
        if report.message:
            print(f"  ⚠ {report.message}")
        print(f"  ✓ Saved: {run_prefix}_W.qmat, {run_prefix}_H.csv, {run_prefix}_trace.csv, "
              f"{len(written)} reconstruction file(s)")
        if not report.terminated_by.is_success:
            exit_code = EXIT_RUN_FAILED

    write_report_csv(rows, f"{prefix}_report.csv")
    write_manifest(run_manifest(args, base_cfg, methods, outcomes), f"{prefix}_manifest.txt")
    print(f"\n  ✓ Saved: {prefix}_report.csv")
    return exit_code


def cmd_metrics(args) -> int:
    constraint = ConstraintSet.from_mode(args.mode)
    data = load_input(args.input, constraint, args.block)
    W = read_qmat(args.w)
    H = read_h_csv(args.h)
    record = compute_metrics(data.M, W, H)
    prefix = _prepare_out(args.out)

    write_report_csv([ReportRow(args.label, W.cols, record)], f"{prefix}_report.csv")
    write_manifest({
        "subcommand": "metrics",
        "mode": args.mode,
        "input": args.input,
        "input_sha256": input_digest(args.input),
        "w": args.w,
        "w_sha256": input_digest(args.w),
        "h": args.h,
        "h_sha256": input_digest(args.h),
        "numpy_version": np.__version__,
        "created": datetime.now().isoformat(),
    }, f"{prefix}_manifest.txt")
    print(f"  Upsilon   = {100 * record.upsilon:.2f}%")
    for l in range(N_COMPONENTS):
        value = record.upsilon_l[l]
        shown = "undefined" if value is None else f"{100 * value:.2f}%"
        print(f"  Upsilon_{l} = {shown}")
    print(f"  ✓ Saved: {prefix}_report.csv")
    return EXIT_OK


def _run_cell(M: QuatMatrix, constraint: ConstraintSet, args, method: Method, rank: int):
    cfg = solver_config(args, method, rank)
    init = init_factors(M, constraint, init_plan(args, rank), cfg)
    return qnmf_solve(M, constraint, cfg, init)


def cmd_sweep(args) -> int:
    constraint = ConstraintSet.from_mode(args.mode)
    methods = expand_methods(args.method)
    ranks = list(dict.fromkeys(args.ranks))
    data = load_input(args.input, constraint, args.block)
    prefix = _prepare_out(args.out)
    # validates the shared flags before any cell starts
    base_cfg = solver_config(args, methods[0], ranks[0])

    cells = [(method, rank) for method in methods for rank in ranks]
    print(f"  Sweep: {len(methods)} methods x {len(ranks)} ranks = {len(cells)} cells, jobs={args.jobs}")

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        futures = {
            cell: pool.submit(_run_cell, data.M, constraint, args, *cell) for cell in cells
        }

    rows = []
    outcomes = {}
    failures = []
    exit_code = EXIT_OK
    print(f"\n{'='*60}")
    print("  SWEEP RESULTS")
    print('='*60)
    for method, rank in cells:
        try:
            _, report = futures[(method, rank)].result()
        except QnmfError as e:
            logger.error("%s r=%d failed: %s", method.label, rank, e)
            failures.append({"method": method.label, "r": rank, "error": f"{type(e).__name__}: {e}"})
            rows.append(ReportRow(method.label, rank))
            outcomes[f"terminated_by_{method.value}_r{rank}"] = "Error"
            print(f"  ✗ {method.label:<11} r={rank:<3} {type(e).__name__}")
            exit_code = EXIT_RUN_FAILED
            continue

        rows.append(_report_row(method, rank, report, args.no_timing))
        outcomes.update(run_outcome(report, f"{method.value}_r{rank}"))
        if report.terminated_by.is_success:
            icon = "✓"
        else:
            icon = "⚠"
            exit_code = EXIT_RUN_FAILED
        print(f"  {icon} {method.label:<11} r={rank:<3} Upsilon={100 * report.final_metrics.upsilon:6.2f}% "
              f"({report.terminated_by.value}, {report.iterations} it)")

    write_report_csv(rows, f"{prefix}_report.csv")
    write_manifest(
        run_manifest(args, base_cfg, methods, {"ranks": ",".join(str(r) for r in ranks), **outcomes}),
        f"{prefix}_manifest.txt",
    )
    print(f"\n  ✓ Saved: {prefix}_report.csv")

    if failures:
        error_report = {"timestamp": datetime.now().isoformat(), "cells": failures}
        with open(f"{prefix}_errors.json", "w") as f:
            json.dump(error_report, f, indent=2)
        print(f"  ⚠ {len(failures)} cells failed, see {prefix}_errors.json")
    return exit_code


# ============================================
# ARGUMENTS
# ============================================

def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_solver_flags(p: argparse.ArgumentParser, multi_method: bool):
    defaults = SolverConfig()
    if multi_method:
        p.add_argument("--method", nargs="+", choices=METHOD_CHOICES, default=["all"],
                       help="Methods to run ('all' = the four variants)")
    else:
        p.add_argument("--method", choices=METHOD_CHOICES, default=Method.QHALS.value,
                       help="Method to run ('all' = the four variants on one shared init)")
    p.add_argument("--max-iter", type=_positive_int, default=defaults.max_outer)
    p.add_argument("--tol", type=float, default=defaults.outer_tol, help="Outer relative-decrease threshold")
    p.add_argument("--inner-iter", type=_positive_int, default=defaults.inner_iter)
    p.add_argument("--inner-tol", type=float, default=defaults.inner_tol)
    p.add_argument("--xi", type=float, default=defaults.xi, help="Positivity floor")
    p.add_argument("--div-eps", type=float, default=defaults.div_eps)
    p.add_argument("--time-budget", type=float, default=defaults.time_budget_secs, help="Seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=[s.value for s in InitStrategy], default=InitStrategy.SPA_STACKED.value)
    p.add_argument("--no-timing", action="store_true", help="Leave time_s blank in reports")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Constrained quaternion NMF runner")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Write a synthetic data matrix and its true factors")
    p.add_argument("--mode", choices=["stokes", "rgb"], required=True)
    p.add_argument("--rows", type=_positive_int, required=True)
    p.add_argument("--cols", type=_positive_int, required=True)
    p.add_argument("--rank", type=_positive_int, required=True)
    p.add_argument("--noise", type=float, default=0.0, help="Relative Frobenius noise level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--xi", type=float, default=DEFAULT_XI)
    p.add_argument("--out", required=True, help="Output prefix")

    for name, help_text in (("factorize", "Factorize one input"), ("sweep", "Run a method x rank grid")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("input", help=".qmat, .qstk, .ppm or a directory of .ppm files")
        p.add_argument("--mode", choices=["stokes", "rgb"], required=True)
        if name == "factorize":
            p.add_argument("--rank", type=_positive_int, required=True)
        else:
            p.add_argument("--ranks", type=_positive_int, nargs="+", required=True)
            p.add_argument("--jobs", type=_positive_int, default=DEFAULT_JOBS)
        p.add_argument("--block", type=_positive_int, default=DEFAULT_BLOCK, help="Stokes tile size")
        p.add_argument("--out", required=True, help="Output prefix")
        _add_solver_flags(p, multi_method=(name == "sweep"))

    p = sub.add_parser("metrics", help="Recompute metrics from stored factors")
    p.add_argument("input")
    p.add_argument("--mode", choices=["stokes", "rgb"], required=True)
    p.add_argument("--w", required=True, help="W factor (.qmat)")
    p.add_argument("--h", required=True, help="H factor (.csv)")
    p.add_argument("--block", type=_positive_int, default=DEFAULT_BLOCK)
    p.add_argument("--label", default="stored", help="Method column of the report row")
    p.add_argument("--out", required=True, help="Output prefix")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "factorize": cmd_factorize,
    "metrics": cmd_metrics,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format=LOG_FORMAT)

    print("=" * 60)
    print(f"  QUATERNION NMF - {args.command.upper()}")
    print("=" * 60)

    try:
        return COMMANDS[args.command](args)
    except DegenerateInputError as e:
        print(f"  ✗ Degenerate input: {e}")
        return EXIT_RUN_FAILED
    except (QnmfError, OSError) as e:
        print(f"  ✗ {type(e).__name__}: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.stdout.reconfigure(encoding="utf-8", errors="replace")
    sys.exit(main())
