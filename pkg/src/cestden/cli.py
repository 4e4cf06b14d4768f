"""Command-line pipeline: simulate -> noise -> denoise -> fit -> metrics -> ablate.

Every subcommand resolves its parameters as defaults < config file < flags,
runs deterministically for a fixed seed and thread count, and writes a JSON
manifest recording the fully resolved parameters next to its outputs.
Errors leave a single `error: ...` line on stderr and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .lorentz import default_fit_config, fit_volume
from .mapio import read_map_csv, write_map_csv, write_mask_pgm, write_pgm
from .metrics import METRIC_CSV_HEADER, compute_report, report_csv_row
from .phantom import PHANTOM_CONFIG_KEYS, PhantomConfig, parse_phantom_config, synthesize_phantom
from .regression import TrainConfig, run_iris, write_loss_csv, write_params
from .subspace import (
    gram_svd,
    reconstruct,
    threshold_median,
    threshold_truncation,
    write_decomposition,
)
from .volume import NoiseSpec, add_gaussian_noise, read_volume, write_volume

DENOISE_METHODS = ("iris", "truncate", "median")
ABLATE_METHODS = ("truncation", "median", "iris")


@dataclass(eq=False)
class RunManifest:
    """Resolved record of one subcommand invocation."""

    subcommand: str
    parameters: dict
    inputs: list
    outputs: list
    seed: int | None
    version: str
    duration_s: float


def write_manifest(manifest: RunManifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(json.dumps(asdict(manifest), indent=2, sort_keys=True))
        f.write("\n")


def _finish(args, subcommand, parameters, inputs, outputs, seed, t0, manifest_path):
    manifest = RunManifest(
        subcommand=subcommand,
        parameters=parameters,
        inputs=[str(p) for p in inputs],
        outputs=[str(p) for p in outputs],
        seed=seed,
        version=__version__,
        duration_s=round(time.perf_counter() - t0, 6),
    )
    write_manifest(manifest, manifest_path)
    return 0


def _read_kv_config(path, allowed) -> dict:
    """key=value lines, '#' comments; unknown keys are rejected by line."""
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    out = {}
    for num, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ValueError(f"{path}:{num}: expected key=value, got {text!r}")
        key, val = (s.strip() for s in text.split("=", 1))
        if key not in allowed:
            raise ValueError(f"{path}:{num}: unknown key {key!r}")
        out[key] = val
    return out


def _resolve(flag_value, file_cfg, key, default, cast):
    if flag_value is not None:
        return flag_value
    if key in file_cfg:
        raw = file_cfg[key]
        try:
            return cast(raw)
        except (TypeError, ValueError):
            raise ValueError(f"config key {key!r}: cannot parse {raw!r}") from None
    return default


def _sibling_manifest(out_path) -> str:
    return f"{out_path}.manifest.json"


def _threads(args) -> int:
    n = getattr(args, "threads", None)
    if n is None:
        n = os.cpu_count() or 1
    if n < 1:
        raise ValueError("--threads must be >= 1")
    return n


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    cfg = PhantomConfig()
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            cfg = parse_phantom_config(f.read(), cfg)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    vol, masks = synthesize_phantom(cfg)
    os.makedirs(args.out, exist_ok=True)
    vol_path = os.path.join(args.out, "ground_truth.cstv")
    write_volume(vol, vol_path)
    outputs = [vol_path]
    for name in ("square", "circle", "octagon"):
        mask_path = os.path.join(args.out, f"mask_{name}.pgm")
        write_mask_pgm(masks.region(name), mask_path)
        outputs.append(mask_path)
    params = {
        "m": cfg.M,
        "n": cfg.N,
        "seed": cfg.seed,
        "smooth_sigma": cfg.smooth_sigma,
        "offsets": [float(x) for x in cfg.schedule.offsets],
        "pools": {name: asdict(rng) for name, rng in cfg.pools.items()},
        "threads": _threads(args),
    }
    return _finish(
        args, "simulate", params, [args.config] if args.config else [], outputs,
        cfg.seed, t0, os.path.join(args.out, "manifest.json"),
    )


# ------------------------------------------------------------------- noise


def cmd_noise(args) -> int:
    t0 = time.perf_counter()
    file_cfg = _read_kv_config(args.config, ("sigma", "seed")) if args.config else {}
    sigma = _resolve(args.sigma, file_cfg, "sigma", None, float)
    seed = _resolve(args.seed, file_cfg, "seed", 0, int)
    if sigma is None:
        raise ValueError("sigma is required (flag --sigma or config key)")
    vol = read_volume(args.input)
    noisy = add_gaussian_noise(vol, NoiseSpec(sigma=sigma, seed=seed))
    write_volume(noisy, args.out)
    params = {"sigma": sigma, "seed": seed, "threads": _threads(args)}
    return _finish(
        args, "noise", params, [args.input], [args.out], seed, t0,
        _sibling_manifest(args.out),
    )


# ----------------------------------------------------------------- denoise

_DENOISE_KEYS = (
    "method", "rank", "iterations", "learning_rate", "frequencies",
    "hidden_width", "kernel", "seed",
)


def cmd_denoise(args) -> int:
    t0 = time.perf_counter()
    file_cfg = _read_kv_config(args.config, _DENOISE_KEYS) if args.config else {}
    method = _resolve(args.method, file_cfg, "method", "iris", str)
    rank = _resolve(args.rank, file_cfg, "rank", 4, int)
    iterations = _resolve(args.iterations, file_cfg, "iterations", 3000, int)
    lr = _resolve(args.learning_rate, file_cfg, "learning_rate", 1e-3, float)
    freqs = _resolve(args.frequencies, file_cfg, "frequencies", 6, int)
    width = _resolve(args.hidden_width, file_cfg, "hidden_width", 512, int)
    kernel = _resolve(args.kernel, file_cfg, "kernel", 3, int)
    seed = _resolve(args.seed, file_cfg, "seed", 0, int)
    if method not in DENOISE_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {DENOISE_METHODS}")
    if args.save_params and method != "iris":
        raise ValueError("--save-params requires method iris")

    vol = read_volume(args.input)
    outputs = [args.out]
    if method == "iris":
        cfg = TrainConfig(
            iterations=iterations,
            learning_rate=lr,
            seed=seed,
            num_frequencies=freqs,
            hidden_width=width,
        )
        result = run_iris(vol, rank, cfg)
        out_vol, decomp = result.volume, result.decomposition
        loss_path = f"{args.out}.loss.csv"
        write_loss_csv(result.loss_history, loss_path)
        outputs.append(loss_path)
        if args.save_params:
            write_params(result.params, args.save_params)
            outputs.append(args.save_params)
    else:
        decomp = gram_svd(vol, rank)
        if method == "truncate":
            coeffs = threshold_truncation(decomp)
        else:
            coeffs = threshold_median(decomp.coefficients, vol.M, vol.N, kernel)
        out_vol = reconstruct(coeffs, decomp.basis, vol.M, vol.N, vol.schedule)
    write_volume(out_vol, args.out)
    if args.save_decomposition:
        write_decomposition(decomp, args.save_decomposition)
        outputs.append(args.save_decomposition)

    params = {
        "method": method,
        "rank": rank,
        "iterations": iterations,
        "learning_rate": lr,
        "frequencies": freqs,
        "hidden_width": width,
        "kernel": kernel,
        "seed": seed,
        "threads": _threads(args),
    }
    return _finish(
        args, "denoise", params, [args.input], outputs, seed, t0,
        _sibling_manifest(args.out),
    )


# --------------------------------------------------------------------- fit

_FIT_KEYS = ("max_iterations", "tolerance", "water_shift_bound")


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    file_cfg = _read_kv_config(args.config, _FIT_KEYS) if args.config else {}
    fit_cfg = default_fit_config()
    fit_cfg = replace(
        fit_cfg,
        max_iterations=_resolve(None, file_cfg, "max_iterations",
                                fit_cfg.max_iterations, int),
        tolerance=_resolve(None, file_cfg, "tolerance", fit_cfg.tolerance, float),
        water_shift_bound=_resolve(None, file_cfg, "water_shift_bound",
                                   fit_cfg.water_shift_bound, float),
    )
    vol = read_volume(args.input)
    maps = fit_volume(vol, fit_cfg)
    os.makedirs(args.out, exist_ok=True)
    window = tuple(args.window) if args.window else None
    outputs = []
    windows = {}
    for name in maps.pool_names:
        amp = maps.amplitude[name]
        csv_path = os.path.join(args.out, f"{name}_amplitude.csv")
        pgm_path = os.path.join(args.out, f"{name}_amplitude.pgm")
        write_map_csv(amp, csv_path)
        windows[name] = write_pgm(amp, pgm_path, window)
        outputs += [csv_path, pgm_path]
    for name, field in (
        ("water_shift", maps.water_shift),
        ("residual", maps.residual),
        ("status", maps.status.astype(np.float64)),
    ):
        csv_path = os.path.join(args.out, f"{name}.csv")
        write_map_csv(field, csv_path)
        outputs.append(csv_path)
    status_pgm = os.path.join(args.out, "status.pgm")
    write_pgm(maps.status.astype(np.float64), status_pgm, (0.0, 1.0))
    outputs.append(status_pgm)
    params = {
        "max_iterations": fit_cfg.max_iterations,
        "tolerance": fit_cfg.tolerance,
        "water_shift_bound": fit_cfg.water_shift_bound,
        "window": list(window) if window else "min-max",
        "applied_windows": {k: list(v) for k, v in windows.items()},
        "unconverged_voxels": int(np.sum(maps.status == 0)),
        "threads": _threads(args),
    }
    return _finish(
        args, "fit", params, [args.input], outputs, None, t0,
        os.path.join(args.out, "manifest.json"),
    )


# ----------------------------------------------------------------- metrics


def cmd_metrics(args) -> int:
    t0 = time.perf_counter()
    truth = read_volume(args.truth)
    test = read_volume(args.test)
    report = compute_report(truth, test)
    row = report_csv_row(args.method, args.rank, args.sigma, report)
    new_file = not os.path.exists(args.out)
    with open(args.out, "a", encoding="utf-8", newline="") as f:
        if new_file:
            f.write(METRIC_CSV_HEADER + "\n")
        f.write(row + "\n")
    q1, med, q3 = report.lntmse_quartiles
    print(
        f"mse={report.mse:.6e} psnr={report.psnr:.2f} ssim={report.ssim:.6f} "
        f"lntmse_quartiles=({q1:.3f}, {med:.3f}, {q3:.3f})"
    )
    params = {
        "method": args.method,
        "rank": args.rank,
        "sigma": args.sigma,
        "threads": _threads(args),
    }
    return _finish(
        args, "metrics", params, [args.truth, args.test], [args.out], None, t0,
        _sibling_manifest(args.out),
    )


# ------------------------------------------------------------------ ablate

_ABLATE_KEYS = (
    "ranks", "methods", "iterations", "learning_rate", "frequencies",
    "hidden_width", "kernel", "seed", "sigma",
)


def _parse_int_list(text: str) -> tuple:
    items = tuple(int(s) for s in text.split(",") if s.strip())
    if not items:
        raise ValueError("empty K set")
    return items


def _parse_method_list(text: str) -> tuple:
    items = tuple(s.strip() for s in text.split(",") if s.strip())
    if not items:
        raise ValueError("empty method set")
    for m in items:
        if m not in ABLATE_METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {ABLATE_METHODS}")
    return items


def ablation_cell(truth, noisy, method, rank, train_cfg, kernel):
    """Denoise one (method, K) cell and score it against the ground truth."""
    if method == "iris":
        out_vol = run_iris(noisy, rank, train_cfg).volume
    else:
        decomp = gram_svd(noisy, rank)
        if method == "truncation":
            coeffs = threshold_truncation(decomp)
        else:
            coeffs = threshold_median(decomp.coefficients, noisy.M, noisy.N, kernel)
        out_vol = reconstruct(coeffs, decomp.basis, noisy.M, noisy.N, noisy.schedule)
    return compute_report(truth, out_vol)


def cmd_ablate(args) -> int:
    t0 = time.perf_counter()
    file_cfg = _read_kv_config(args.config, _ABLATE_KEYS) if args.config else {}
    ranks = _resolve(args.ranks, file_cfg, "ranks", "1,2,3,4,5", str)
    methods = _resolve(args.methods, file_cfg, "methods",
                       ",".join(ABLATE_METHODS), str)
    iterations = _resolve(args.iterations, file_cfg, "iterations", 3000, int)
    lr = _resolve(args.learning_rate, file_cfg, "learning_rate", 1e-3, float)
    freqs = _resolve(args.frequencies, file_cfg, "frequencies", 6, int)
    width = _resolve(args.hidden_width, file_cfg, "hidden_width", 512, int)
    kernel = _resolve(args.kernel, file_cfg, "kernel", 3, int)
    seed = _resolve(args.seed, file_cfg, "seed", 0, int)
    sigma = _resolve(args.sigma, file_cfg, "sigma", math.nan, float)
    ranks = _parse_int_list(ranks)
    methods = _parse_method_list(methods)

    truth = read_volume(args.truth)
    noisy = read_volume(args.noisy)
    train_cfg = TrainConfig(
        iterations=iterations,
        learning_rate=lr,
        seed=seed,
        num_frequencies=freqs,
        hidden_width=width,
    )
    table = {}
    details = []
    for method in methods:
        for rank in ranks:
            report = ablation_cell(truth, noisy, method, rank, train_cfg, kernel)
            table[(method, rank)] = report.mse
            details.append(report_csv_row(method, rank, sigma, report))

    with open(args.out, "w", encoding="utf-8", newline="") as f:
        f.write("method," + ",".join(f"K={k}" for k in ranks) + "\n")
        for method in methods:
            cells = ",".join(f"{table[(method, k)]:.17g}" for k in ranks)
            f.write(f"{method},{cells}\n")
    stem, _ = os.path.splitext(args.out)
    details_path = f"{stem}_details.csv"
    with open(details_path, "w", encoding="utf-8", newline="") as f:
        f.write(METRIC_CSV_HEADER + "\n")
        for row in details:
            f.write(row + "\n")

    params = {
        "ranks": list(ranks),
        "methods": list(methods),
        "iterations": iterations,
        "learning_rate": lr,
        "frequencies": freqs,
        "hidden_width": width,
        "kernel": kernel,
        "seed": seed,
        "sigma": sigma,
        "threads": _threads(args),
    }
    return _finish(
        args, "ablate", params, [args.truth, args.noisy],
        [args.out, details_path], seed, t0, _sibling_manifest(args.out),
    )


# -------------------------------------------------------------- export-map


def cmd_export_map(args) -> int:
    t0 = time.perf_counter()
    arr = read_map_csv(args.input)
    window = tuple(args.window) if args.window else None
    applied = write_pgm(arr, args.out, window)
    params = {
        "window": list(window) if window else "min-max",
        "applied_window": list(applied),
        "threads": _threads(args),
    }
    return _finish(
        args, "export-map", params, [args.input], [args.out], None, t0,
        _sibling_manifest(args.out),
    )


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cestden",
        description="z-spectrum denoising pipeline (simulate/noise/denoise/fit/metrics/ablate)",
    )
    parser.add_argument("--version", action="version", version=f"cestden {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--threads", type=int, help="BLAS thread cap (default: all cores)")
        p.add_argument("--out", required=out_required, help="output path")

    p = sub.add_parser("simulate", help="synthesize the ground-truth phantom")
    common(p)
    p.add_argument("--seed", type=int, help="override the phantom seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("noise", help="add seeded Gaussian noise to a volume")
    common(p)
    p.add_argument("--in", dest="input", required=True, help="input CSTV volume")
    p.add_argument("--sigma", type=float, help="noise standard deviation")
    p.add_argument("--seed", type=int, help="noise seed")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("denoise", help="subspace denoising (iris/truncate/median)")
    common(p)
    p.add_argument("--in", dest="input", required=True, help="input CSTV volume")
    p.add_argument("--method", choices=DENOISE_METHODS)
    p.add_argument("--rank", "-K", type=int, dest="rank", help="subspace rank K")
    p.add_argument("--iterations", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--frequencies", type=int, help="positional encoding depth L")
    p.add_argument("--hidden-width", type=int)
    p.add_argument("--kernel", type=int, help="median filter kernel size")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--save-params", help="write trained network checkpoint (IRNP)")
    p.add_argument("--save-decomposition", help="write subspace decomposition (CSTD)")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("fit", help="per-voxel 4-pool fit to amplitude maps")
    common(p)
    p.add_argument("--in", dest="input", required=True, help="input CSTV volume")
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"),
                   help="fixed PGM window for amplitude maps")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("metrics", help="score a volume against ground truth")
    common(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--method", default="unnamed", help="label for the CSV row")
    p.add_argument("--rank", type=int, default=0, help="label for the CSV row")
    p.add_argument("--sigma", type=float, default=math.nan, help="label for the CSV row")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("ablate", help="method x rank grid (Table-style MSE matrix)")
    common(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--noisy", required=True)
    p.add_argument("--ranks", help="comma-separated K values (default 1,2,3,4,5)")
    p.add_argument("--methods", help=f"comma-separated from {ABLATE_METHODS}")
    p.add_argument("--iterations", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--frequencies", type=int)
    p.add_argument("--hidden-width", type=int)
    p.add_argument("--kernel", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float, help="noise level label for detail rows")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-map", help="f64 CSV map to windowed 8-bit PGM")
    common(p)
    p.add_argument("--in", dest="input", required=True, help="input map CSV")
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    p.set_defaults(func=cmd_export_map)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(limits=_threads(args)):
            return args.func(args)
    except Exception as exc:  # single-line, machine-parsable failure contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
