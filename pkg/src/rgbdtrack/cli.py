"""Command line entry point: ``run``, ``bench`` and ``fit-correction``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_config
from .correction import FitError, fit_correction, load_samples_csv
from .fusion import SingularCovarianceError
from .harness import benchmark, format_benchmark, run_scenario
from .tracker import FeasibilityError, NumericalError


def _parse_threads(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad thread list {text!r}") from exc
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("thread counts must be positive integers")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgbdtrack", description="Multi-camera RGBD robot tracking")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write trajectories and a report")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default="out")
    run.add_argument("--mode", choices=("fast", "adaptive", "naive", "pk"))
    run.add_argument("--no-correction", action="store_true")
    run.add_argument("--filter", choices=("kf", "rf", "raw"))

    bench = sub.add_parser("bench", help="measure per-pixel stage throughput")
    bench.add_argument("--config", required=True)
    bench.add_argument("--threads", type=_parse_threads, default=[1])
    bench.add_argument("--runs", type=int, default=5)
    bench.add_argument("--frames", type=int, default=10)
    bench.add_argument("--json", dest="json_out")

    fit = sub.add_parser("fit-correction", help="fit a depth correction model to (z_sh, z_cor) samples")
    fit.add_argument("--samples", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--degree", type=int, default=8)
    fit.add_argument("--doff", type=float, default=1090.0)
    fit.add_argument("--baseline", type=float, default=0.075)
    fit.add_argument("--focal", type=float, default=580.0)
    return p


def _run(args) -> int:
    cfg = load_config(args.config)
    if args.mode:
        cfg = replace(cfg, fusion=replace(cfg.fusion, mode=args.mode))
    if args.filter:
        cfg = replace(cfg, fusion=replace(cfg.fusion, filter=args.filter))
    if args.no_correction:
        cfg = replace(cfg, correction=replace(cfg.correction, enabled=False))
    result = run_scenario(cfg, out_dir=args.out)
    rep = result.report
    for cam in rep["cameras"]:
        cells = "  ".join(f"{k} {cam[k]['overall']:.4f}" for k in ("raw", "kf", "rf"))
        print(f"camera {cam['camera']}: {cells}")
    for mode, r in rep["fused"].items():
        print(f"fused {mode:>8}: x {r['x']:.4f} y {r['y']:.4f} z {r['z']:.4f} overall {r['overall']:.4f}")
    print(f"wrote {Path(args.out).resolve()}")
    return 0


def _bench(args) -> int:
    cfg = load_config(args.config)
    table = benchmark(cfg, args.threads, runs=args.runs, frames_per_run=args.frames)
    print(format_benchmark(table))
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(table, indent=2) + "\n")
    return 0


def _fit(args) -> int:
    samples = load_samples_csv(args.samples)
    model = fit_correction(samples, args.doff, args.baseline * args.focal, args.degree)
    model.save(args.out)
    print(f"degree {model.degree} fit on {len(samples)} samples, residual RMS {model.residual_rms:.4f} m")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _run, "bench": _bench, "fit-correction": _fit}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FeasibilityError, NumericalError, SingularCovarianceError) as exc:
        print(f"filter error: {exc}", file=sys.stderr)
        return 3
    except (FitError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
