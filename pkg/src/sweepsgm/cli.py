"""Command-line interface: ``estimate``, ``eval``, ``synth`` and ``bench``.

Exit codes: 0 on success, 1 for unusable inputs, 2 when the pipeline fails.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, parallel
from .evalkit import fronto_parallel_scene, metric_report, render_synthetic, roc_curve, write_roc_csv
from .io import (
    build_config,
    format_config,
    format_scene,
    load_config_overrides,
    match_poses,
    parse_scene,
    read_pfm,
    read_pgm,
    read_poses,
    write_pfm,
    write_pgm,
    write_poses,
)
from .matching import BUNDLE_SIZE
from .pipeline import PipelineConfig, PipelineError, run_pipeline

logger = logging.getLogger("sweepsgm")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_PIPELINE = 2

EXAMPLE_SCENE = "example_scene.txt"


class InputError(Exception):
    """Bad command-line input; reported with exit status 1."""


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value file (d_min and d_max are required)")
    p.add_argument("--variant", choices=("fp", "sn", "pg"), help="SGM smoothness variant")
    p.add_argument("--cost", choices=("census", "ncc"), help="matching cost")
    p.add_argument("--p2", choices=("gradient", "line"), help="P2 strategy")
    p.add_argument("--levels", type=int, help="pyramid levels")
    p.add_argument("--delta-d", type=int, help="plane range half-width on refined levels")


def _add_threads(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--threads",
        type=int,
        help=f"worker threads (default: ${parallel.ENV_VAR} or the CPU count)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sweepsgm",
        description="Plane-sweep multi-view stereo with surface-aware semi-global matching.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="depth, normals and confidence for a five-image bundle")
    est.add_argument("images", nargs="+", type=Path, help="five PGM images in bundle order; the middle one is the reference")
    est.add_argument("--poses", type=Path, required=True, help="pose file, one camera per line")
    est.add_argument("--normals", type=Path, help="normal prior (3-channel PFM) for the sn variant")
    est.add_argument("--out", type=Path, required=True, help="output directory")
    est.add_argument("--no-plots", action="store_true", help="skip the PNG figures")
    _add_pipeline_flags(est)
    _add_threads(est)

    ev = sub.add_parser("eval", help="L1 metrics and confidence ROC against ground truth")
    ev.add_argument("--pred", nargs="+", type=Path, required=True, help="predicted depth PFM(s)")
    ev.add_argument("--gt", nargs="+", type=Path, required=True, help="ground truth depth PFM(s)")
    ev.add_argument("--conf", nargs="+", type=Path, help="confidence PFM(s) aligned with --pred")
    ev.add_argument("--out", type=Path, help="ROC CSV path (a PNG is written next to it)")
    ev.add_argument("--no-plots", action="store_true", help="skip the ROC figure")

    syn = sub.add_parser("synth", help="render a synthetic bundle with ground truth")
    syn.add_argument("scene", nargs="?", type=Path, help=f"scene file (default: bundled {EXAMPLE_SCENE})")
    syn.add_argument("--out", type=Path, required=True, help="output directory")
    syn.add_argument("--noise", type=float, help="override the scene's noise std")

    bench = sub.add_parser("bench", help="seconds per bundle and thread scaling at 640x480")
    bench.add_argument("--width", type=int, default=640)
    bench.add_argument("--height", type=int, default=480)
    bench.add_argument("--repeat", type=int, default=1, help="timed runs per thread count")
    bench.add_argument("--out", type=Path, help="directory for bench.csv and bench.png")
    _add_pipeline_flags(bench)
    _add_threads(bench)
    return parser


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _apply_threads(args: argparse.Namespace) -> int:
    try:
        return parallel.set_threads(args.threads)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def resolve_config(args: argparse.Namespace, d_range: tuple[float, float] | None = None) -> PipelineConfig:
    """Config file values, then command-line flags on top."""
    overrides: dict[str, object] = {}
    if args.config is not None:
        if not args.config.is_file():
            raise InputError(f"config file not found: {args.config}")
        overrides.update(load_config_overrides(args.config))
    if d_range is not None:
        overrides.setdefault("d_min", d_range[0])
        overrides.setdefault("d_max", d_range[1])
    flags = {
        "variant": args.variant,
        "cost": args.cost,
        "p2_mode": args.p2,
        "levels": args.levels,
        "delta_d": args.delta_d,
    }
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return build_config(overrides)


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def _load_bundle(args: argparse.Namespace):
    if len(args.images) != BUNDLE_SIZE:
        raise InputError(f"expected {BUNDLE_SIZE} images, got {len(args.images)}")
    for p in [*args.images, args.poses]:
        if not p.is_file():
            raise InputError(f"file not found: {p}")
    images = [read_pgm(p) for p in args.images]
    views = match_poses(args.images, read_poses(args.poses))
    for p, img, view in zip(args.images, images, views):
        if img.shape != (view.height, view.width):
            raise InputError(f"{p}: image is {img.shape[1]}x{img.shape[0]} but its pose says {view.width}x{view.height}")
    if len({img.shape for img in images}) != 1:
        raise InputError("all five images must have the same size")
    prior = None
    if args.normals is not None:
        prior = read_pfm(args.normals)
        if prior.shape != images[0].shape + (3,):
            raise InputError(f"{args.normals}: normal prior must be a 3-channel map of the image size")
    return images, views, prior


def write_run_log(path: Path, cfg: PipelineConfig, args: argparse.Namespace, result, total: float) -> None:
    """Effective configuration as a loadable config file, timings as comments."""
    lines = [
        f"# sweepsgm {__version__} estimate",
        f"# images: {' '.join(str(p) for p in args.images)}",
        f"# poses: {args.poses}",
        f"# threads: {parallel.get_threads()}",
        format_config(cfg).rstrip("\n"),
    ]
    for lv in result.levels:
        h, w = lv.depth.shape
        lines.append(f"# level {lv.level}: {w}x{h}, {len(lv.planes)} planes, variant {lv.variant}, {lv.seconds:.3f} s")
    lines.append(f"# total: {total:.3f} s")
    lines.append(f"# valid pixels: {int(result.mask.sum())} of {result.mask.size}")
    path.write_text("\n".join(lines) + "\n")


def cmd_estimate(args: argparse.Namespace) -> int:
    _apply_threads(args)
    cfg = resolve_config(args)
    images, views, prior = _load_bundle(args)
    args.out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    try:
        result = run_pipeline(images, views, cfg, normal_prior=prior)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    total = time.perf_counter() - t0

    write_pfm(args.out / "depth.pfm", result.depth)
    write_pfm(args.out / "normals.pfm", result.normals)
    write_pfm(args.out / "confidence.pfm", result.confidence)
    write_pgm(args.out / "mask.pgm", result.mask.astype(np.uint8) * 255)
    write_run_log(args.out / "run.log", cfg, args, result, total)
    if not args.no_plots:
        from .plotting import plot_estimate

        plot_estimate(result.depth, result.normals, result.confidence, args.out)
    print(f"wrote {args.out} ({total:.2f} s, {result.mask.mean():.1%} valid)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _read_maps(paths: list[Path]) -> list[np.ndarray]:
    maps = []
    for p in paths:
        if not p.is_file():
            raise InputError(f"file not found: {p}")
        maps.append(read_pfm(p))
    return maps


def cmd_eval(args: argparse.Namespace) -> int:
    if len(args.pred) != len(args.gt):
        raise InputError(f"got {len(args.pred)} predictions but {len(args.gt)} ground truth maps")
    preds, gts = _read_maps(args.pred), _read_maps(args.gt)
    for a, b, pa in zip(preds, gts, args.pred):
        if a.shape != b.shape:
            raise InputError(f"{pa}: shape {a.shape} does not match ground truth {b.shape}")
    pred = np.concatenate([m.ravel() for m in preds])
    gt = np.concatenate([m.ravel() for m in gts])
    report = metric_report(pred, gt)
    print(report)

    confs = None
    if args.conf:
        missing = [p for p in args.conf if not p.is_file()]
        if missing:
            logger.warning("confidence file %s not found, skipping the ROC", missing[0])
        elif len(args.conf) != len(args.pred):
            raise InputError("need one confidence map per prediction")
        else:
            confs = [read_pfm(p) for p in args.conf]
            for c, p, pa in zip(confs, preds, args.conf):
                if c.shape != p.shape:
                    raise InputError(f"{pa}: shape {c.shape} does not match the prediction {p.shape}")
    if confs is None:
        if args.out is not None:
            logger.warning("no confidence map, ROC not written")
        return EXIT_OK

    points = roc_curve(pred, np.concatenate([c.ravel() for c in confs]), gt)
    if args.out is None:
        for pt in points:
            print(",".join(f"{v:.6g}" for v in pt.row()))
        return EXIT_OK
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_roc_csv(points, args.out)
    if not args.no_plots:
        from .plotting import plot_roc

        plot_roc(points, args.out.with_suffix(".png"))
    print(f"wrote {args.out} ({len(points)} thresholds)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    if args.scene is None:
        text = resources.files("sweepsgm").joinpath("data", EXAMPLE_SCENE).read_text()
        source = EXAMPLE_SCENE
    else:
        if not args.scene.is_file():
            raise InputError(f"scene file not found: {args.scene}")
        text, source = args.scene.read_text(), str(args.scene)
    desc = parse_scene(text, source)
    scene = render_synthetic(desc, noise=args.noise)

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    names = [f"view{k}.pgm" for k in range(BUNDLE_SIZE)]
    for name, img in zip(names, scene.images):
        write_pgm(out / name, np.round(img).astype(np.uint8))
    write_poses(out / "poses.txt", dict(zip(names, scene.views)))
    write_pfm(out / "gt_depth.pfm", scene.gt_depth)
    write_pfm(out / "gt_normals.pfm", scene.gt_normals)
    (out / "scene.txt").write_text(format_scene(desc))
    (out / "config.txt").write_text(f"d_min = {desc.d_min!r}\nd_max = {desc.d_max!r}\n")
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _time_pipeline(images, views, cfg, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        run_pipeline(images, views, cfg)
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(args: argparse.Namespace) -> int:
    n_max = _apply_threads(args)
    desc = fronto_parallel_scene(width=args.width, height=args.height, focal=0.9375 * args.width)
    scene = render_synthetic(desc)
    cfg = resolve_config(args, d_range=(desc.d_min, desc.d_max))
    # warm-up compiles the kernels so they are not timed
    parallel.set_threads(1)
    run_pipeline(scene.images, scene.views, cfg.with_overrides(levels=1))

    rows = []
    try:
        for n in sorted({1, n_max}):
            parallel.set_threads(n)
            rows.append((n, _time_pipeline(scene.images, scene.views, cfg, max(args.repeat, 1))))
    finally:
        parallel.set_threads(args.threads)
    base = rows[0][1]
    print(f"bundle: 5 x {args.width}x{args.height}, cost {cfg.cost}, variant {cfg.variant}, {cfg.levels} levels")
    print("threads,seconds_per_bundle,bundles_per_second,speedup,efficiency")
    table = []
    for n, sec in rows:
        speedup = base / sec
        table.append((n, sec, 1.0 / sec, speedup, speedup / n))
        print(f"{n},{sec:.3f},{1.0 / sec:.3f},{speedup:.2f},{speedup / n:.2f}")
    print(
        "note: the published 1-2 Hz figure was measured on a desktop GPU; "
        "these CPU timings are not comparable to it."
    )
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "bench.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threads", "seconds_per_bundle", "bundles_per_second", "speedup", "efficiency"])
            writer.writerows(table)
        from .plotting import plot_scaling

        plot_scaling([r[0] for r in table], [r[1] for r in table], args.out / "bench.png")
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "eval": cmd_eval, "synth": cmd_synth, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except (InputError, PipelineError, ValueError, OSError) as exc:
        # PipelineError here comes from config validation; run failures exit 2 in cmd_estimate
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
