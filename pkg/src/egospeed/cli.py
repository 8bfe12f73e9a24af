"""Command-line entry point: ``egospeed <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import report
from .calibrate import (
    ScaleFit,
    apply_scale,
    evaluate_series,
    fit_scale,
    fit_scale_pooled,
    rmse,
)
from .core import EstimatorConfig, Mode, ValidityThresholds, resolve_crop
from .errors import ConfigError, DataError
from .ingest import DatasetManifest, load_manifest, load_recording, read_disparity, read_flow
from .metrics import (
    aggregate,
    depth_metrics,
    disp_to_depth,
    flow_metrics,
    pooled_depth_metrics,
    pooled_flow_metrics,
)
from .pipeline import run_recording
from .synth import SCENARIOS, CameraModel, build_scenario, write_scenario

log = logging.getLogger("egospeed")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _odd_int(text: str) -> int:
    value = int(text)
    if value < 1 or value % 2 == 0:
        raise argparse.ArgumentTypeError("window must be an odd integer >= 1")
    return value


def _add_estimator_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, type=Path, help="dataset manifest (INI)")
    p.add_argument("--crop", default="cropG", help="cropB, cropG, cropR, full or x,y,w,h (default: cropG)")
    p.add_argument("--mode", default="base", help="base, e1 (flow only) or e2 (horizontal flow)")
    p.add_argument("--window", type=_odd_int, default=25, help="temporal smoothing window (odd)")
    p.add_argument("--pixel-smooth", action="store_true", help="also smooth per pixel before aggregation")
    p.add_argument("--tc", action="store_true", help="turning compensation (requires --crop full)")
    p.add_argument("--of-min", type=float, default=0.2)
    p.add_argument("--disp-min", type=float, default=0.01)
    p.add_argument("--joint-threshold", action="store_true", help="pixels must pass both thresholds")
    p.add_argument("--fit", default="lsq", choices=["lsq", "median"])
    p.add_argument("--fit-on", default="", help="comma-separated recording ids used for fitting k")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $EGOSPEED_THREADS)")


def _config(args, manifest: DatasetManifest, variant: Optional[str] = None, crop: Optional[str] = None) -> EstimatorConfig:
    mode = args.mode
    pixel = args.pixel_smooth
    tc = args.tc
    if variant is not None:
        mode, pixel, tc = "base", False, False
        for tag in variant.lower().split("+"):
            if tag in ("base", "e1", "e2", "of", "horiz"):
                mode = tag
            elif tag == "e3":
                pixel = True
            elif tag == "tc":
                tc = True
            else:
                raise ConfigError(f"unknown variant tag {tag!r} in {variant!r}")
    return EstimatorConfig(
        mode=Mode.parse(mode),
        crop=resolve_crop(crop if crop is not None else args.crop, manifest.crops),
        thresholds=ValidityThresholds(args.of_min, args.disp_min),
        smoothing_window=args.window,
        pixel_level_smoothing=pixel,
        turning_compensation=tc,
        joint_threshold=args.joint_threshold,
    )


def _manifest(path: Path) -> DatasetManifest:
    manifest = load_manifest(path)
    if not manifest.recordings:
        raise ConfigError(f"{path}: no recordings in manifest")
    return manifest


def _fit_ids(args) -> Optional[list[str]]:
    ids = [s for s in args.fit_on.split(",") if s.strip()]
    return ids or None


def _run_all(manifest: DatasetManifest, cfg: EstimatorConfig, threads):
    recs = {i: load_recording(manifest, i) for i in manifest.ids}
    return recs, {i: run_recording(recs[i], cfg, threads) for i in manifest.ids}


def _pooled_fit(recs, ests, method, fit_ids=None) -> ScaleFit:
    ids = fit_ids or [i for i in recs if recs[i].ground_truth is not None]
    missing = [i for i in ids if i not in recs or recs[i].ground_truth is None]
    if not ids or missing:
        raise ConfigError("fitting k needs ground truth (oxts_dir) for every fitted recording; or pass --scale")
    return fit_scale_pooled([ests[i].series for i in ids], [recs[i].ground_truth for i in ids], method)


# ---------------------------------------------------------------------------
# commands


def cmd_estimate(args) -> int:
    manifest = _manifest(args.manifest)
    cfg = _config(args, manifest)
    recs, ests = _run_all(manifest, cfg, args.threads)
    fit = None
    if args.scale is not None:
        k = args.scale
    else:
        fit = _pooled_fit(recs, ests, args.fit, _fit_ids(args))
        k = fit.k
    args.out.mkdir(parents=True, exist_ok=True)
    for rec_id in sorted(ests):
        report.write_trace(args.out / f"{rec_id}.csv", ests[rec_id], k, recs[rec_id].ground_truth)
    if fit is not None:
        with_gt = [i for i in sorted(recs) if recs[i].ground_truth is not None]
        pooled = rmse([apply_scale(ests[i].series, k) for i in with_gt], [recs[i].ground_truth for i in with_gt])
        report.write_scale(args.out / "scale.csv", {"pooled": fit}, pooled)
    log.info("k = %.6f, wrote %d traces to %s", k, len(ests), args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    manifest = _manifest(args.manifest)
    cfg = _config(args, manifest)
    recs, ests = _run_all(manifest, cfg, args.threads)
    fit = _pooled_fit(recs, ests, args.fit, _fit_ids(args))
    with_gt = [i for i in sorted(recs) if recs[i].ground_truth is not None]
    pooled = rmse([apply_scale(ests[i].series, fit.k) for i in with_gt], [recs[i].ground_truth for i in with_gt])
    fits = {"pooled": fit}
    if args.per_recording:
        for i in with_gt:
            fits[i] = fit_scale(ests[i].series, recs[i].ground_truth, args.fit)
    out = args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_scale(out, fits, pooled)
    print(f"k={fit.k:.6f} method={fit.method.value} n={fit.n_samples} rmse={pooled:.6f}")
    return EXIT_OK


def split_grid(text: str) -> list[str]:
    """Split ``variant[@crop]`` entries; a numeric token continues an ``x,y,w,h`` crop."""
    entries: list[str] = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        if token.isdigit() and entries and "@" in entries[-1]:
            entries[-1] += "," + token
        else:
            entries.append(token)
    return entries or ["base"]


def cmd_evaluate(args) -> int:
    manifest = _manifest(args.manifest)
    entries = split_grid(args.grid)
    recs = {i: load_recording(manifest, i) for i in manifest.ids}
    if any(r.ground_truth is None for r in recs.values()):
        raise ConfigError("evaluate needs ground truth (oxts_dir) for every recording")
    gts = {i: np.asarray(r.ground_truth) for i, r in recs.items()}
    rows, crops = [], []
    for entry in entries:
        variant, _, crop_name = entry.partition("@")
        crop_name = crop_name or args.crop
        cfg = _config(args, manifest, variant, crop_name)
        series = {i: run_recording(recs[i], cfg, args.threads).series for i in sorted(recs)}
        label = f"{manifest.label}/{variant}" if manifest.label else variant
        rows.append(evaluate_series(series, gts, cfg, args.fit, label, _fit_ids(args)))
        crops.append(crop_name)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    report.write_evaluation(args.out, rows, crops)
    for row, crop in zip(rows, crops):
        print(f"{row.label:30s} {crop:8s} k={row.k:.6f} rmse={row.rmse_pooled:.6f}")
    return EXIT_OK


FLOW_EXT = {".flo": "flo", ".png": "kitti_png"}
DEPTH_EXT = {".pfm": "pfm", ".png": "png16", ".raw": "float_raw"}


def _pair_files(pred_dir: Path, gt_dir: Path, exts) -> list[tuple[str, Path, Path]]:
    def index(d: Path):
        if not d.is_dir():
            raise ConfigError(f"{d}: not a directory")
        return {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() in exts}

    pred, gt = index(pred_dir), index(gt_dir)
    common = sorted(set(pred) & set(gt))
    if not common:
        raise DataError(f"no matching files between {pred_dir} and {gt_dir}")
    return [(name, pred[name], gt[name]) for name in common]


def cmd_metrics(args) -> int:
    if args.kind == "flow":
        pairs = _pair_files(args.pred, args.gt, FLOW_EXT)
        loaded = [
            (read_flow(p, FLOW_EXT[p.suffix.lower()]), read_flow(g, FLOW_EXT[g.suffix.lower()]))
            for _, p, g in pairs
        ]
        rows = [flow_metrics(p, g) for p, g in loaded]
        pooled = pooled_flow_metrics(loaded) if args.pooled else None
    else:
        pairs = _pair_files(args.pred, args.gt, DEPTH_EXT)
        loaded = []
        for _, p, g in pairs:
            pred = read_disparity(p, DEPTH_EXT[p.suffix.lower()])
            if args.pred_disparity:
                focal, baseline = args.pred_disparity
                pred = disp_to_depth(pred, focal, baseline)
            loaded.append((pred, read_disparity(g, DEPTH_EXT[g.suffix.lower()])))
        rows = [depth_metrics(p, g) for p, g in loaded]
        pooled = pooled_depth_metrics(loaded) if args.pooled else None
    names = [name for name, _, _ in pairs] + ["mean"]
    rows = rows + [aggregate(rows)]
    if pooled is not None:
        names.append("pooled")
        rows.append(pooled)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    report.write_metrics(args.out, names, rows)
    return EXIT_OK


def cmd_synth(args) -> int:
    cam = CameraModel()
    if args.resolution != 1.0:
        cam = cam.scaled(args.resolution)
    spec = build_scenario(args.scenario, cam, args.frames, args.seed)
    manifest = write_scenario(spec, cam, args.out, label=f"synthetic-{args.scenario}")
    print(manifest)
    return EXIT_OK


def cmd_chart(args) -> int:
    series = []
    labels = args.labels.split(",") if args.labels else []
    for n, path in enumerate(args.traces):
        try:
            trace = report.read_trace(path)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
        if n == 0 and "gt" in trace and np.isfinite(trace["gt"]).any():
            series.append(("ground truth", trace["gt"]))
        column = "scaled" if "scaled" in trace and np.isfinite(trace["scaled"]).any() else "smoothed"
        if column not in trace:
            raise DataError(f"{path}: no estimate column")
        series.append((labels[n] if n < len(labels) else Path(path).stem, trace[column]))
    svg = report.line_chart_svg(series, title=args.title)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(svg, encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egospeed", description="Monocular ego-speed estimation from flow and disparity maps.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="per-recording speed traces (CSV)")
    _add_estimator_args(p)
    p.add_argument("--scale", type=float, default=None, help="use this k instead of fitting")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("calibrate", help="fit the global scale factor")
    _add_estimator_args(p)
    p.add_argument("--per-recording", action="store_true", help="also report per-recording k (diagnostic)")
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="RMSE table over a grid of variants")
    _add_estimator_args(p)
    p.add_argument("--grid", default="base", help="comma-separated variant[@crop], e.g. base@cropG,e2,tc@full")
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("metrics", help="flow or depth error metrics between two directories")
    p.add_argument("kind", choices=["flow", "depth"])
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--pred-disparity", nargs=2, type=float, metavar=("FOCAL", "BASELINE"),
                   help="predictions are disparities; convert with focal*baseline/d")
    p.add_argument("--pooled", action="store_true", help="add a row pooled over all pixels")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=float, default=1.0, help="image size relative to 1242x375")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("chart", help="SVG line chart of trace CSVs")
    p.add_argument("traces", nargs="+", type=Path)
    p.add_argument("--labels", default="", help="comma-separated legend labels")
    p.add_argument("--title", default="")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_chart)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"egospeed: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"egospeed: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
