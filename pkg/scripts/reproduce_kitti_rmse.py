#!/usr/bin/env python3
"""Full-frame, turning-compensated RMSE over the 15 KITTI raw drives.

Needs precomputed PWC-Net flow and MonoDepth disparity for every drive plus
the oxts ground truth, laid out as described in the README. Not part of CI.
"""

from __future__ import annotations

import argparse
import sys

from egospeed.calibrate import evaluate_configuration
from egospeed.core import EstimatorConfig
from egospeed.ingest import KITTI_DRIVES, load_manifest, load_recording

REFERENCE_RMSE = 0.977
TOLERANCE = 0.15


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--manifest", required=True, help="INI manifest listing the 15 drives")
    ap.add_argument("--window", type=int, default=25)
    ap.add_argument("--fit", default="lsq", choices=["lsq", "median"])
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args(argv)

    manifest = load_manifest(args.manifest)
    missing = sorted(set(KITTI_DRIVES) - set(manifest.ids))
    if missing:
        print(f"manifest lacks drives: {', '.join(missing)}", file=sys.stderr)
        return 2
    recs = [load_recording(manifest, i) for i in KITTI_DRIVES]
    cfg = EstimatorConfig(crop=None, turning_compensation=True, smoothing_window=args.window)
    row = evaluate_configuration(recs, cfg, args.fit, label="full+tc", threads=args.threads)
    for rec_id, value in sorted(row.rmse_per_recording.items()):
        print(f"{rec_id:28s} {value:.3f}")
    delta = row.rmse_pooled - REFERENCE_RMSE
    ok = abs(delta) <= TOLERANCE
    print(f"k={row.k:.6f} rmse={row.rmse_pooled:.3f} m/s (reference {REFERENCE_RMSE}, delta {delta:+.3f})")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
