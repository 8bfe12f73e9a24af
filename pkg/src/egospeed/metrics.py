"""Flow (AEPE, Fl-all) and depth (Eigen-style) error metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import DisparityMap, FlowField, ScalarField
from .errors import ExtentMismatch, NoValidPixels

FL_ABS_THRESHOLD = 3.0
FL_REL_THRESHOLD = 0.05


@dataclass(frozen=True)
class FlowMetrics:
    aepe: float
    fl_all: float
    n_pixels: int = 0


@dataclass(frozen=True)
class DepthMetrics:
    rmse: float
    rmse_log: float
    abs_rel: float
    sq_rel: float
    log10: float
    scale_inv: float
    n_pixels: int = 0


FLOW_METRIC_NAMES = ("aepe", "fl_all")
DEPTH_METRIC_NAMES = ("rmse", "rmse_log", "abs_rel", "sq_rel", "log10", "scale_inv")


def _endpoint_errors(pred: FlowField, gt: FlowField) -> tuple[np.ndarray, np.ndarray]:
    if pred.shape != gt.shape:
        raise ExtentMismatch(f"prediction {pred.shape[::-1]} vs ground truth {gt.shape[::-1]}")
    mask = gt.valid
    if not mask.any():
        raise NoValidPixels("ground truth has no valid pixels")
    # invalid predictions at ground-truth pixels count as zero flow
    pu = np.where(pred.valid, pred.u, 0.0)[mask]
    pv = np.where(pred.valid, pred.v, 0.0)[mask]
    gu, gv = gt.u[mask], gt.v[mask]
    return np.hypot(pu - gu, pv - gv), np.hypot(gu, gv)


def flow_metrics(pred: FlowField, gt: FlowField) -> FlowMetrics:
    """AEPE and Fl-all over ground-truth-valid pixels.

    A pixel is an outlier when its endpoint error is at least 3 px and at
    least 5 % of the ground-truth magnitude.
    """
    epe, mag = _endpoint_errors(pred, gt)
    outliers = (epe >= FL_ABS_THRESHOLD) & (epe >= FL_REL_THRESHOLD * mag)
    return FlowMetrics(float(epe.mean()), float(outliers.mean()), int(epe.size))


def _as_depth(x) -> ScalarField:
    if isinstance(x, ScalarField):
        return x
    if isinstance(x, DisparityMap):
        return ScalarField(x.d, x.valid)
    return ScalarField(np.asarray(x, dtype=np.float64))


def _depth_pairs(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = _as_depth(pred), _as_depth(gt)
    if pred.shape != gt.shape:
        raise ExtentMismatch(f"prediction {pred.shape[::-1]} vs ground truth {gt.shape[::-1]}")
    mask = pred.valid & gt.valid & (pred.values > 0) & (gt.values > 0)
    if not mask.any():
        raise NoValidPixels("no pixel has positive depth in both maps")
    return pred.values[mask], gt.values[mask]


def _depth_from_samples(p: np.ndarray, g: np.ndarray) -> DepthMetrics:
    diff = p - g
    z = np.log(p) - np.log(g)
    n = z.size
    return DepthMetrics(
        rmse=math.sqrt(float(np.mean(diff**2))),
        rmse_log=math.sqrt(float(np.mean(z**2))),
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        # clamp the rounding residue of a perfect global scale at zero
        scale_inv=max(0.0, float(np.sum(z**2) / n - np.sum(z) ** 2 / n**2)),
        n_pixels=int(n),
    )


def depth_metrics(pred, gt) -> DepthMetrics:
    """Depth errors over pixels where both maps are valid and positive.

    Accepts ``ScalarField``, ``DisparityMap`` or plain arrays holding metric
    depth.
    """
    return _depth_from_samples(*_depth_pairs(pred, gt))


def disp_to_depth(d: DisparityMap, focal: float, baseline: float, disp_min: float = 0.01) -> ScalarField:
    """Depth ``focal * baseline / d``; pixels with ``d <= disp_min`` become invalid."""
    ok = d.valid & (d.d > disp_min)
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = np.where(ok, focal * baseline / np.where(ok, d.d, 1.0), 0.0)
    return ScalarField(depth, ok)


def aggregate(rows: Sequence):
    """Mean over per-image metric rows (benchmark convention)."""
    if not rows:
        raise NoValidPixels("no metric rows to aggregate")
    kind = type(rows[0])
    names = [n for n in asdict(rows[0]) if n != "n_pixels"]
    means = {n: float(np.mean([getattr(r, n) for r in rows])) for n in names}
    return kind(**means, n_pixels=sum(r.n_pixels for r in rows))


def pooled_flow_metrics(pairs: Iterable[tuple[FlowField, FlowField]]) -> FlowMetrics:
    """Metrics over the pixels of all image pairs taken together."""
    epes, mags = zip(*(_endpoint_errors(p, g) for p, g in pairs))
    epe, mag = np.concatenate(epes), np.concatenate(mags)
    outliers = (epe >= FL_ABS_THRESHOLD) & (epe >= FL_REL_THRESHOLD * mag)
    return FlowMetrics(float(epe.mean()), float(outliers.mean()), int(epe.size))


def pooled_depth_metrics(pairs: Iterable) -> DepthMetrics:
    ps, gs = zip(*(_depth_pairs(p, g) for p, g in pairs))
    return _depth_from_samples(np.concatenate(ps), np.concatenate(gs))
