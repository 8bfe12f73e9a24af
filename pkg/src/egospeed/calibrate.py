"""Global scale factor fitting and speed RMSE."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import EstimatorConfig, SpeedSeries
from .errors import ConfigError, DegenerateFit, NoOverlap
from .pipeline import FrameSource, run_recording


class FitMethod(str, enum.Enum):
    LEAST_SQUARES = "lsq"
    MEDIAN_RATIO = "median"

    @classmethod
    def parse(cls, text) -> FitMethod:
        if isinstance(text, FitMethod):
            return text
        key = str(text).strip().lower()
        aliases = {"least_squares": cls.LEAST_SQUARES, "median_ratio": cls.MEDIAN_RATIO}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown fit method {text!r}") from None


@dataclass(frozen=True)
class ScaleFit:
    k: float
    method: FitMethod
    n_samples: int


def _values(s) -> np.ndarray:
    if isinstance(s, SpeedSeries):
        return s.values
    return np.asarray(s, dtype=np.float64).reshape(-1)


def _pooled(preds, gts) -> tuple[np.ndarray, np.ndarray]:
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} prediction series for {len(gts)} ground-truth series")
    p_all, g_all = [], []
    for p, g in zip(preds, gts):
        p, g = _values(p), _values(g)
        n = min(len(p), len(g))
        if len(p) != len(g) and len(g) != len(p) + 1:
            raise ValueError(f"series lengths {len(p)} and {len(g)} are not aligned")
        p, g = p[:n], g[:n]
        keep = np.isfinite(p) & np.isfinite(g)
        p_all.append(p[keep])
        g_all.append(g[keep])
    if not p_all:
        return np.empty(0), np.empty(0)
    return np.concatenate(p_all), np.concatenate(g_all)


def fit_scale(pred, gt, method: FitMethod | str = FitMethod.LEAST_SQUARES) -> ScaleFit:
    """Fit ``k`` so that ``k * pred`` approximates ``gt``.

    Least squares uses the closed form ``sum(p * g) / sum(p**2)``; the median
    variant takes ``median(g / p)`` over ``p > 0``. Missing (NaN) entries are
    ignored.
    """
    method = FitMethod.parse(method)
    p, g = _pooled(_as_list(pred), _as_list(gt))
    if method is FitMethod.LEAST_SQUARES:
        denom = float(np.dot(p, p))
        if p.size == 0 or denom == 0.0:
            raise DegenerateFit("no non-zero predictions to fit a scale factor")
        return ScaleFit(float(np.dot(p, g)) / denom, method, int(p.size))
    pos = p > 0
    if not pos.any():
        raise DegenerateFit("no positive predictions to fit a scale factor")
    return ScaleFit(float(np.median(g[pos] / p[pos])), method, int(pos.sum()))


def fit_scale_pooled(preds: Iterable, gts: Iterable, method: FitMethod | str = FitMethod.LEAST_SQUARES) -> ScaleFit:
    """One k for several recordings at once."""
    p, g = _pooled(preds, gts)
    return fit_scale(p, g, method)


def apply_scale(s: SpeedSeries, k: float) -> SpeedSeries:
    if not k > 0:
        raise ConfigError(f"scale factor must be > 0, got {k}")
    return s.with_values(s.values * k)


def rmse(preds: Sequence, gts: Sequence) -> float:
    """Pooled RMSE over several recordings.

    Accepts single series too. Pairs where either side is missing are
    dropped; a ground-truth series one frame longer than its prediction is
    truncated to match.
    """
    p, g = _pooled(_as_list(preds), _as_list(gts))
    if p.size == 0:
        raise NoOverlap("no overlapping non-missing samples")
    return math.sqrt(float(np.mean((p - g) ** 2)))


def _as_list(x) -> list:
    if isinstance(x, SpeedSeries) or (isinstance(x, np.ndarray) and x.ndim == 1):
        return [x]
    if isinstance(x, (list, tuple)) and x and np.isscalar(x[0]):
        return [x]
    return list(x)


def _rmse_or_nan(pred, gt) -> float:
    try:
        return rmse(pred, gt)
    except NoOverlap:
        return math.nan


@dataclass(frozen=True)
class EvaluationRow:
    label: str
    config: EstimatorConfig
    fit: ScaleFit
    rmse_pooled: float
    rmse_per_recording: dict = field(default_factory=dict)

    @property
    def k(self) -> float:
        return self.fit.k


def evaluate_series(
    series: dict,
    ground_truth: dict,
    cfg: EstimatorConfig,
    method: FitMethod | str = FitMethod.LEAST_SQUARES,
    label: str = "",
    fit_ids: Optional[Sequence[str]] = None,
) -> EvaluationRow:
    """Fit one k over ``fit_ids`` (default: all) and report RMSE on every recording."""
    ids = sorted(series)
    if not ids:
        raise NoOverlap("no recordings to evaluate")
    fit_on = sorted(fit_ids) if fit_ids else ids
    unknown = set(fit_on) - set(ids)
    if unknown:
        raise ConfigError(f"fit ids not evaluated: {sorted(unknown)}")
    fit = fit_scale_pooled([series[i] for i in fit_on], [ground_truth[i] for i in fit_on], method)
    scaled = {i: apply_scale(series[i], fit.k) for i in ids}
    per = {i: _rmse_or_nan(scaled[i], ground_truth[i]) for i in ids}
    pooled = rmse([scaled[i] for i in ids], [ground_truth[i] for i in ids])
    return EvaluationRow(label or cfg.label(), cfg, fit, pooled, per)


def evaluate_configuration(
    recordings: Sequence[FrameSource],
    cfg: EstimatorConfig,
    method: FitMethod | str = FitMethod.LEAST_SQUARES,
    label: str = "",
    fit_ids: Optional[Sequence[str]] = None,
    threads: Optional[int] = None,
) -> EvaluationRow:
    """Run ``cfg`` over all recordings, fit a single k and report pooled RMSE."""
    recordings = list(recordings)
    if not recordings:
        raise NoOverlap("no recordings to evaluate")
    series, gts = {}, {}
    for rec in recordings:
        if rec.ground_truth is None:
            raise ConfigError(f"{rec.id}: ground truth is required for evaluation")
        series[rec.id] = run_recording(rec, cfg, threads).series
        gts[rec.id] = np.asarray(rec.ground_truth, dtype=np.float64)
    return evaluate_series(series, gts, cfg, method, label, fit_ids)
