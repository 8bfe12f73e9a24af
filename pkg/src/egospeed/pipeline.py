"""Per-frame speed estimates, temporal smoothing and per-recording series."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, TypeVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import (
    DisparityMap,
    EstimatorConfig,
    FlowField,
    Mode,
    ScalarField,
    SpeedSeries,
    apply_crop,
    flow_magnitude,
)
from .errors import (
    ConfigError,
    EmptySequence,
    EmptySeries,
    ExtentMismatch,
    TcRequiresFullFrame,
)

THREADS_ENV = "EGOSPEED_THREADS"


@dataclass(frozen=True)
class FrameEstimate:
    frame_index: int
    raw_value: float
    valid_pixel_count: int
    tc_triggered: bool = False

    @property
    def missing(self) -> bool:
        return math.isnan(self.raw_value)


@dataclass(frozen=True, eq=False)
class FrameChannels:
    """Scalar inputs of one frame after the flow has been reduced.

    ``of`` holds flow magnitude (or ``|u|`` in horizontal mode), ``u`` the
    signed horizontal flow used by turning compensation.
    """

    of: ScalarField
    disp: DisparityMap
    u: Optional[ScalarField] = None


def frame_channels(f: FlowField, d: DisparityMap, mode: Mode, with_u: bool = False) -> FrameChannels:
    if f.shape != d.shape:
        raise ExtentMismatch(f"flow extent {f.shape[::-1]} != disparity extent {d.shape[::-1]}")
    if mode is Mode.HORIZ_OF_OVER_DISP:
        of = ScalarField(np.abs(np.where(f.valid, f.u, 0.0)), f.valid)
    else:
        of = flow_magnitude(f)
    u = ScalarField(np.where(f.valid, f.u, 0.0), f.valid) if with_u else None
    return FrameChannels(of, d, u)


def _supports(ch: FrameChannels, cfg: EstimatorConfig) -> tuple[np.ndarray, np.ndarray]:
    th = cfg.thresholds
    of_ok = ch.of.valid & (ch.of.values > th.of_min)
    disp_ok = ch.disp.valid & (ch.disp.d > th.disp_min)
    if cfg.joint_threshold:
        both = of_ok & disp_ok
        return both, both
    return of_ok, disp_ok


def _mean(values: np.ndarray, mask: np.ndarray) -> float:
    n = int(np.count_nonzero(mask))
    return float(values[mask].sum() / n) if n else math.nan


def _estimate_channels(ch: FrameChannels, cfg: EstimatorConfig, index: int, crop) -> FrameEstimate:
    ch = FrameChannels(apply_crop(ch.of, crop), apply_crop(ch.disp, crop))
    of_ok, disp_ok = _supports(ch, cfg)
    count = int(np.count_nonzero(of_ok))
    value = _mean(ch.of.values, of_ok)
    if cfg.mode.uses_disparity:
        value /= _mean(ch.disp.d, disp_ok)
    return FrameEstimate(index, value, count)


def _estimate_tc(ch: FrameChannels, cfg: EstimatorConfig, index: int) -> FrameEstimate:
    of_ok, disp_ok = _supports(ch, cfg)
    half = ch.of.width // 2
    m_left = _mean(ch.u.values[:, :half], of_ok[:, :half])
    m_right = _mean(ch.u.values[:, half:], of_ok[:, half:])
    # NaN compares false, so an empty half falls through to the base estimate
    if m_left * m_right > 0:
        value = abs(m_left - m_right)
        if cfg.mode.uses_disparity:
            value /= _mean(ch.disp.d, disp_ok)
        return FrameEstimate(index, value, int(np.count_nonzero(of_ok)), True)
    return _estimate_channels(ch, cfg, index, None)


def frame_speed(f: FlowField, d: DisparityMap, cfg: EstimatorConfig, frame_index: int = 0) -> FrameEstimate:
    """Mean flow over mean disparity inside ``cfg.crop``.

    A frame without valid pixels comes back with ``raw_value = nan``.
    """
    ch = frame_channels(f, d, cfg.mode)
    return _estimate_channels(ch, cfg, frame_index, cfg.crop)


def frame_speed_tc(f: FlowField, d: DisparityMap, cfg: EstimatorConfig, frame_index: int = 0) -> FrameEstimate:
    """Turning-compensated estimate on the full frame.

    When the mean horizontal flows of the left and right halves share a
    strict sign, the speed is ``|mean_left - mean_right|`` over the mean
    disparity; otherwise this is ``frame_speed``. Columns ``[0, w // 2)``
    form the left half.
    """
    if cfg.crop is not None:
        raise TcRequiresFullFrame("turning compensation needs the full frame")
    ch = frame_channels(f, d, cfg.mode, with_u=True)
    return _estimate_tc(ch, cfg, frame_index)


# ---------------------------------------------------------------------------
# Smoothing


def _box_filter(values: np.ndarray, valid: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Centred equal-weight mean along axis 0 over valid samples only.

    Windows shrink at the ends; the divisor is the number of valid samples
    actually covered.
    """
    half = window // 2
    data = np.where(valid, values, 0.0)
    weight = valid.astype(np.float64)
    pad = [(half, half)] + [(0, 0)] * (values.ndim - 1)
    sums = sliding_window_view(np.pad(data, pad), window, axis=0).sum(axis=-1)
    counts = sliding_window_view(np.pad(weight, pad), window, axis=0).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = sums / counts
    return out, counts


def _check_window(window: int) -> None:
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"smoothing window must be odd and >= 1, got {window}")


def smooth_series(s: SpeedSeries, window: int) -> SpeedSeries:
    """Moving average with equal weights; missing frames stay missing."""
    _check_window(window)
    if len(s) == 0:
        raise EmptySeries("cannot smooth an empty series")
    if window == 1:
        return s
    valid = ~s.missing
    out, _ = _box_filter(s.values, valid, window)
    return s.with_values(np.where(valid, out, np.nan))


T = TypeVar("T", ScalarField, DisparityMap, FlowField)


def smooth_fields_pixelwise(frames: Sequence[T], window: int) -> list[T]:
    """Box-filter every pixel's time series independently.

    Every float array of the field type is smoothed as its own channel
    (``u`` and ``v`` separately for a ``FlowField``). A pixel keeps its own
    validity at each time step.
    """
    _check_window(window)
    frames = list(frames)
    if not frames:
        raise EmptySequence("no frames to smooth")
    kind = type(frames[0])
    shape = frames[0].shape
    for fr in frames:
        if type(fr) is not kind or fr.shape != shape:
            raise ExtentMismatch("all frames must share type and extent")
    if window == 1 or len(frames) == 1:
        return frames
    valid = np.stack([fr.valid for fr in frames])
    names = [n for n in kind.__dataclass_fields__ if n != "valid"]
    smoothed = {}
    for name in names:
        stack = np.stack([getattr(fr, name) for fr in frames])
        out, _ = _box_filter(stack, valid, window)
        smoothed[name] = np.where(valid, out, 0.0)
    return [kind(**{n: smoothed[n][t] for n in names}, valid=valid[t]) for t in range(len(frames))]


# ---------------------------------------------------------------------------
# Recordings


class FrameSource(Protocol):
    """Anything that can hand out per-frame flow and disparity."""

    id: str

    @property
    def frame_count(self) -> int: ...

    def load_flow(self, i: int) -> FlowField: ...

    def load_disparity(self, i: int) -> DisparityMap: ...


@dataclass(frozen=True, eq=False)
class RecordingEstimate:
    frames: tuple[FrameEstimate, ...]
    raw: SpeedSeries
    series: SpeedSeries

    @property
    def tc_triggered(self) -> np.ndarray:
        return np.array([f.tc_triggered for f in self.frames], dtype=bool)


def thread_count(requested: Optional[int] = None) -> int:
    if requested is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        requested = int(env) if env.isdigit() else (os.cpu_count() or 1)
    return max(1, int(requested))


def _map_ordered(fn, n: int, threads: int) -> list:
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=min(threads, n)) as pool:
        return list(pool.map(fn, range(n)))


def run_recording(rec: FrameSource, cfg: EstimatorConfig, threads: Optional[int] = None) -> RecordingEstimate:
    """Estimate every frame pair of ``rec`` and smooth the result.

    Flow ``t -> t+1`` together with disparity ``t`` yields the estimate at
    index ``t``; the output has ``frame_count - 1`` entries.
    """
    n = rec.frame_count - 1
    if n < 1:
        raise EmptySequence(f"{rec.id}: need at least two frames")
    threads = thread_count(threads)
    tc = cfg.turning_compensation
    if tc and cfg.crop is not None:
        raise TcRequiresFullFrame("turning compensation needs the full frame")

    def channels(i: int) -> FrameChannels:
        return frame_channels(rec.load_flow(i), rec.load_disparity(i), cfg.mode, with_u=tc)

    def estimate(i: int, ch: FrameChannels) -> FrameEstimate:
        if tc:
            return _estimate_tc(ch, cfg, i)
        return _estimate_channels(ch, cfg, i, cfg.crop)

    if cfg.pixel_level_smoothing:
        # crop first: smoothing is per pixel, so it commutes with cropping
        crop = cfg.crop
        chans = _map_ordered(channels, n, threads)
        w = cfg.smoothing_window
        of = smooth_fields_pixelwise([apply_crop(c.of, crop) for c in chans], w)
        disp = smooth_fields_pixelwise([apply_crop(c.disp, crop) for c in chans], w)
        u = smooth_fields_pixelwise([c.u for c in chans], w) if tc else [None] * n
        chans = [FrameChannels(of[i], disp[i], u[i]) for i in range(n)]
        frames = _map_ordered(
            lambda i: _estimate_tc(chans[i], cfg, i) if tc else _estimate_channels(chans[i], cfg, i, None),
            n,
            threads,
        )
        series_window = cfg.smoothing_window if cfg.series_smoothing else 1
    else:
        frames = _map_ordered(lambda i: estimate(i, channels(i)), n, threads)
        series_window = cfg.smoothing_window

    raw = SpeedSeries([f.raw_value for f in frames], 0, rec.id)
    return RecordingEstimate(tuple(frames), raw, smooth_series(raw, series_window))


def estimate_recording(rec: FrameSource, cfg: EstimatorConfig, threads: Optional[int] = None) -> SpeedSeries:
    """Smoothed, pre-scale speed series of a recording."""
    return run_recording(rec, cfg, threads).series
