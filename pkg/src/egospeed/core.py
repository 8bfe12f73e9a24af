"""Domain types shared by every stage of the speed estimator.

Arrays are stored row-major as ``(height, width)`` with the origin at the
top-left pixel, so ``field.u[y, x]`` is the horizontal flow at column ``x``,
row ``y``. Validity masks travel alongside the data; non-finite samples are
demoted to invalid when a field is built.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Optional, TypeVar

import numpy as np

from .errors import (
    ConfigError,
    CountMismatch,
    CropOutOfBounds,
    ExtentMismatch,
    TcRequiresFullFrame,
)

__all__ = [
    "CROPS",
    "CROP_B",
    "CROP_G",
    "CROP_R",
    "KITTI_HEIGHT",
    "KITTI_WIDTH",
    "CropRect",
    "DisparityMap",
    "EstimatorConfig",
    "FlowField",
    "Mode",
    "Recording",
    "ScalarField",
    "SpeedSeries",
    "ValidityThresholds",
    "apply_crop",
    "flow_magnitude",
    "resolve_crop",
]

KITTI_WIDTH = 1242
KITTI_HEIGHT = 375


def _frozen_array(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _mask_for(shape: tuple[int, ...], valid) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(valid, dtype=bool)
    if mask.shape != shape:
        raise ExtentMismatch(f"mask shape {mask.shape} does not match data shape {shape}")
    return mask


def _check_2d(name: str, a: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ExtentMismatch(f"{name} must be a non-empty 2-D array, got shape {a.shape}")


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense flow ``(u, v)`` in pixels per frame interval, with a validity mask."""

    u: np.ndarray
    v: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        _check_2d("u", u)
        if v.shape != u.shape:
            raise ExtentMismatch(f"u shape {u.shape} != v shape {v.shape}")
        mask = _mask_for(u.shape, self.valid) & np.isfinite(u) & np.isfinite(v)
        object.__setattr__(self, "u", _frozen_array(u, np.float64))
        object.__setattr__(self, "v", _frozen_array(v, np.float64))
        object.__setattr__(self, "valid", _frozen_array(mask, bool))

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Generic per-pixel scalar with mask (flow magnitude, depth, ...)."""

    values: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        _check_2d("values", values)
        mask = _mask_for(values.shape, self.valid) & np.isfinite(values)
        object.__setattr__(self, "values", _frozen_array(values, np.float64))
        object.__setattr__(self, "valid", _frozen_array(mask, bool))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class DisparityMap:
    """Per-pixel disparity. Negative or non-finite samples are marked invalid."""

    d: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64)
        _check_2d("d", d)
        with np.errstate(invalid="ignore"):
            mask = _mask_for(d.shape, self.valid) & np.isfinite(d) & (d >= 0)
        object.__setattr__(self, "d", _frozen_array(d, np.float64))
        object.__setattr__(self, "valid", _frozen_array(mask, bool))

    @property
    def width(self) -> int:
        return self.d.shape[1]

    @property
    def height(self) -> int:
        return self.d.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.d.shape


@dataclass(frozen=True)
class CropRect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ConfigError(f"crop origin must be non-negative: {self}")
        if self.w < 1 or self.h < 1:
            raise ConfigError(f"crop width and height must be >= 1: {self}")

    def fits(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def within(self, inner: CropRect) -> CropRect:
        """Compose: ``inner`` given relative to this rectangle, in absolute coordinates."""
        return CropRect(self.x + inner.x, self.y + inner.y, inner.w, inner.h)

    @classmethod
    def parse(cls, text: str) -> CropRect:
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) != 4:
            raise ConfigError(f"crop must be 'x,y,w,h', got {text!r}")
        try:
            x, y, w, h = (int(p) for p in parts)
        except ValueError:
            raise ConfigError(f"crop must contain integers, got {text!r}") from None
        return cls(x, y, w, h)

    def __str__(self) -> str:
        return f"{self.x},{self.y},{self.w},{self.h}"


CROP_B = CropRect(720, 180, 200, 120)
CROP_G = CropRect(700, 100, 400, 240)
CROP_R = CropRect(640, 20, 580, 340)

# ``None`` stands for the full frame everywhere a crop is accepted.
CROPS: dict[str, Optional[CropRect]] = {
    "cropB": CROP_B,
    "cropG": CROP_G,
    "cropR": CROP_R,
    "full": None,
}


def resolve_crop(spec: str | CropRect | None, overrides: dict | None = None) -> Optional[CropRect]:
    """Map a crop name, an ``x,y,w,h`` string or a rect to a ``CropRect`` (``None`` = full frame)."""
    if spec is None or isinstance(spec, CropRect):
        return spec
    table = dict(CROPS)
    if overrides:
        table.update(overrides)
    if spec in table:
        return table[spec]
    if "," in spec:
        return CropRect.parse(spec)
    raise ConfigError(f"unknown crop {spec!r}; expected one of {sorted(table)} or 'x,y,w,h'")


F = TypeVar("F", FlowField, ScalarField, DisparityMap)


def apply_crop(fld: F, crop: Optional[CropRect]) -> F:
    """Return the ``crop.w`` x ``crop.h`` sub-field; ``None`` returns the field unchanged."""
    if crop is None:
        return fld
    height, width = fld.shape
    if not crop.fits(width, height):
        raise CropOutOfBounds(f"crop {crop} exceeds field extent {width}x{height}")
    rows = slice(crop.y, crop.y + crop.h)
    cols = slice(crop.x, crop.x + crop.w)
    sliced = {
        f.name: getattr(fld, f.name)[rows, cols] for f in dataclasses.fields(fld)
    }
    return type(fld)(**sliced)


def flow_magnitude(f: FlowField) -> ScalarField:
    mag = np.hypot(np.where(f.valid, f.u, 0.0), np.where(f.valid, f.v, 0.0))
    return ScalarField(mag, f.valid)


@dataclass(frozen=True)
class ValidityThresholds:
    of_min: float = 0.2
    disp_min: float = 0.01

    def __post_init__(self):
        if not (self.of_min >= 0 and self.disp_min >= 0):
            raise ConfigError(f"thresholds must be non-negative: {self}")


class Mode(str, enum.Enum):
    OF_ONLY = "of_only"
    OF_OVER_DISP = "of_over_disp"
    HORIZ_OF_OVER_DISP = "horiz_of_over_disp"

    @classmethod
    def parse(cls, text: str | Mode) -> Mode:
        if isinstance(text, Mode):
            return text
        aliases = {
            "base": cls.OF_OVER_DISP,
            "e1": cls.OF_ONLY,
            "of": cls.OF_ONLY,
            "e2": cls.HORIZ_OF_OVER_DISP,
            "horiz": cls.HORIZ_OF_OVER_DISP,
        }
        key = text.strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown mode {text!r}") from None

    @property
    def uses_disparity(self) -> bool:
        return self is not Mode.OF_ONLY


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings for one estimator variant.

    ``series_smoothing`` can switch off the series-level box filter that
    normally follows pixel-level smoothing; ``joint_threshold`` makes a pixel
    count in either mean only when it passes both thresholds.
    """

    mode: Mode = Mode.OF_OVER_DISP
    crop: Optional[CropRect] = None
    thresholds: ValidityThresholds = field(default_factory=ValidityThresholds)
    smoothing_window: int = 25
    pixel_level_smoothing: bool = False
    turning_compensation: bool = False
    series_smoothing: bool = True
    joint_threshold: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ConfigError(f"smoothing window must be odd and >= 1, got {self.smoothing_window}")
        if self.turning_compensation and self.crop is not None:
            raise TcRequiresFullFrame("turning compensation needs the full frame (crop=None)")

    def label(self) -> str:
        parts = {
            Mode.OF_OVER_DISP: "base",
            Mode.OF_ONLY: "e1",
            Mode.HORIZ_OF_OVER_DISP: "e2",
        }[self.mode]
        tags = [parts]
        if self.pixel_level_smoothing:
            tags.append("e3")
        if self.turning_compensation:
            tags.append("tc")
        return "+".join(tags)


@dataclass(frozen=True, eq=False)
class SpeedSeries:
    """Per-frame speeds; ``NaN`` marks a frame with no estimate."""

    values: np.ndarray
    frame_index_offset: int = 0
    recording_id: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "values", _frozen_array(vals, np.float64))

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def with_values(self, values) -> SpeedSeries:
        return SpeedSeries(values, self.frame_index_offset, self.recording_id)


@dataclass(frozen=True)
class Recording:
    """A frame sequence on disk.

    Flow file ``i`` holds the motion from frame ``i`` to ``i + 1``.
    """

    id: str
    flow_paths: tuple
    disp_paths: tuple
    ground_truth: Optional[tuple] = None
    flow_format: str = "flo"
    disp_format: str = "pfm"
    disp_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "flow_paths", tuple(self.flow_paths))
        object.__setattr__(self, "disp_paths", tuple(self.disp_paths))
        if self.ground_truth is not None:
            object.__setattr__(self, "ground_truth", tuple(float(g) for g in self.ground_truth))
        n = len(self.disp_paths)
        if len(self.flow_paths) != n - 1:
            raise CountMismatch(
                f"{self.id}: {len(self.flow_paths)} flow files for {n} disparity files "
                f"(expected {n - 1})"
            )
        if self.ground_truth is not None and len(self.ground_truth) != n:
            raise CountMismatch(
                f"{self.id}: {len(self.ground_truth)} ground-truth frames for {n} disparity files"
            )

    @property
    def frame_count(self) -> int:
        return len(self.disp_paths)

    def load_flow(self, i: int) -> FlowField:
        from .ingest import read_flow

        return read_flow(self.flow_paths[i], self.flow_format)

    def load_disparity(self, i: int) -> DisparityMap:
        from .ingest import read_disparity

        return read_disparity(self.disp_paths[i], self.disp_format, self.disp_scale)
