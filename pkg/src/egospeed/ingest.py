"""Readers and writers for flow, disparity and oxts files, and the dataset manifest.

Supported layouts:

* ``.flo``: float32 magic 202021.25, int32 width, int32 height, then
  interleaved little-endian float32 ``(u, v)`` pairs, row-major.
* KITTI flow PNG: 16-bit RGB, ``u = (R - 2**15) / 64``, ``v = (G - 2**15) / 64``,
  ``valid = B > 0``.
* PFM (``Pf``): text header, negative scale means little-endian, rows stored
  bottom to top.
* PNG16: single channel, ``value / 256``; zero marks a missing sample.
* FLOAT_RAW: uint32 width, uint32 height (little-endian), then float32 samples.
* oxts: one whitespace-separated text line per frame, at least 30 fields.
"""

from __future__ import annotations

import configparser
import enum
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from .core import CropRect, DisparityMap, FlowField, Recording
from .errors import (
    BadHeader,
    BadMagic,
    BadPng,
    ConfigError,
    CountMismatch,
    MissingFrameFile,
    NonNumericField,
    TooFewFields,
    TruncatedFile,
    UnknownId,
    WrongChannelCount,
)

FLO_MAGIC = 202021.25
FLO_INVALID = 1e10
FLO_INVALID_THRESHOLD = 1e9
OXTS_MIN_FIELDS = 30
OXTS_VN, OXTS_VE, OXTS_VF = 6, 7, 8


class FlowFormat(str, enum.Enum):
    FLO = "flo"
    KITTI_PNG = "kitti_png"


class DispFormat(str, enum.Enum):
    PFM = "pfm"
    PNG16 = "png16"
    FLOAT_RAW = "float_raw"


class SpeedSource(str, enum.Enum):
    VF = "vf"
    HORIZONTAL_NORM = "horizontal_norm"


FLOW_SUFFIXES = {FlowFormat.FLO: ".flo", FlowFormat.KITTI_PNG: ".png"}
DISP_SUFFIXES = {DispFormat.PFM: ".pfm", DispFormat.PNG16: ".png", DispFormat.FLOAT_RAW: ".raw"}


def _parse_enum(cls, value):
    if isinstance(value, cls):
        return value
    try:
        return cls(str(value).strip().lower())
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise ConfigError(f"unknown {cls.__name__} {value!r} (allowed: {allowed})") from None


# ---------------------------------------------------------------------------
# .flo


def read_flo(path) -> FlowField:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise TruncatedFile(f"{path}: {len(data)} bytes is shorter than the .flo header")
    magic = np.frombuffer(data, "<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise BadMagic(f"{path}: bad .flo magic {float(magic)!r}")
    width, height = (int(x) for x in np.frombuffer(data, "<i4", count=2, offset=4))
    if width < 1 or height < 1:
        raise BadHeader(f"{path}: invalid .flo size {width}x{height}")
    expected = 12 + 8 * width * height
    if len(data) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(data)}")
    flow = np.frombuffer(data, "<f4", count=2 * width * height, offset=12)
    flow = flow.reshape(height, width, 2).astype(np.float64)
    u, v = flow[..., 0], flow[..., 1]
    with np.errstate(invalid="ignore"):
        valid = (np.abs(u) <= FLO_INVALID_THRESHOLD) & (np.abs(v) <= FLO_INVALID_THRESHOLD)
    return FlowField(u, v, valid)


def write_flo(f: FlowField, path) -> None:
    u = np.where(f.valid, f.u, FLO_INVALID)
    v = np.where(f.valid, f.v, FLO_INVALID)
    header = np.array([FLO_MAGIC], "<f4").tobytes() + np.array([f.width, f.height], "<i4").tobytes()
    body = np.stack([u, v], axis=-1).astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


# ---------------------------------------------------------------------------
# KITTI 16-bit PNG flow


def _imread16(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise BadPng(f"{path}: not a readable PNG")
    if img.dtype != np.uint16:
        raise BadPng(f"{path}: expected 16-bit samples, found {img.dtype}")
    return img


def read_kitti_flow_png(path) -> FlowField:
    img = _imread16(path)
    if img.ndim != 3 or img.shape[2] != 3:
        channels = 1 if img.ndim == 2 else img.shape[2]
        raise WrongChannelCount(f"{path}: expected 3 channels, found {channels}")
    # cv2 returns BGR: the mask sits in channel 0, u in channel 2.
    raw = img.astype(np.float64)
    u = (raw[..., 2] - 32768.0) / 64.0
    v = (raw[..., 1] - 32768.0) / 64.0
    return FlowField(u, v, img[..., 0] > 0)


def write_kitti_flow_png(f: FlowField, path) -> None:
    """Quantise to the 1/64 px grid; values outside +-512 px are clipped."""
    def encode(c):
        return np.clip(np.round(c * 64.0 + 32768.0), 0, 65535).astype(np.uint16)

    u = encode(np.where(f.valid, f.u, 0.0))
    v = encode(np.where(f.valid, f.v, 0.0))
    bgr = np.stack([f.valid.astype(np.uint16), v, u], axis=-1)
    if not cv2.imwrite(str(path), bgr):
        raise OSError(f"{path}: could not write PNG")


def read_flow(path, fmt: FlowFormat | str = FlowFormat.FLO) -> FlowField:
    fmt = _parse_enum(FlowFormat, fmt)
    if fmt is FlowFormat.FLO:
        return read_flo(path)
    return read_kitti_flow_png(path)


# ---------------------------------------------------------------------------
# Disparity / depth

_PFM_TOKEN = re.compile(rb"\S+")


def read_pfm(path) -> np.ndarray:
    """Decode a PFM file to a float64 array in top-to-bottom row order.

    Colour (``PF``) files return their first channel.
    """
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = _PFM_TOKEN.search(data, pos, 256)
        if m is None:
            raise BadHeader(f"{path}: incomplete PFM header")
        tokens.append(m.group())
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    kind = tokens[0]
    if kind not in (b"Pf", b"PF"):
        raise BadHeader(f"{path}: not a PFM file (magic {kind!r})")
    try:
        width, height = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError:
        raise BadHeader(f"{path}: malformed PFM header") from None
    if width < 1 or height < 1 or scale == 0 or not math.isfinite(scale):
        raise BadHeader(f"{path}: invalid PFM header values")
    channels = 3 if kind == b"PF" else 1
    count = width * height * channels
    if len(data) - pos < 4 * count:
        raise TruncatedFile(f"{path}: PFM raster needs {4 * count} bytes, found {len(data) - pos}")
    dtype = "<f4" if scale < 0 else ">f4"
    raster = np.frombuffer(data, dtype, count=count, offset=pos).astype(np.float64)
    raster = raster.reshape(height, width, channels)[..., 0]
    return np.flipud(raster)


def write_pfm(values: np.ndarray, path) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("PFM writer expects a 2-D array")
    height, width = values.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.flipud(values).astype("<f4").tobytes())


def read_png16(path) -> tuple[np.ndarray, np.ndarray]:
    img = _imread16(path)
    if img.ndim != 2:
        raise WrongChannelCount(f"{path}: expected 1 channel, found {img.shape[2]}")
    return img.astype(np.float64) / 256.0, img > 0


def write_png16(values: np.ndarray, path, valid: Optional[np.ndarray] = None) -> None:
    values = np.asarray(values, dtype=np.float64)
    img = np.clip(np.round(values * 256.0), 0, 65535).astype(np.uint16)
    if valid is not None:
        img[~np.asarray(valid, bool)] = 0
    if not cv2.imwrite(str(path), img):
        raise OSError(f"{path}: could not write PNG")


def read_float_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise BadHeader(f"{path}: missing FLOAT_RAW header")
    width, height = (int(x) for x in np.frombuffer(data, "<u4", count=2))
    if width < 1 or height < 1:
        raise BadHeader(f"{path}: invalid size {width}x{height}")
    if len(data) < 8 + 4 * width * height:
        raise TruncatedFile(f"{path}: expected {8 + 4 * width * height} bytes, found {len(data)}")
    raw = np.frombuffer(data, "<f4", count=width * height, offset=8)
    return raw.reshape(height, width).astype(np.float64)


def write_float_raw(values: np.ndarray, path) -> None:
    values = np.asarray(values)
    height, width = values.shape
    Path(path).write_bytes(
        np.array([width, height], "<u4").tobytes() + values.astype("<f4").tobytes()
    )


def read_disparity(path, fmt: DispFormat | str = DispFormat.PFM, disp_scale: float = 1.0) -> DisparityMap:
    """Decode a disparity (or depth) map and multiply it by ``disp_scale``.

    Negative PFM/raw samples are kept but flagged invalid.
    """
    fmt = _parse_enum(DispFormat, fmt)
    if not disp_scale > 0:
        raise ConfigError(f"disp_scale must be > 0, got {disp_scale}")
    if fmt is DispFormat.PNG16:
        d, valid = read_png16(path)
        return DisparityMap(d * disp_scale, valid)
    d = read_pfm(path) if fmt is DispFormat.PFM else read_float_raw(path)
    return DisparityMap(d * disp_scale)


def write_disparity(dmap: DisparityMap, path, fmt: DispFormat | str = DispFormat.PFM) -> None:
    fmt = _parse_enum(DispFormat, fmt)
    if fmt is DispFormat.PNG16:
        write_png16(dmap.d, path, dmap.valid)
    elif fmt is DispFormat.PFM:
        write_pfm(np.where(dmap.valid, dmap.d, -1.0), path)
    else:
        write_float_raw(np.where(dmap.valid, dmap.d, -1.0), path)


# ---------------------------------------------------------------------------
# oxts


def parse_oxts_line(text: str, source: str = "<oxts>") -> list[float]:
    tokens = text.split()
    if len(tokens) < OXTS_MIN_FIELDS:
        raise TooFewFields(f"{source}: {len(tokens)} fields, need at least {OXTS_MIN_FIELDS}")
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise NonNumericField(f"{source}: {exc}") from None


def _oxts_files(directory: Path) -> list[Path]:
    # KITTI raw keeps the per-frame files under oxts/data/
    if (directory / "data").is_dir():
        directory = directory / "data"
    if not directory.is_dir():
        raise MissingFrameFile(f"{directory}: oxts directory not found")
    return sorted(p for p in directory.iterdir() if p.suffix == ".txt")


def read_oxts_speed(directory, source: SpeedSource | str = SpeedSource.VF) -> np.ndarray:
    """Forward speed (m/s) per frame, in filename order.

    ``source="horizontal_norm"`` returns ``hypot(vn, ve)`` instead of ``vf``.
    """
    source = _parse_enum(SpeedSource, source)
    speeds = []
    for path in _oxts_files(Path(directory)):
        vals = parse_oxts_line(path.read_text(), str(path))
        if source is SpeedSource.VF:
            speeds.append(vals[OXTS_VF])
        else:
            speeds.append(math.hypot(vals[OXTS_VN], vals[OXTS_VE]))
    return np.asarray(speeds, dtype=np.float64)


def format_oxts_line(values) -> str:
    return " ".join(repr(float(x)) for x in values)


# ---------------------------------------------------------------------------
# Manifest

MANIFEST_SECTION = "dataset"
CROPS_SECTION = "crops"

# Recording ids from the paper's evaluation set.
KITTI_DRIVES = tuple(
    f"2011_09_26_drive_{n:04d}"
    for n in (1, 2, 5, 9, 14, 19, 27, 48, 56, 59, 84, 91, 95, 96, 104)
)


@dataclass(frozen=True)
class RecordingEntry:
    id: str
    flow_dir: Path
    disp_dir: Path
    oxts_dir: Optional[Path]
    flow_format: FlowFormat
    disp_format: DispFormat
    disp_scale: float


@dataclass(frozen=True)
class DatasetManifest:
    """Parsed manifest.

    The file is INI-style: an optional ``[dataset]`` section with defaults
    (``root``, ``label``, ``flow_format``, ``disp_format``, ``disp_scale``,
    ``speed_source``), an optional ``[crops]`` section mapping names to
    ``x,y,w,h``, and one section per recording with ``flow_dir``,
    ``disp_dir`` and optionally ``oxts_dir`` plus per-recording format
    overrides. Relative directories resolve against ``root``, which in turn
    resolves against the manifest's own directory.
    """

    root: Path
    recordings: tuple[RecordingEntry, ...]
    label: str = ""
    speed_source: SpeedSource = SpeedSource.VF
    crops: dict = field(default_factory=dict)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.recordings]

    def entry(self, rec_id: str) -> RecordingEntry:
        for r in self.recordings:
            if r.id == rec_id:
                return r
        raise UnknownId(f"recording {rec_id!r} not in manifest")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if not parser.read(path):
        raise ConfigError(f"{path}: manifest not found or unreadable")
    defaults = parser[MANIFEST_SECTION] if parser.has_section(MANIFEST_SECTION) else {}
    root = Path(defaults.get("root", "."))
    if not root.is_absolute():
        root = path.parent / root
    if not root.is_dir():
        raise ConfigError(f"{path}: root {root} is not a directory")

    crops = {}
    if parser.has_section(CROPS_SECTION):
        for name, value in parser[CROPS_SECTION].items():
            crops[name] = None if value.strip().lower() == "full" else CropRect.parse(value)

    def resolve(d: str) -> Path:
        p = Path(d)
        return p if p.is_absolute() else root / p

    entries = []
    for name in parser.sections():
        if name in (MANIFEST_SECTION, CROPS_SECTION):
            continue
        sec = parser[name]
        try:
            flow_dir = resolve(sec["flow_dir"])
            disp_dir = resolve(sec["disp_dir"])
        except KeyError as exc:
            raise ConfigError(f"{path}: [{name}] is missing {exc.args[0]}") from None
        oxts_dir = resolve(sec["oxts_dir"]) if "oxts_dir" in sec else None
        for d in (flow_dir, disp_dir, oxts_dir):
            if d is not None and not d.is_dir():
                raise ConfigError(f"{path}: [{name}] directory {d} does not exist")
        try:
            disp_scale = float(sec.get("disp_scale", defaults.get("disp_scale", "1.0")))
        except ValueError:
            raise ConfigError(f"{path}: [{name}] disp_scale is not a number") from None
        if not disp_scale > 0:
            raise ConfigError(f"{path}: [{name}] disp_scale must be > 0")
        entries.append(
            RecordingEntry(
                id=name,
                flow_dir=flow_dir,
                disp_dir=disp_dir,
                oxts_dir=oxts_dir,
                flow_format=_parse_enum(FlowFormat, sec.get("flow_format", defaults.get("flow_format", "flo"))),
                disp_format=_parse_enum(DispFormat, sec.get("disp_format", defaults.get("disp_format", "pfm"))),
                disp_scale=disp_scale,
            )
        )
    return DatasetManifest(
        root=root,
        recordings=tuple(sorted(entries, key=lambda e: e.id)),
        label=defaults.get("label", ""),
        speed_source=_parse_enum(SpeedSource, defaults.get("speed_source", "vf")),
        crops=crops,
    )


def write_manifest(path, recordings: list[dict], **defaults) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser[MANIFEST_SECTION] = {k: str(v) for k, v in defaults.items()}
    for rec in recordings:
        rec = dict(rec)
        parser[rec.pop("id")] = {k: str(v) for k, v in rec.items()}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def _listing(directory: Path, suffix: str) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == suffix)


def load_recording(manifest: DatasetManifest, rec_id: str) -> Recording:
    entry = manifest.entry(rec_id)
    flows = _listing(entry.flow_dir, FLOW_SUFFIXES[entry.flow_format])
    disps = _listing(entry.disp_dir, DISP_SUFFIXES[entry.disp_format])
    gt = None
    if entry.oxts_dir is not None:
        gt = read_oxts_speed(entry.oxts_dir, manifest.speed_source)
        if len(gt) != len(disps):
            raise CountMismatch(
                f"{rec_id}: {len(gt)} oxts frames for {len(disps)} disparity files"
            )
    if len(flows) != len(disps) - 1:
        raise CountMismatch(
            f"{rec_id}: {len(flows)} flow files for {len(disps)} disparity files "
            f"(expected {len(disps) - 1})"
        )
    return Recording(
        id=rec_id,
        flow_paths=tuple(os.fspath(p) for p in flows),
        disp_paths=tuple(os.fspath(p) for p in disps),
        ground_truth=None if gt is None else tuple(gt),
        flow_format=entry.flow_format.value,
        disp_format=entry.disp_format.value,
        disp_scale=entry.disp_scale,
    )
