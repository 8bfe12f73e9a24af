"""Analytic pinhole ego-motion scenes with exact flow, disparity and speed.

Flow follows the first-order (instantaneous) motion model: forward speed
``vz`` moves a pixel at ``(x, y)`` with depth ``Z`` by
``((x - cx), (y - cy)) * vz * dt / Z`` and a yaw rate ``w`` adds the uniform
horizontal shift ``fx * w * dt``. Disparity is ``fx * baseline / Z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    KITTI_HEIGHT,
    KITTI_WIDTH,
    CropRect,
    DisparityMap,
    FlowField,
    Recording,
    apply_crop,
    ScalarField,
)
from .errors import ConfigError
from .ingest import format_oxts_line, write_flo, write_manifest, write_pfm

DEPTH_FLOOR = 2.0
OXTS_FIELDS = 30


@dataclass(frozen=True)
class CameraModel:
    fx: float = 721.5377
    fy: float = 721.5377
    cx: float = 609.5593
    cy: float = 172.854
    baseline: float = 0.54
    width: int = KITTI_WIDTH
    height: int = KITTI_HEIGHT
    dt: float = 0.1

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError("principal point must lie inside the image")
        if not (self.baseline > 0 and self.dt > 0):
            raise ConfigError("baseline and dt must be positive")

    def scaled(self, factor: float) -> CameraModel:
        """Same geometry at a different resolution (for small test images)."""
        w = max(1, int(round(self.width * factor)))
        h = max(1, int(round(self.height * factor)))
        return CameraModel(
            self.fx * factor,
            self.fy * factor,
            min(self.cx * factor, w - 1),
            min(self.cy * factor, h - 1),
            self.baseline,
            w,
            h,
            self.dt,
        )

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(
            np.arange(self.width, dtype=np.float64),
            np.arange(self.height, dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Static depth map plus per-frame motion.

    ``vz[t]`` and ``yaw_rate[t]`` drive the flow from frame ``t`` to ``t+1``
    and ``vz`` is the ground-truth speed of frame ``t``.
    """

    depth: np.ndarray
    vz: np.ndarray
    yaw_rate: Optional[np.ndarray] = None
    depth_floor: float = DEPTH_FLOOR

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        vz = np.asarray(self.vz, dtype=np.float64).reshape(-1)
        yaw = np.zeros_like(vz) if self.yaw_rate is None else np.asarray(self.yaw_rate, dtype=np.float64).reshape(-1)
        if yaw.shape != vz.shape:
            raise ConfigError("yaw_rate and vz must have the same length")
        if not np.all(np.isfinite(depth)) or depth.min() < self.depth_floor:
            raise ConfigError(f"scene depth must be finite and >= {self.depth_floor} m")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "vz", vz)
        object.__setattr__(self, "yaw_rate", yaw)

    @property
    def n_frames(self) -> int:
        return self.vz.shape[0]

    def with_depth_scale(self, factor: float) -> SyntheticScene:
        return SyntheticScene(self.depth * factor, self.vz, self.yaw_rate, self.depth_floor)

    def with_speed_scale(self, factor: float) -> SyntheticScene:
        return SyntheticScene(self.depth, self.vz * factor, self.yaw_rate, self.depth_floor)


def render_flow(scene: SyntheticScene, cam: CameraModel, t: int) -> FlowField:
    if scene.depth.shape != (cam.height, cam.width):
        raise ConfigError("scene depth does not match the camera resolution")
    x, y = cam.pixel_grid()
    step = scene.vz[t] * cam.dt / scene.depth
    u = (x - cam.cx) * step + cam.fx * scene.yaw_rate[t] * cam.dt
    v = (y - cam.cy) * step
    return FlowField(u, v)


def render_disparity(scene: SyntheticScene, cam: CameraModel, disp_gain: float = 1.0) -> DisparityMap:
    return DisparityMap(disp_gain * cam.fx * cam.baseline / scene.depth)


# ---------------------------------------------------------------------------
# Depth maps and motion profiles


def plane_depth(cam: CameraModel, z: float = 20.0) -> np.ndarray:
    return np.full((cam.height, cam.width), float(z))


def step_depth(cam: CameraModel, depths=(8.0, 25.0, 60.0, 15.0)) -> np.ndarray:
    """Fronto-parallel vertical bands of constant depth, left to right."""
    bands = np.array_split(np.arange(cam.width), len(depths))
    out = np.empty((cam.height, cam.width))
    for cols, z in zip(bands, depths):
        out[:, cols] = z
    return out


def smooth_random_depth(cam: CameraModel, seed: int = 0, z_min: float = 5.0, z_max: float = 60.0, terms: int = 6) -> np.ndarray:
    """Seeded sum of low-frequency cosines rescaled to ``[z_min, z_max]``."""
    rng = np.random.default_rng(seed)
    x, y = cam.pixel_grid()
    acc = np.zeros_like(x)
    for _ in range(terms):
        kx, ky = rng.uniform(0.2, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        acc += rng.uniform(0.5, 1.0) * np.cos(2 * np.pi * (kx * x / cam.width + ky * y / cam.height) + phase)
    acc = (acc - acc.min()) / (acc.max() - acc.min())
    return z_min + (z_max - z_min) * acc


def constant_profile(n: int, speed: float) -> np.ndarray:
    return np.full(n, float(speed))


def stop_and_go_profile(n: int, top_speed: float = 12.0) -> np.ndarray:
    """Accelerate from rest, cruise, then brake back to rest; thirds of ``n``."""
    a, b = n // 3, 2 * n // 3
    t = np.arange(n, dtype=np.float64)
    out = np.full(n, float(top_speed))
    out[:a] = top_speed * t[:a] / max(a, 1)
    out[b:] = top_speed * (n - 1 - t[b:]) / max(n - 1 - b, 1)
    return out


def turn_profile(n: int, speed: float = 10.0, yaw_rate: float = 0.1, turn: tuple[float, float] = (0.35, 0.65)):
    """Straight driving, a pure-yaw segment (zero forward speed), then straight again.

    Returns ``(vz, yaw_rate, in_turn)``.
    """
    idx = np.arange(n)
    in_turn = (idx >= int(turn[0] * n)) & (idx < int(turn[1] * n))
    vz = np.where(in_turn, 0.0, float(speed))
    yaw = np.where(in_turn, float(yaw_rate), 0.0)
    return vz, yaw, in_turn


# ---------------------------------------------------------------------------
# Recordings


@dataclass(frozen=True, eq=False)
class SyntheticRecording:
    """In-memory frame source rendering each frame on demand (float64 exact)."""

    id: str
    scene: SyntheticScene
    cam: CameraModel
    disp_gain: float = 1.0

    @property
    def frame_count(self) -> int:
        return self.scene.n_frames

    @property
    def ground_truth(self) -> tuple:
        return tuple(self.scene.vz)

    def load_flow(self, i: int) -> FlowField:
        return render_flow(self.scene, self.cam, i)

    def load_disparity(self, i: int) -> DisparityMap:
        return render_disparity(self.scene, self.cam, self.disp_gain)


def analytic_scale(cam: CameraModel, depth: np.ndarray, crop: Optional[CropRect] = None, disp_gain: float = 1.0) -> float:
    """Scale factor mapping base-mode estimates to m/s for pure forward motion.

    With every crop pixel above threshold, the estimate equals
    ``vz * dt * mean(r / Z) / (gain * fx * B * mean(1 / Z))`` where ``r`` is
    the distance to the principal point, so ``k`` is its reciprocal per unit
    speed.
    """
    x, y = cam.pixel_grid()
    r = ScalarField(np.hypot(x - cam.cx, y - cam.cy))
    inv_z = ScalarField(1.0 / np.asarray(depth, dtype=np.float64))
    r = apply_crop(r, crop).values
    inv_z = apply_crop(inv_z, crop).values
    return disp_gain * cam.fx * cam.baseline * inv_z.mean() / (cam.dt * (r * inv_z).mean())


def gain_for_scale(k_true: float, cam: CameraModel, depth: np.ndarray, crop: Optional[CropRect] = None) -> float:
    """Disparity gain that makes ``analytic_scale`` equal ``k_true``."""
    return k_true / analytic_scale(cam, depth, crop)


def _oxts_record(vz: float, heading: float) -> list[float]:
    vals = [0.0] * OXTS_FIELDS
    vals[5] = heading
    vals[6] = vz * np.cos(heading)
    vals[7] = vz * np.sin(heading)
    vals[8] = vz
    return vals


def generate_recording(
    scene: SyntheticScene,
    cam: CameraModel,
    out_dir,
    rec_id: str = "synthetic",
    k_true: Optional[float] = None,
    crop: Optional[CropRect] = None,
) -> tuple[Recording, np.ndarray]:
    """Write ``.flo`` flow, PFM disparity and oxts files for ``scene``.

    ``k_true`` rescales the written disparity so that the base-mode scale
    factor on ``crop`` is exactly ``k_true`` (see ``analytic_scale``).
    Returns the on-disk recording and the ground-truth speeds.
    """
    if scene.n_frames < 2:
        raise ConfigError("a recording needs at least two frames")
    gain = 1.0 if k_true is None else gain_for_scale(k_true, cam, scene.depth, crop)
    base = Path(out_dir) / rec_id
    flow_dir, disp_dir, oxts_dir = base / "flow", base / "disp", base / "oxts" / "data"
    for d in (flow_dir, disp_dir, oxts_dir):
        d.mkdir(parents=True, exist_ok=True)
    disp = render_disparity(scene, cam, gain)
    heading = 0.0
    flow_paths, disp_paths = [], []
    for t in range(scene.n_frames):
        name = f"{t:06d}"
        if t < scene.n_frames - 1:
            flow_paths.append(flow_dir / f"{name}.flo")
            write_flo(render_flow(scene, cam, t), flow_paths[-1])
        disp_paths.append(disp_dir / f"{name}.pfm")
        write_pfm(disp.d, disp_paths[-1])
        (oxts_dir / f"{name}.txt").write_text(format_oxts_line(_oxts_record(scene.vz[t], heading)) + "\n")
        heading += scene.yaw_rate[t] * cam.dt
    rec = Recording(
        id=rec_id,
        flow_paths=tuple(str(p) for p in flow_paths),
        disp_paths=tuple(str(p) for p in disp_paths),
        ground_truth=tuple(scene.vz),
    )
    return rec, scene.vz.copy()


# ---------------------------------------------------------------------------
# Named scenarios

SCENARIOS = ("cruise", "stop_and_go", "turn", "suite")


@dataclass(frozen=True)
class ScenarioSpec:
    recordings: dict = field(default_factory=dict)
    # frames where the car only rotates (turn scenario)
    yaw_frames: dict = field(default_factory=dict)


def build_scenario(name: str, cam: CameraModel, n_frames: int = 60, seed: int = 0) -> ScenarioSpec:
    if n_frames < 2:
        raise ConfigError("scenarios need at least two frames")
    if name == "cruise":
        scenes = {"cruise": SyntheticScene(smooth_random_depth(cam, seed), constant_profile(n_frames, 10.0))}
        return ScenarioSpec(scenes)
    if name == "stop_and_go":
        scenes = {"stop_and_go": SyntheticScene(smooth_random_depth(cam, seed), stop_and_go_profile(n_frames))}
        return ScenarioSpec(scenes)
    if name == "turn":
        vz, yaw, in_turn = turn_profile(n_frames)
        scenes = {"turn": SyntheticScene(smooth_random_depth(cam, seed), vz, yaw)}
        return ScenarioSpec(scenes, {"turn": in_turn})
    if name == "suite":
        scenes = {
            "suite_a": SyntheticScene(plane_depth(cam, 12.0), constant_profile(n_frames, 8.0)),
            "suite_b": SyntheticScene(step_depth(cam), stop_and_go_profile(n_frames, 14.0)),
            "suite_c": SyntheticScene(smooth_random_depth(cam, seed, 20.0, 80.0), constant_profile(n_frames, 16.0)),
        }
        return ScenarioSpec(scenes)
    raise ConfigError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")


def write_scenario(spec: ScenarioSpec, cam: CameraModel, out_dir, label: str = "synthetic") -> Path:
    """Write every recording of ``spec`` plus ``manifest.ini``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec_id in sorted(spec.recordings):
        generate_recording(spec.recordings[rec_id], cam, out_dir, rec_id)
        entries.append(
            {"id": rec_id, "flow_dir": f"{rec_id}/flow", "disp_dir": f"{rec_id}/disp", "oxts_dir": f"{rec_id}/oxts"}
        )
    manifest = out_dir / "manifest.ini"
    write_manifest(manifest, entries, root=".", label=label, flow_format="flo", disp_format="pfm", disp_scale=1.0)
    return manifest
