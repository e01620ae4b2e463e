"""Inverse-mapping renderer: pixel -> undistort -> ray -> board plane -> printed intensity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from . import _kernels as K
from .errors import AllOutOfView, InvalidSpec
from .geometry import CameraModel, Pose, project_points
from .patterns import PatternSpec, board_bounds, object_points_array, pattern_table

DEFAULT_SUPERSAMPLE = 4
# above this many subsamples the per-camera ray grid is not cached (memory)
GRID_CACHE_LIMIT = 40_000_000


class EnvMode(str, Enum):
    CLEAN = "clean"
    NOISY = "noisy"


@dataclass(frozen=True)
class Environment:
    mode: EnvMode = EnvMode.CLEAN
    ambient: float = 1.0
    light_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    diffuse_gain: float = 0.0
    noise_sigma: float = 0.0  # gray levels out of 255
    background: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "mode", EnvMode(self.mode))
        l = np.asarray(self.light_direction, dtype=float)
        if l.shape != (3,) or not np.isfinite(l).all() or np.linalg.norm(l) == 0:
            raise InvalidSpec("light_direction must be a non-zero 3-vector")
        object.__setattr__(self, "light_direction", tuple(float(v) for v in l / np.linalg.norm(l)))
        for name in ("ambient", "diffuse_gain", "background"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidSpec(f"{name} must lie in [0, 1]")
        if self.mode is EnvMode.CLEAN and self.noise_sigma != 0:
            raise InvalidSpec("a Clean environment has no noise")
        if self.mode is EnvMode.NOISY and not self.noise_sigma > 0:
            raise InvalidSpec("a Noisy environment needs noise_sigma > 0")

    @classmethod
    def clean(cls) -> "Environment":
        return cls()

    @classmethod
    def noisy(cls, noise_sigma: float = 8.0) -> "Environment":
        return cls(EnvMode.NOISY, ambient=0.3, light_direction=(0.25, -0.35, 0.9),
                   diffuse_gain=0.7, noise_sigma=noise_sigma)

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "ambient": self.ambient, "light_direction": list(self.light_direction),
                "diffuse_gain": self.diffuse_gain, "noise_sigma": self.noise_sigma, "background": self.background}

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        d = dict(d)
        d["light_direction"] = tuple(d["light_direction"])
        return cls(**d)


ENVIRONMENTS = {"clean": Environment.clean, "noisy": Environment.noisy}


@dataclass(eq=False)
class CaptureFrame:
    image: np.ndarray  # (H, W) uint8
    gt_pose: Pose  # board -> camera
    point_ids: np.ndarray  # ids of visible control points
    point_uv: np.ndarray  # exact analytic pixels, (n, 2)
    frame_index: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def gt_points(self) -> list[tuple[int, tuple[float, float]]]:
        return [(int(i), (float(u), float(v))) for i, (u, v) in zip(self.point_ids, self.point_uv)]

    def gt_json(self) -> dict:
        return {
            "frame": self.frame_index,
            "rvec": self.gt_pose.rvec.tolist(),
            "tvec": self.gt_pose.translation.tolist(),
            "points": [{"id": int(i), "u": float(u), "v": float(v)}
                       for i, (u, v) in zip(self.point_ids, self.point_uv)],
        }


def shade(env: Environment, board_normal) -> float:
    """Radiometric gain of a board whose (camera-frame) normal faces the camera."""
    if env.mode is EnvMode.CLEAN:
        return 1.0
    n = np.asarray(board_normal, dtype=float)
    return float(env.ambient + env.diffuse_gain * max(0.0, -float(n @ np.asarray(env.light_direction))))


def visible_points(cam: CameraModel, pose: Pose, spec: PatternSpec) -> tuple[np.ndarray, np.ndarray]:
    """Ids and exact pixels of control points in front of the camera and inside the image."""
    X = object_points_array(spec)
    uv, front = project_points(cam, pose, X, strict=False)
    W, H = cam.intrinsics.size
    with np.errstate(invalid="ignore"):
        inside = front & (uv[:, 0] >= 0) & (uv[:, 0] < W) & (uv[:, 1] >= 0) & (uv[:, 1] < H)
    ids = np.flatnonzero(inside)
    return ids, uv[ids]


def _board_pixel_bbox(cam: CameraModel, pose: Pose, spec: PatternSpec):
    """Pixel bounding box of the projected board outline, or None to render the full frame."""
    x0, x1, y0, y1 = board_bounds(spec)
    s = np.linspace(0.0, 1.0, 65)
    outline = np.concatenate([
        np.column_stack([x0 + (x1 - x0) * s, np.full_like(s, y0)]),
        np.column_stack([x0 + (x1 - x0) * s, np.full_like(s, y1)]),
        np.column_stack([np.full_like(s, x0), y0 + (y1 - y0) * s]),
        np.column_stack([np.full_like(s, x1), y0 + (y1 - y0) * s]),
    ])
    uv, front = project_points(cam, pose, outline, strict=False)
    if not front.all() or not np.isfinite(uv).all():
        return None
    W, H = cam.intrinsics.size
    u0 = max(0, int(math.floor(uv[:, 0].min())) - 2)
    u1 = min(W, int(math.ceil(uv[:, 0].max())) + 3)
    v0 = max(0, int(math.floor(uv[:, 1].min())) - 2)
    v1 = min(H, int(math.ceil(uv[:, 1].max())) + 3)
    return u0, max(u0, u1), v0, max(v0, v1)


@lru_cache(maxsize=2)
def _ray_grid(cam: CameraModel, ss: int):
    intr = cam.intrinsics
    W, H = intr.size
    xy = np.empty((H * ss, W * ss, 2))
    ok = np.empty((H * ss, W * ss), dtype=np.bool_)
    K.undistort_grid(cam.distortion.as_array(), intr.fx, intr.fy, intr.cx, intr.cy, W, H, ss, xy, ok)
    xy.setflags(write=False)
    ok.setflags(write=False)
    return xy, ok


def render_radiance(cam: CameraModel, pose: Pose, spec: PatternSpec, gain: float, background: float,
                    supersample: int = DEFAULT_SUPERSAMPLE) -> np.ndarray:
    """Noise-free radiance image on the 0..1 scale."""
    W, H = cam.intrinsics.size
    out = np.full((H, W), float(background))
    bbox = _board_pixel_bbox(cam, pose, spec)
    if bbox is None:
        bbox = (0, W, 0, H)
    u0, u1, v0, v1 = bbox
    if u1 > u0 and v1 > v0:
        intr = cam.intrinsics
        p, markers = pattern_table(spec)
        R = np.ascontiguousarray(pose.rotation)
        t = np.ascontiguousarray(pose.translation)
        if not cam.distortion.is_zero() and W * H * supersample ** 2 <= GRID_CACHE_LIMIT:
            xy, ok = _ray_grid(cam, int(supersample))
            K.render_region_cached(out, u0, u1, v0, v1, int(supersample), xy, ok, R, t, p, markers,
                                   float(gain), float(background))
            return out
        K.render_region(out, u0, u1, v0, v1, int(supersample), intr.fx, intr.fy, intr.cx, intr.cy,
                        cam.distortion.as_array(), R, t, p, markers, float(gain), float(background))
    return out


def render_frame(cam: CameraModel, pose: Pose, spec: PatternSpec, env: Environment, frame_seed=0,
                 frame_index: int = 0, supersample: int = DEFAULT_SUPERSAMPLE) -> CaptureFrame:
    """Render one capture; ground-truth points come from the camera model, never from the image."""
    ids, uv = visible_points(cam, pose, spec)
    if ids.size == 0:
        raise AllOutOfView(f"frame {frame_index}: no control point of {spec.name} is visible")
    gain = shade(env, pose.rotation[:, 2])
    radiance = render_radiance(cam, pose, spec, gain, env.background, supersample)
    levels = radiance * 255.0
    if env.mode is EnvMode.NOISY:
        rng = np.random.default_rng(frame_seed)
        levels = np.rint(levels + rng.normal(0.0, env.noise_sigma, size=levels.shape))
    else:
        levels = np.rint(levels)
    image = np.clip(levels, 0, 255).astype(np.uint8)
    return CaptureFrame(image, pose, ids, uv, frame_index)
