"""Benchmark configurations: camera rig, target, environment and trajectory.

``table1`` enumerates 16 mono configurations (2 cameras x 4 targets x 2
environments) and 24 stereo ones (rectilinear pair, wide pair and mixed
pair, each x 4 targets x 2 environments), 40 in total.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidSpec
from .geometry import CameraModel, Pose, camera_preset
from .patterns import PATTERN_PRESETS, PatternSpec, board_bounds, checkerboard_9x12
from .render import Environment
from .trajectory import FAST_SPIRAL, SpiralParams, conical_spiral_poses

CAMERA_SHORT = {"rectilinear": "rect", "wide": "wide"}
STEREO_BASELINE = 0.2  # m, along camera-A x
ENV_NAMES = ("clean", "noisy")


def board_half_diagonal(spec: PatternSpec) -> float:
    x0, x1, y0, y1 = board_bounds(spec)
    return 0.5 * math.hypot(x1 - x0, y1 - y0)


def spiral_for(spec: PatternSpec, base: SpiralParams) -> SpiralParams:
    """Stretch the trajectory for boards larger than the 9x12 checkerboard so they stay in frame."""
    factor = max(1.0, board_half_diagonal(spec) / board_half_diagonal(checkerboard_9x12()))
    return base.scaled(factor) if factor > 1.0 else base


def verged_rig_pose(baseline: float, fixation_depth: float) -> Pose:
    """World->camera pose of a camera at ``(baseline, 0, 0)`` turned to look at ``(0, 0, fixation_depth)``."""
    c = np.array([baseline, 0.0, 0.0])
    z = np.array([0.0, 0.0, fixation_depth]) - c
    z /= np.linalg.norm(z)
    x = np.cross([0.0, 1.0, 0.0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    return Pose(R, -R @ c)


@dataclass(frozen=True)
class Configuration:
    name: str
    cameras: tuple[str, ...]  # camera preset names; camera 0 defines the world frame
    pattern: PatternSpec
    environment: Environment
    spiral: SpiralParams
    scale: float = 1.0
    rig: tuple[Pose, ...] = field(default=(), compare=False)  # world -> camera, one per camera

    def __post_init__(self):
        if len(self.cameras) not in (1, 2):
            raise InvalidSpec("a configuration has one or two cameras")
        if not self.scale > 0:
            raise InvalidSpec("scale must be positive")
        if not self.rig:
            rig = [Pose.identity()]
            if len(self.cameras) == 2:
                rig.append(verged_rig_pose(STEREO_BASELINE, 0.5 * (self.spiral.z_near + self.spiral.z_far)))
            object.__setattr__(self, "rig", tuple(rig))
        if len(self.rig) != len(self.cameras):
            raise InvalidSpec("one rig pose per camera")

    @property
    def n_frames(self) -> int:
        return self.spiral.n_frames

    @property
    def is_stereo(self) -> bool:
        return len(self.cameras) == 2

    def camera(self, i: int) -> CameraModel:
        return camera_preset(self.cameras[i], self.scale)

    def board_poses(self) -> list[Pose]:
        """Board -> world (= camera 0) poses, one per frame."""
        return conical_spiral_poses(self.spiral)

    def gt_poses(self, i: int) -> list[Pose]:
        """Board -> camera ``i`` poses."""
        return [self.rig[i].compose(p) for p in self.board_poses()]

    def with_scale(self, scale: float) -> "Configuration":
        return replace(self, scale=scale)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "cameras": list(self.cameras),
            "pattern": self.pattern.to_dict(),
            "environment": self.environment.to_dict(),
            "trajectory": self.spiral.to_dict(),
            "n_frames": self.n_frames,
            "scale": self.scale,
            "rig": [p.to_dict() for p in self.rig],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Configuration":
        return cls(d["name"], tuple(d["cameras"]), PatternSpec.from_dict(d["pattern"]),
                   Environment.from_dict(d["environment"]), SpiralParams.from_dict(d["trajectory"]),
                   float(d["scale"]), tuple(Pose.from_dict(p) for p in d["rig"]))


def config_name(cameras, pattern_short: str, env: str) -> str:
    kind = "mono" if len(cameras) == 1 else "stereo"
    return "-".join([kind, *(CAMERA_SHORT[c] for c in cameras), pattern_short, env])


def make_configuration(cameras, pattern: str, env: str, scale: float = 1.0,
                       base: SpiralParams = SpiralParams()) -> Configuration:
    if pattern not in PATTERN_PRESETS:
        raise InvalidSpec(f"unknown pattern {pattern!r}; choose from {sorted(PATTERN_PRESETS)}")
    if env not in ENV_NAMES:
        raise InvalidSpec(f"unknown environment {env!r}")
    spec = PATTERN_PRESETS[pattern]()
    environment = Environment.clean() if env == "clean" else Environment.noisy()
    return Configuration(config_name(cameras, pattern, env), tuple(cameras), spec, environment,
                         spiral_for(spec, base), scale)


def table1(scale: float = 1.0) -> list[Configuration]:
    rigs = [("rectilinear",), ("wide",), ("rectilinear", "rectilinear"), ("wide", "wide"), ("rectilinear", "wide")]
    return [make_configuration(r, p, e, scale) for r in rigs for p in PATTERN_PRESETS for e in ENV_NAMES]


def fast(scale: float = 0.25) -> list[Configuration]:
    return [make_configuration(("rectilinear",), "ch", "clean", scale, FAST_SPIRAL)]


PRESETS = {"table1": (table1, 1.0), "fast": (fast, 0.25)}


def preset_configurations(name: str, scale: float | None = None) -> list[Configuration]:
    if name not in PRESETS:
        raise InvalidSpec(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    fn, default_scale = PRESETS[name]
    return fn(default_scale if scale is None else scale)


def derive_seed(master_seed: int, *keys) -> int:
    """Stable 64-bit seed from the master seed and string/int keys."""
    ints = [int(master_seed)] + [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    return int(np.random.SeedSequence(ints).generate_state(1, dtype=np.uint64)[0])


def frame_seed(master_seed: int, config: str, camera: int, frame: int) -> int:
    """Seed of the sensor noise rendered into one capture."""
    return derive_seed(master_seed, config, "render", camera, frame)
