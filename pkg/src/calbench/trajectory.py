"""Conical-spring board trajectory: board centre spirals outward and away from the camera."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import DegenerateUp, InvalidSpec
from .geometry import Pose, rodrigues_to_matrix

_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class SpiralParams:
    n_frames: int = 127
    z_near: float = 0.4
    z_far: float = 1.2
    radius_near: float = 0.05
    radius_far: float = 0.25
    turns: float = 4.0
    max_tilt: float = math.radians(25.0)
    phase_seed: int = 0

    def __post_init__(self):
        if self.n_frames < 4:
            raise InvalidSpec("n_frames must be >= 4")
        if not 0 < self.z_near < self.z_far:
            raise InvalidSpec("need 0 < z_near < z_far")
        if self.radius_near < 0 or self.radius_far < 0:
            raise InvalidSpec("cone radii must be non-negative")
        if not 0 <= self.max_tilt < math.pi / 2:
            raise InvalidSpec("max_tilt must lie in [0, pi/2)")

    def scaled(self, factor: float) -> "SpiralParams":
        """Uniformly scale every length (keeps image-plane coverage for a board scaled alike)."""
        return replace(self, z_near=self.z_near * factor, z_far=self.z_far * factor,
                       radius_near=self.radius_near * factor, radius_far=self.radius_far * factor)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SpiralParams":
        return cls(**d)


FAST_SPIRAL = SpiralParams(n_frames=24)


def look_at(board_center, up_hint=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Rotation (board->camera) whose board +z points from the board centre to the camera origin.

    Board x is ``normalize(z_b x up)``; with the default camera +y up hint a
    centred board appears upright (board +y towards the top of the image).
    """
    c = np.asarray(board_center, dtype=float)
    if c[2] <= 0:
        raise InvalidSpec("board centre must have positive depth")
    z_b = -c / np.linalg.norm(c)
    up = np.asarray(up_hint, dtype=float)
    x_b = np.cross(z_b, up)
    n = np.linalg.norm(x_b)
    if n <= 1e-9 * np.linalg.norm(up):
        raise DegenerateUp("up hint is parallel to the viewing direction")
    x_b /= n
    y_b = np.cross(z_b, x_b)
    return np.column_stack([x_b, y_b, z_b])


def conical_spiral_poses(p: SpiralParams) -> list[Pose]:
    """Board->camera poses along the spiral, with a bounded two-axis tilt oscillation."""
    rng = np.random.default_rng(p.phase_seed)
    phase = 0.0 if p.phase_seed == 0 else float(rng.uniform(0.0, 2.0 * math.pi))
    n = p.n_frames
    poses = []
    for i in range(n):
        s = i / (n - 1)
        z = p.z_near + s * (p.z_far - p.z_near)
        r = p.radius_near + s * (p.radius_far - p.radius_near)
        ang = 2.0 * math.pi * p.turns * s + phase
        center = np.array([r * math.cos(ang), r * math.sin(ang), z])
        try:
            R = look_at(center)
        except DegenerateUp:
            R = look_at(center, rodrigues_to_matrix([1e-6, 0.0, 0.0]) @ np.array([0.0, 1.0, 0.0]))
        # incommensurate tilt frequencies about the board x and y axes
        tx = p.max_tilt * math.sin(2.0 * math.pi * (p.turns * _GOLDEN) * s + 0.5)
        ty = p.max_tilt * math.sin(2.0 * math.pi * (p.turns * math.sqrt(2.0)) * s + phase + 1.3)
        tilt = rodrigues_to_matrix([tx, 0.0, 0.0]) @ rodrigues_to_matrix([0.0, ty, 0.0])
        poses.append(Pose(R @ tilt, center))
    return poses
