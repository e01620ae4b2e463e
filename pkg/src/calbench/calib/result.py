"""Calibration results."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidSpec
from ..geometry import CameraModel, Distortion, Intrinsics, Pose

ALGORITHMS = ("zhang", "tsai", "full")


@dataclass(eq=False)
class CalibResult:
    """Estimated camera and per-view poses.

    ``rpe_rms`` is the root mean square over every residual coordinate (u and
    v counted separately), so it sits near the per-axis detector noise after a
    good fit.  :func:`calbench.metrics.rpe_rms` gives the per-point Euclidean
    figure, which is exactly ``sqrt(2)`` times larger.
    """

    algorithm: str
    intrinsics: Intrinsics
    distortion: Distortion
    view_poses: list[Pose]
    frame_indices: list[int]
    rpe_rms: float
    iterations: int
    converged: bool
    dropped: list[tuple[int, str]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidSpec(f"unknown algorithm {self.algorithm!r}")
        if len(self.view_poses) != len(self.frame_indices):
            raise InvalidSpec("one pose per accepted view")
        if not self.rpe_rms >= 0:
            raise InvalidSpec("rpe_rms must be non-negative")

    @property
    def camera(self) -> CameraModel:
        return CameraModel(self.intrinsics, self.distortion)

    def pose_for(self, frame_index: int) -> Pose:
        return self.view_poses[self.frame_indices.index(frame_index)]

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "intrinsics": self.intrinsics.to_dict(),
            "distortion": self.distortion.to_dict(),
            "views": [{"frame": int(f), "rvec": p.rvec.tolist(), "tvec": p.translation.tolist()}
                      for f, p in zip(self.frame_indices, self.view_poses)],
            "rpe_rms": self.rpe_rms,
            "iterations": self.iterations,
            "converged": self.converged,
            "dropped": [{"frame": int(f), "reason": r} for f, r in self.dropped],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibResult":
        views = d["views"]
        return cls(
            d["algorithm"], Intrinsics.from_dict(d["intrinsics"]), Distortion.from_dict(d["distortion"]),
            [Pose.from_rvec(np.asarray(v["rvec"]), np.asarray(v["tvec"])) for v in views],
            [int(v["frame"]) for v in views], float(d["rpe_rms"]), int(d["iterations"]), bool(d["converged"]),
            [(int(x["frame"]), x["reason"]) for x in d.get("dropped", [])], d.get("diagnostics", {}),
        )
