"""Two-camera rig extrinsics from per-camera calibrations of shared captures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from ..errors import InvalidSpec, NoSharedFrames
from ..geometry import Pose, nearest_rotation
from ..measurement import ViewObservations
from .lm import LMConfig, lm_optimize
from .model import _skew_rows, block_csr, camera_atoms, project_atoms, rodrigues_batch
from .result import CalibResult


@dataclass(eq=False)
class StereoResult:
    """Rig estimate: ``relative`` maps camera-A coordinates into camera B."""

    relative: Pose
    initial_relative: Pose
    board_poses: list[Pose]  # board -> camera A, one per shared frame
    frame_indices: list[int]
    rpe_rms: float  # per-coordinate, both cameras
    rpe_rms_a: float
    rpe_rms_b: float
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.relative.inverse().translation))

    def to_dict(self) -> dict:
        def pose(p: Pose) -> dict:
            return {"rvec": p.rvec.tolist(), "tvec": p.translation.tolist()}

        return {
            "relative": pose(self.relative),
            "initial_relative": pose(self.initial_relative),
            "board_poses": [dict(frame=int(f), **pose(p)) for f, p in zip(self.frame_indices, self.board_poses)],
            "rpe_rms": self.rpe_rms, "rpe_rms_a": self.rpe_rms_a, "rpe_rms_b": self.rpe_rms_b,
            "iterations": self.iterations, "converged": self.converged, "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StereoResult":
        def pose(x: dict) -> Pose:
            return Pose.from_rvec(np.asarray(x["rvec"], dtype=float), np.asarray(x["tvec"], dtype=float))

        boards = d["board_poses"]
        return cls(pose(d["relative"]), pose(d["initial_relative"]), [pose(b) for b in boards],
                   [int(b["frame"]) for b in boards], float(d["rpe_rms"]), float(d["rpe_rms_a"]),
                   float(d["rpe_rms_b"]), int(d["iterations"]), bool(d["converged"]), d.get("diagnostics", {}))


def average_poses(poses: list[Pose]) -> Pose:
    """Chordal rotation mean projected back onto SO(3), arithmetic translation mean."""
    if not poses:
        raise NoSharedFrames("nothing to average")
    if len(poses) == 1:
        return poses[0]
    R = nearest_rotation(sum(p.rotation for p in poses))
    return Pose(R, np.mean([p.translation for p in poses], axis=0))


class StereoProblem:
    """Parameters: ``[rvec_BA, t_BA | per shared frame: rvec, t (board -> A)]``; intrinsics fixed."""

    def __init__(self, atoms_a, atoms_b, views_a: list[ViewObservations], views_b: list[ViewObservations]):
        if len(views_a) != len(views_b):
            raise InvalidSpec("views must be paired")
        self.a, self.b = np.asarray(atoms_a, float), np.asarray(atoms_b, float)

        def stack(views):
            X = np.concatenate([np.column_stack([v.object_xy, np.zeros(len(v))]) for v in views])
            vid = np.concatenate([np.full(len(v), k) for k, v in enumerate(views)])
            return X, vid

        self.XA, self.vidA = stack(views_a)
        self.XB, self.vidB = stack(views_b)
        self.nA = 2 * len(self.XA)
        self.obs = np.concatenate([v.image_uv.ravel() for v in views_a] + [v.image_uv.ravel() for v in views_b])
        self.n_frames = len(views_a)
        self.n_params = 6 + 6 * self.n_frames
        colsA = 6 + 6 * self.vidA[:, None] + np.arange(6)
        colsB = np.hstack([np.broadcast_to(np.arange(6), (len(self.XB), 6)), 6 + 6 * self.vidB[:, None] + np.arange(6)])
        self._colsA = np.repeat(colsA, 2, axis=0)
        self._colsB = np.repeat(colsB, 2, axis=0)

    def _points(self, x):
        x = np.asarray(x, float)
        P = x[6:].reshape(-1, 6)
        R, Jr = rodrigues_batch(P[:, :3])
        Rr, Jrr = rodrigues_batch(x[None, :3])
        return x, P, R, Jr, Rr[0], Jrr[0]

    def residual(self, x) -> np.ndarray:
        x, P, R, _, Rr, _ = self._points(x)
        XcA = np.einsum("nij,nj->ni", R[self.vidA], self.XA) + P[self.vidA, 3:]
        Y = np.einsum("nij,nj->ni", R[self.vidB], self.XB) + P[self.vidB, 3:]
        XcB = Y @ Rr.T + x[3:6]
        uv = np.concatenate([project_atoms(self.a, XcA, jac=False).ravel(),
                             project_atoms(self.b, XcB, jac=False).ravel()])
        return uv - self.obs

    def jacobian(self, x) -> scipy.sparse.csr_matrix:
        x, P, R, Jr, Rr, Jrr = self._points(x)
        RnA = R[self.vidA]
        RXA = np.einsum("nij,nj->ni", RnA, self.XA)
        _, _, JxA = project_atoms(self.a, RXA + P[self.vidA, 3:])
        dA = -(RnA @ _skew_rows(self.XA)) @ Jr[self.vidA]
        blockA = np.concatenate([JxA @ dA, JxA], axis=2)
        RnB = R[self.vidB]
        Y = np.einsum("nij,nj->ni", RnB, self.XB) + P[self.vidB, 3:]
        _, _, JxB = project_atoms(self.b, Y @ Rr.T + x[3:6])
        dRel = -(Rr @ _skew_rows(Y)) @ Jrr
        dB = -(RnB @ _skew_rows(self.XB)) @ Jr[self.vidB]
        blockB = np.concatenate([JxB @ dRel, JxB, JxB @ (Rr @ dB), JxB @ Rr], axis=2)
        JA = block_csr(blockA, self.nA, self.n_params, self._colsA)
        JB = block_csr(blockB, len(self.obs) - self.nA, self.n_params, self._colsB)
        return scipy.sparse.vstack([JA, JB], format="csr")


def stereo_extrinsics(result_a: CalibResult, result_b: CalibResult, views_a: list[ViewObservations],
                      views_b: list[ViewObservations], config: LMConfig = LMConfig()) -> StereoResult:
    """Relative pose B<-A: averaged per-frame estimate, then a joint refinement.

    The joint problem shares one board pose per frame between both cameras
    and keeps each camera's intrinsics at its own calibration.
    """
    va = {v.frame_index: v for v in views_a}
    vb = {v.frame_index: v for v in views_b}
    shared = sorted(set(result_a.frame_indices) & set(result_b.frame_indices) & set(va) & set(vb))
    if not shared:
        raise NoSharedFrames("the two calibrations have no frame in common")
    rel = [result_b.pose_for(f).compose(result_a.pose_for(f).inverse()) for f in shared]
    init = average_poses(rel)
    problem = StereoProblem(camera_atoms(result_a.camera), camera_atoms(result_b.camera),
                            [va[f] for f in shared], [vb[f] for f in shared])
    x0 = np.concatenate([init.rvec, init.translation]
                        + [np.concatenate([result_a.pose_for(f).rvec, result_a.pose_for(f).translation])
                           for f in shared])
    lm = lm_optimize(problem, x0, config)
    r = problem.residual(lm.x)
    rA, rB = r[:problem.nA], r[problem.nA:]
    board = [Pose.from_rvec(lm.x[6 + 6 * k: 9 + 6 * k], lm.x[9 + 6 * k: 12 + 6 * k]) for k in range(len(shared))]
    spread = max(np.degrees(np.linalg.norm((p.rotation @ init.rotation.T) - np.eye(3))) for p in rel)
    return StereoResult(
        Pose.from_rvec(lm.x[:3], lm.x[3:6]), init, board, shared,
        float(np.sqrt(np.mean(r * r))), float(np.sqrt(np.mean(rA * rA))), float(np.sqrt(np.mean(rB * rB))),
        lm.iterations, lm.converged, {"lm_reason": lm.reason, "n_shared": len(shared),
                                      "per_frame_rotation_spread": float(spread)},
    )
