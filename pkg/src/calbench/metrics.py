"""Evaluation metrics: reprojection RMS, parameter RMSE, triangulation, RMSE_cal and MPJPE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calib.result import CalibResult
from .errors import BehindCamera, FrameMismatch, LengthMismatch, NonConvergent, ParallelRays, ShapeMismatch
from .geometry import CameraModel, Pose, pixels_to_normalized, project_points, undistort_points
from .measurement import ViewObservations

CANONICAL_INTRINSICS = ("fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2", "k3")
CANONICAL_VECTOR = "fx,fy,cx,cy,k1,k2,p1,p2,k3 | per view: rvec (rad) | per view: tvec (m)"
RMSE_CAL_CONVENTION = "mean over 3N scalar squared differences"
MPJPE_CONVENTION = "mean over frames of sqrt(sum over joints of squared error norms)"
PARALLEL_ANGLE = 1e-6  # rad


# ---------------------------------------------------------------------------
# Reprojection


def rms_euclidean(observed, predicted) -> float:
    """Root mean squared point distance between two ``(N, 2)`` arrays."""
    o = np.asarray(observed, dtype=float).reshape(-1, 2)
    p = np.asarray(predicted, dtype=float).reshape(-1, 2)
    if o.shape != p.shape or len(o) == 0:
        raise LengthMismatch(f"{len(o)} observed vs {len(p)} predicted points")
    return float(np.sqrt(np.mean(np.sum((o - p) ** 2, axis=1))))


def reprojection_residuals(cam: CameraModel, poses: dict[int, Pose], views: list[ViewObservations]) -> np.ndarray:
    """``(N, 2)`` observed minus reprojected pixels over all views."""
    out = []
    for v in views:
        if v.frame_index not in poses:
            raise FrameMismatch(f"no pose for frame {v.frame_index}")
        X = np.column_stack([v.object_xy, np.zeros(len(v))])
        out.append(v.image_uv - project_points(cam, poses[v.frame_index], X))
    return np.concatenate(out) if out else np.zeros((0, 2))


def rpe_rms(result: CalibResult, views: list[ViewObservations]) -> float:
    """Euclidean reprojection RMS, ``sqrt(mean_i ||x_i - x_hat_i||^2)`` over all points of all views."""
    poses = dict(zip(result.frame_indices, result.view_poses))
    extra = sorted({v.frame_index for v in views} - set(poses))
    if extra:
        raise FrameMismatch(f"frames {extra} are not part of the calibration result")
    r = reprojection_residuals(result.camera, poses, views)
    if len(r) == 0:
        raise FrameMismatch("no points to evaluate")
    return float(np.sqrt(np.mean(np.sum(r * r, axis=1))))


# ---------------------------------------------------------------------------
# Parameter error


def _closest_rvec(r, ref) -> np.ndarray:
    """The rotation vector equivalent to ``r`` (same rotation) nearest to ``ref``."""
    r = np.asarray(r, dtype=float)
    th = np.linalg.norm(r)
    if th < 1e-12:
        return r
    alt = r - 2.0 * np.pi * r / th
    return alt if np.linalg.norm(alt - ref) < np.linalg.norm(r - ref) else r


@dataclass(frozen=True)
class ParamErrorReport:
    focal: float  # px
    principal: float  # px
    distortion: float
    rotation: float  # rad, rvec components
    translation: float  # m
    composite: float
    length: int
    canonical: str = CANONICAL_VECTOR

    def to_dict(self) -> dict:
        return {"focal_px": self.focal, "principal_px": self.principal, "distortion": self.distortion,
                "rotation_rad": self.rotation, "translation_m": self.translation, "composite": self.composite,
                "length": self.length, "canonical_vector": self.canonical}


def canonical_vector(cam: CameraModel, poses: list[Pose] = (), ref_rvecs=None) -> np.ndarray:
    i, d = cam.intrinsics, cam.distortion
    intr = [i.fx, i.fy, i.cx, i.cy, d.k1, d.k2, d.p1, d.p2, d.k3]
    rv = [p.rvec for p in poses]
    if ref_rvecs is not None:
        rv = [_closest_rvec(r, ref) for r, ref in zip(rv, ref_rvecs)]
    parts = [np.array(intr)] + list(rv) + [p.translation for p in poses]
    return np.concatenate(parts)


def _rms(a) -> float:
    a = np.asarray(a, dtype=float).ravel()
    return float(np.sqrt(np.mean(a * a))) if a.size else 0.0


def param_rmse(result: CalibResult, gt_camera: CameraModel, gt_poses: dict[int, Pose] | None = None) -> ParamErrorReport:
    """Per-group and composite RMSE against ground truth.

    With ``gt_poses=None`` only intrinsics enter the composite (length 9).
    """
    if gt_poses is None:
        est_p, gt_p = [], []
    else:
        missing = [f for f in result.frame_indices if f not in gt_poses]
        if missing:
            raise FrameMismatch(f"no ground-truth pose for frames {missing}")
        est_p = list(result.view_poses)
        gt_p = [gt_poses[f] for f in result.frame_indices]
    g = canonical_vector(gt_camera, gt_p)
    e = canonical_vector(result.camera, est_p, [p.rvec for p in gt_p])
    diff = e - g
    n = len(gt_p)
    rot = diff[9:9 + 3 * n]
    trans = diff[9 + 3 * n:]
    return ParamErrorReport(_rms(diff[0:2]), _rms(diff[2:4]), _rms(diff[4:9]), _rms(rot), _rms(trans),
                            _rms(diff), len(diff))


# ---------------------------------------------------------------------------
# Triangulation


def _normalized(cam: CameraModel, uv) -> np.ndarray:
    n = pixels_to_normalized(cam.intrinsics, np.asarray(uv, dtype=float).reshape(-1, 2))
    xy, ok = undistort_points(cam.distortion, n)
    if not np.all(ok):
        raise NonConvergent(f"undistortion failed for {int(np.sum(~ok))} pixel(s)")
    return xy


def triangulate_points(cam_a: CameraModel, pose_a: Pose, cam_b: CameraModel, pose_b: Pose, uv_a, uv_b) -> np.ndarray:
    """Linear two-view triangulation of matching pixels; poses map world -> camera.

    Each point is the DLT solution on undistorted normalized coordinates.  A
    ray-midpoint check rejects near-parallel rays and points behind a camera.
    """
    xa, xb = _normalized(cam_a, uv_a), _normalized(cam_b, uv_b)
    if len(xa) != len(xb):
        raise LengthMismatch("pixel lists differ in length")
    Pa = np.column_stack([pose_a.rotation, pose_a.translation])
    Pb = np.column_stack([pose_b.rotation, pose_b.translation])
    ca, cb = pose_a.inverse().translation, pose_b.inverse().translation
    out = np.empty((len(xa), 3))
    for k, (a, b) in enumerate(zip(xa, xb)):
        da = pose_a.rotation.T @ np.array([a[0], a[1], 1.0])
        db = pose_b.rotation.T @ np.array([b[0], b[1], 1.0])
        da /= np.linalg.norm(da)
        db /= np.linalg.norm(db)
        cross = np.cross(da, db)
        if np.linalg.norm(cross) < np.sin(PARALLEL_ANGLE):
            raise ParallelRays(f"point {k}: rays are parallel")
        # midpoint: closest points ca + s da and cb + u db
        w = ca - cb
        bdot = da @ db
        den = 1.0 - bdot * bdot
        s = (bdot * (db @ w) - (da @ w)) / den
        u = ((db @ w) - bdot * (da @ w)) / den
        if s <= 0 or u <= 0:
            raise BehindCamera(f"point {k}: rays meet behind a camera")
        A = np.vstack([a[0] * Pa[2] - Pa[0], a[1] * Pa[2] - Pa[1], b[0] * Pb[2] - Pb[0], b[1] * Pb[2] - Pb[1]])
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        _, _, vt = np.linalg.svd(A)
        h = vt[-1]
        out[k] = h[:3] / h[3]
    return out


def triangulate(cam_a: CameraModel, pose_a: Pose, cam_b: CameraModel, pose_b: Pose, uv_a, uv_b) -> np.ndarray:
    return triangulate_points(cam_a, pose_a, cam_b, pose_b, [uv_a], [uv_b])[0]


def rmse_cal(simulated, calculated) -> float:
    """``sqrt`` of the mean over all ``3N`` coordinate differences squared."""
    s = np.asarray(simulated, dtype=float).reshape(-1, 3)
    c = np.asarray(calculated, dtype=float).reshape(-1, 3)
    if len(s) != len(c) or len(s) == 0:
        raise LengthMismatch(f"{len(s)} simulated vs {len(c)} calculated positions")
    return float(np.sqrt(np.mean((s - c) ** 2)))


# ---------------------------------------------------------------------------
# Joints


@dataclass(frozen=True, eq=False)
class JointSet:
    positions: np.ndarray  # (frames, joints, 3), meters

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ShapeMismatch(f"joint positions must be (frames, joints, 3), got {p.shape}")
        object.__setattr__(self, "positions", p)


def _joint_arrays(estimate, gt):
    e = estimate.positions if isinstance(estimate, JointSet) else JointSet(estimate).positions
    g = gt.positions if isinstance(gt, JointSet) else JointSet(gt).positions
    if e.shape != g.shape:
        raise ShapeMismatch(f"estimate {e.shape} vs ground truth {g.shape}")
    return e, g


def mpjpe(estimate, gt) -> float:
    """Mean over frames of ``sqrt(sum_j ||e_j - g_j||^2)`` (squared norms summed inside the root)."""
    e, g = _joint_arrays(estimate, gt)
    return float(np.mean(np.sqrt(np.sum((e - g) ** 2, axis=(1, 2)))))


def mpjpe_per_joint(estimate, gt) -> float:
    """Conventional MPJPE: mean Euclidean error over every joint of every frame."""
    e, g = _joint_arrays(estimate, gt)
    return float(np.mean(np.linalg.norm(e - g, axis=2)))
