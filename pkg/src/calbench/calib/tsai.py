"""Coplanar two-stage calibration built on the radial alignment constraint (RAC).

Model: one focal length ``f`` (``fy = aspect * f`` with a known aspect),
principal point fixed at the image centre, one radial coefficient ``k1``.

Per view, board coordinates are re-origined at the control point farthest
from the image centre.  This keeps ``ty`` (the quantity the RAC divides by)
well away from zero even when the board centre sits on the optical axis.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidSpec, RACDegenerate, TooFewPoints
from ..geometry import Pose, nearest_rotation
from ..measurement import ViewObservations
from .lm import LMConfig, lm_optimize
from .model import TSAI_PARAMS, IntrinsicLayout, ViewsProblem
from .result import CalibResult
from .zhang import _finish


def _sensor_coords(v: ViewObservations, center, aspect):
    xd = v.image_uv[:, 0] - center[0]
    yd = (v.image_uv[:, 1] - center[1]) / aspect
    return xd, yd


def rac_view(v: ViewObservations, center, aspect: float = 1.0, cond_tol: float = 1e-10):
    """Rotation, translation and focal length of one view from the RAC.

    Returns ``(R, t, f)`` for the board frame shifted to ``origin`` together
    with that origin, as ``(R, t, f, origin)``.  Distortion is ignored here;
    the final refinement absorbs it.
    """
    if len(v) < 5:
        raise TooFewPoints(f"frame {v.frame_index}: the RAC needs at least 5 points")
    xd, yd = _sensor_coords(v, center, aspect)
    k0 = int(np.argmax(xd * xd + yd * yd))
    origin = v.object_xy[k0]
    xw, yw = (v.object_xy - origin).T
    A = np.column_stack([yd * xw, yd * yw, yd, -xd * xw, -xd * yw])
    sv = np.linalg.svd(A / np.linalg.norm(A, axis=0).clip(1e-300), compute_uv=False)
    if sv[-1] < cond_tol * sv[0]:
        raise RACDegenerate(f"frame {v.frame_index}: radial alignment system is rank deficient")
    a, *_ = np.linalg.lstsq(A, xd, rcond=None)
    a1, a2, a3, a4, a5 = a
    # |ty| from orthonormality of the top-left 2x2 rotation block
    sr = a1 * a1 + a2 * a2 + a4 * a4 + a5 * a5
    det = a1 * a5 - a4 * a2
    if abs(det) > 1e-12 * sr:
        ty2 = (sr - np.sqrt(max(sr * sr - 4.0 * det * det, 0.0))) / (2.0 * det * det)
    else:
        row = max(a1 * a1 + a2 * a2, a4 * a4 + a5 * a5)
        if row <= 0:
            raise RACDegenerate(f"frame {v.frame_index}: zero rotation block")
        ty2 = 1.0 / row
    ty = np.sqrt(ty2)
    # sign of ty: the far control point must land in the quadrant it was observed in
    r1, r2, tx, r4, r5 = a1 * ty, a2 * ty, a3 * ty, a4 * ty, a5 * ty
    x = r1 * xw[k0] + r2 * yw[k0] + tx
    y = r4 * xw[k0] + r5 * yw[k0] + ty
    if np.sign(x) != np.sign(xd[k0]) or np.sign(y) != np.sign(yd[k0]):
        ty = -ty
        r1, r2, tx, r4, r5 = -r1, -r2, -tx, -r4, -r5
    r3 = np.sqrt(max(1.0 - r1 * r1 - r2 * r2, 0.0))
    r6 = np.sqrt(max(1.0 - r4 * r4 - r5 * r5, 0.0))
    if r1 * r4 + r2 * r5 > 0:
        r6 = -r6
    row1 = np.array([r1, r2, r3])
    row2 = np.array([r4, r5, r6])

    def solve_f(row1, row2):
        row3 = np.cross(row1, row2)
        xc = row1[0] * xw + row1[1] * yw + tx
        yc = row2[0] * xw + row2[1] * yw + ty
        w = row3[0] * xw + row3[1] * yw
        # f * xc - xd * tz = xd * w and the same for y
        M = np.vstack([np.column_stack([xc, -xd]), np.column_stack([yc, -yd])])
        rhs = np.concatenate([xd * w, yd * w])
        s = np.linalg.svd(M / np.linalg.norm(M, axis=0).clip(1e-300), compute_uv=False)
        if s[-1] < 1e-9 * s[0] or np.linalg.norm(rhs) <= 1e-12 * np.linalg.norm(M):
            raise RACDegenerate(f"frame {v.frame_index}: focal length and depth are not separable "
                                "(board parallel to the image plane)")
        (f, tz), *_ = np.linalg.lstsq(M, rhs, rcond=None)
        return row3, f, tz

    row3, f, tz = solve_f(row1, row2)
    if f < 0:
        row1 = row1 * [1, 1, -1]
        row2 = row2 * [1, 1, -1]
        row3, f, tz = solve_f(row1, row2)
    if f <= 0 or tz <= 0:
        raise RACDegenerate(f"frame {v.frame_index}: no positive focal length / depth")
    R = nearest_rotation(np.vstack([row1, row2, row3]))
    return R, np.array([tx, ty, tz]), float(f), origin


def _depth_for_focal(v: ViewObservations, R, t, f, origin, center, aspect) -> float:
    """Least-squares tz for a given focal length (the view's own f is replaced by the median)."""
    xd, yd = _sensor_coords(v, center, aspect)
    X = np.column_stack([v.object_xy - origin, np.zeros(len(v))])
    Xc = X @ R.T + t
    w = Xc[:, 2] - t[2]
    num = np.concatenate([f * Xc[:, 0] - xd * w, f * Xc[:, 1] - yd * w])
    den = np.concatenate([xd, yd])
    return float(num @ den / (den @ den))


def calibrate_tsai(views: list[ViewObservations], image_size: tuple[int, int], aspect: float = 1.0,
                   config: LMConfig = LMConfig()) -> CalibResult:
    """RAC pose + focal length per view, median focal length, then LM over f, k1 and every pose.

    ``aspect`` is ``fy / fx``; it is treated as known, as is the principal
    point (the image centre).
    """
    if not aspect > 0:
        raise InvalidSpec("aspect must be positive")
    W, H = image_size
    center = (W / 2.0, H / 2.0)
    per_view, dropped = [], []
    for v in views:
        try:
            per_view.append((v, *rac_view(v, center, aspect)))
        except (RACDegenerate, TooFewPoints) as exc:
            dropped.append((v.frame_index, f"{type(exc).__name__}: {exc}"))
    if not per_view:
        raise RACDegenerate("no view satisfies the radial alignment preconditions")
    f = float(np.median([pv[3] for pv in per_view]))
    kept, poses = [], []
    for v, R, t, _, origin in per_view:
        tz = _depth_for_focal(v, R, t, f, origin, center, aspect)
        if tz <= 0:
            dropped.append((v.frame_index, "RACDegenerate: negative depth at the median focal length"))
            continue
        t = np.array([t[0], t[1], tz])
        # undo the origin shift: X_cam = R (X - o) + t
        poses.append(Pose(R, t - R @ np.array([origin[0], origin[1], 0.0])))
        kept.append(v)
    if not kept:
        raise RACDegenerate("every view was rejected")
    atoms = np.zeros(12)
    atoms[:4] = [f, aspect * f, center[0], center[1]]
    layout = IntrinsicLayout(TSAI_PARAMS, tuple(atoms), aspect=aspect)
    problem = ViewsProblem(kept, layout)
    lm = lm_optimize(problem, problem.pack(layout.theta(atoms), poses), config)
    return _finish("tsai", problem, lm, kept, image_size, dropped,
                   {"median_focal_init": f, "aspect": aspect, "n_rac_views": len(per_view)})
