"""Plane-based calibration: closed-form intrinsics from homographies, then LM refinement."""

from __future__ import annotations

import numpy as np

from ..errors import Degenerate, IllConditioned, InvalidSpec, TooFewPoints
from ..geometry import Intrinsics, Pose, nearest_rotation
from ..measurement import ViewObservations
from .homography import estimate_homography
from .lm import LMConfig, lm_optimize
from .model import FULL_PARAMS, ZHANG_PARAMS, IntrinsicLayout, ViewsProblem, atoms_to_camera
from .result import CalibResult


def _pixel_normalizer(width: int, height: int) -> np.ndarray:
    s = 2.0 / (width + height)
    return np.array([[s, 0.0, -s * width / 2.0], [0.0, s, -s * height / 2.0], [0.0, 0.0, 1.0]])


def _v(H, i, j):
    return np.array([
        H[0, i] * H[0, j],
        H[1, i] * H[1, j],
        H[2, i] * H[0, j] + H[0, i] * H[2, j],
        H[2, i] * H[1, j] + H[1, i] * H[2, j],
        H[2, i] * H[2, j],
    ])


def zhang_closed_form(homographies, image_size: tuple[int, int], cond_tol: float = 1e-12) -> Intrinsics:
    """Zero-skew intrinsics from the image of the absolute conic.

    Homographies are first expressed in pixel coordinates normalized by the
    image size, which keeps the linear system well scaled.
    """
    Hs = list(homographies)
    if len(Hs) < 2:
        raise IllConditioned(f"need at least 2 homographies, got {len(Hs)}")
    W, H = image_size
    T = _pixel_normalizer(W, H)
    rows = []
    for Hm in Hs:
        Hn = T @ np.asarray(Hm, dtype=float)
        Hn = Hn / np.linalg.norm(Hn)
        rows.append(_v(Hn, 0, 1))
        rows.append(_v(Hn, 0, 0) - _v(Hn, 1, 1))
    V = np.array(rows)
    _, sv, vt = np.linalg.svd(V)
    if len(sv) < 5 or sv[-2] < cond_tol * sv[0]:
        raise IllConditioned("view geometry does not determine the intrinsics (near-parallel board planes)")
    b = vt[-1]
    if b[0] < 0:
        b = -b
    b11, b22, b13, b23, b33 = b
    if b11 <= 0 or b22 <= 0:
        raise IllConditioned("recovered conic is not positive definite")
    cx = -b13 / b11
    cy = -b23 / b22
    s = b33 - b13 * b13 / b11 - b23 * b23 / b22
    if s <= 0:
        raise IllConditioned("recovered conic is not positive definite")
    Kn = np.array([[np.sqrt(s / b11), 0.0, cx], [0.0, np.sqrt(s / b22), cy], [0.0, 0.0, 1.0]])
    K = np.linalg.solve(T, Kn)
    return Intrinsics(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]), W, H)


def extrinsics_from_homography(K, H) -> Pose:
    """Board pose from ``H ~ K [r1 r2 t]``, projected onto a proper rotation with positive depth."""
    Km = K.K if isinstance(K, Intrinsics) else np.asarray(K, dtype=float)
    Hm = np.asarray(H, dtype=float)
    sv = np.linalg.svd(Hm, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise Degenerate("homography is rank deficient")
    A = np.linalg.solve(Km, Hm)
    n1, n2 = np.linalg.norm(A[:, 0]), np.linalg.norm(A[:, 1])
    lam = 2.0 / (n1 + n2)
    if A[2, 2] < 0:
        lam = -lam
    r1, r2, t = lam * A[:, 0], lam * A[:, 1], lam * A[:, 2]
    R = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return Pose(R, t)


def _homographies(views, image_size):
    """Per-view homographies; views whose homography is degenerate are dropped."""
    kept, Hs, dropped = [], [], []
    for v in views:
        try:
            if len(v) < 4:
                raise TooFewPoints(f"{len(v)} points")
            Hs.append(estimate_homography(v.object_xy, v.image_uv))
            kept.append(v)
        except (Degenerate, TooFewPoints) as exc:
            dropped.append((v.frame_index, f"{type(exc).__name__}: {exc}"))
    return kept, Hs, dropped


def _radial_init(views, K: Intrinsics, poses) -> np.ndarray:
    """Linear least-squares k1, k2 given intrinsics and poses."""
    A, b = [], []
    for v, p in zip(views, poses):
        X = np.column_stack([v.object_xy, np.zeros(len(v))])
        Xc = p.apply(X)
        n = Xc[:, :2] / Xc[:, 2:3]
        r2 = (n ** 2).sum(axis=1)
        ideal = n * [K.fx, K.fy] + [K.cx, K.cy]
        off = ideal - [K.cx, K.cy]
        for c in range(2):
            A.append(np.column_stack([off[:, c] * r2, off[:, c] * r2 * r2]))
            b.append(v.image_uv[:, c] - ideal[:, c])
    k, *_ = np.linalg.lstsq(np.vstack(A), np.concatenate(b), rcond=None)
    return k


def _finish(algorithm, problem: ViewsProblem, lm, views, image_size, dropped, extra=None) -> CalibResult:
    theta, poses = problem.unpack(lm.x)
    a = problem.layout.atoms(theta)
    cam = atoms_to_camera(a, *image_size)
    r = problem.residual(lm.x)
    diag = {"lm_reason": lm.reason, "free_parameters": list(problem.layout.free), "n_points": int(len(r) // 2)}
    diag.update(extra or {})
    return CalibResult(
        algorithm, cam.intrinsics, cam.distortion,
        [Pose.from_rvec(rv, t) for rv, t in poses], [v.frame_index for v in views],
        float(np.sqrt(np.mean(r * r))), lm.iterations, lm.converged, dropped, diag,
    )


def _zhang_stage(views, image_size, config: LMConfig):
    kept, Hs, dropped = _homographies(views, image_size)
    if len(kept) < 3:
        raise IllConditioned(f"need at least 3 usable views, got {len(kept)}")
    K = zhang_closed_form(Hs, image_size)
    poses = [extrinsics_from_homography(K, H) for H in Hs]
    k1, k2 = _radial_init(kept, K, poses)
    atoms = np.zeros(12)
    atoms[:6] = [K.fx, K.fy, K.cx, K.cy, k1, k2]
    layout = IntrinsicLayout(ZHANG_PARAMS, tuple(atoms))
    problem = ViewsProblem(kept, layout)
    lm = lm_optimize(problem, problem.pack(layout.theta(atoms), poses), config)
    init = {"closed_form": [K.fx, K.fy, K.cx, K.cy], "radial_init": [float(k1), float(k2)]}
    return kept, dropped, problem, lm, init


def calibrate_zhang(views: list[ViewObservations], image_size: tuple[int, int],
                    config: LMConfig = LMConfig()) -> CalibResult:
    """Closed-form init, linear k1/k2, then LM over fx, fy, cx, cy, k1, k2 and every view pose."""
    kept, dropped, problem, lm, init = _zhang_stage(views, image_size, config)
    return _finish("zhang", problem, lm, kept, image_size, dropped, init)


def calibrate_full(views: list[ViewObservations], image_size: tuple[int, int], config: LMConfig = LMConfig(),
                   free: tuple[str, ...] = FULL_PARAMS) -> CalibResult:
    """Zhang stage, then LM over the wider model (by default adding p1, p2, k3).

    Starting from the converged two-coefficient solution means the wider
    model can only lower the residual.
    """
    if not set(free) >= set(ZHANG_PARAMS):
        raise InvalidSpec("the full model must include every Zhang parameter")
    kept, dropped, zproblem, zlm, init = _zhang_stage(views, image_size, config)
    theta, poses = zproblem.unpack(zlm.x)
    atoms = zproblem.layout.atoms(theta)
    layout = IntrinsicLayout(free, tuple(atoms))
    problem = ViewsProblem(kept, layout)
    x0 = np.concatenate([layout.theta(atoms), zlm.x[zproblem.n_intr:]])
    lm = lm_optimize(problem, x0, config)
    init["zhang_stage_iterations"] = zlm.iterations
    init["zhang_stage_rpe_rms"] = float(np.sqrt(2.0 * zlm.cost / zproblem.n_residuals))
    return _finish("full", problem, lm, kept, image_size, dropped, init)
