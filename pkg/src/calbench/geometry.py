"""Pinhole camera with rational Brown-Conrady distortion.

Conventions used throughout the package:

* Pixel ``(row i, col j)`` covers ``[j, j+1) x [i, i+1)``; its centre is at
  ``(u, v) = (j + 0.5, i + 0.5)``.  With this convention the image centre of a
  ``W x H`` image is exactly ``(W/2, H/2)`` and resolution scaling is exact.
* Camera frame: x right, y down, z forward.
* Board frame: the board lies in its own ``z = 0`` plane with x to the right,
  y up (as seen from the front) and +z pointing out of the printed face.
* A :class:`Pose` maps points of a source frame into the camera frame,
  ``X_cam = R @ X + t``.  Board poses are board->camera; rig poses are
  world->camera.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, InvalidSpec, NonConvergent, NotOrthonormal, Parallel

DISTORTION_ORDER = ("k1", "k2", "p1", "p2", "k3", "k4", "k5", "k6")

UNDISTORT_MAX_ITER = 50
UNDISTORT_TOL = 1e-12


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidSpec(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidSpec(
                f"principal point ({self.cx}, {self.cy}) outside a {self.width}x{self.height} image"
            )

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def scaled(self, s: float) -> "Intrinsics":
        """Resample to a resolution scaled by ``s`` (all pixel quantities scale)."""
        return Intrinsics(
            self.fx * s, self.fy * s, self.cx * s, self.cy * s,
            int(round(self.width * s)), int(round(self.height * s)),
        )

    def to_dict(self) -> dict:
        return {"K": self.K.tolist(), "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        K = np.asarray(d["K"], dtype=float)
        if K.shape != (3, 3) or K[0, 1] != 0 or K[1, 0] != 0 or tuple(K[2]) != (0, 0, 1):
            raise InvalidSpec("K must be a zero-skew 3x3 upper-triangular matrix with K[2] = (0,0,1)")
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class Distortion:
    """Rational radial + tangential coefficients, stored in k1,k2,p1,p2,k3..k6 order."""

    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0
    k4: float = 0.0
    k5: float = 0.0
    k6: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in DISTORTION_ORDER], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Distortion":
        a = np.asarray(a, dtype=float).ravel()
        if a.size > 8:
            raise InvalidSpec(f"at most 8 distortion coefficients, got {a.size}")
        full = np.zeros(8)
        full[: a.size] = a
        return cls(*(float(x) for x in full))

    def is_zero(self) -> bool:
        return not self.as_array().any()

    def to_dict(self) -> dict:
        return {"order": list(DISTORTION_ORDER), "coefficients": self.as_array().tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Distortion":
        if list(d.get("order", DISTORTION_ORDER)) != list(DISTORTION_ORDER):
            raise InvalidSpec(f"distortion order must be {DISTORTION_ORDER}")
        return cls.from_array(d["coefficients"])


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise NotOrthonormal(f"rotation must be 3x3, got {R.shape}")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise NotOrthonormal("rotation is not orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rvec(cls, rvec, tvec) -> "Pose":
        return cls(rodrigues_to_matrix(rvec), tvec)

    @property
    def rvec(self) -> np.ndarray:
        return matrix_to_rodrigues(self.rotation)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """``self o other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.asarray(d["rotation"], dtype=float), np.asarray(d["translation"], dtype=float))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    def __repr__(self):
        return f"Pose(rvec={np.round(self.rvec, 6).tolist()}, t={np.round(self.translation, 6).tolist()})"


@dataclass(frozen=True)
class CameraModel:
    intrinsics: Intrinsics
    distortion: Distortion = Distortion()

    def scaled(self, s: float) -> "CameraModel":
        return CameraModel(self.intrinsics.scaled(s), self.distortion)

    def to_dict(self) -> dict:
        return {"intrinsics": self.intrinsics.to_dict(), "distortion": self.distortion.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(Intrinsics.from_dict(d["intrinsics"]), Distortion.from_dict(d["distortion"]))


# ---------------------------------------------------------------------------
# Rotations


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues_to_matrix(rvec) -> np.ndarray:
    r = np.asarray(rvec, dtype=float).reshape(3)
    theta = np.linalg.norm(r)
    if theta < 1e-12:
        return np.eye(3) + skew(r)
    a = r / theta
    A = skew(a)
    return np.eye(3) + np.sin(theta) * A + (1.0 - np.cos(theta)) * (A @ A)


def matrix_to_rodrigues(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or np.linalg.det(R) < 0:
        raise NotOrthonormal("input is not a rotation matrix")
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * np.linalg.norm(vee)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)
    if c < -0.5:
        # near pi the antisymmetric part vanishes; recover the axis from the symmetric part
        S = 0.5 * (R + R.T)
        aat = (S - c * np.eye(3)) / (1.0 - c)
        k = int(np.argmax(np.diag(aat)))
        axis = aat[:, k] / np.sqrt(aat[k, k])
        if axis @ vee < 0:
            axis = -axis
        return theta * axis
    if s > 1e-8:
        return theta / (2.0 * s) * vee
    return 0.5 * vee


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix, radians."""
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.arctan2(0.5 * np.linalg.norm(vee), c))


def nearest_rotation(M) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


# ---------------------------------------------------------------------------
# Distortion


def _radial_terms(d: np.ndarray, r2):
    k1, k2, _, _, k3, k4, k5, k6 = d
    r4 = r2 * r2
    r6 = r4 * r2
    num = 1.0 + k1 * r2 + k2 * r4 + k3 * r6
    den = 1.0 + k4 * r2 + k5 * r4 + k6 * r6
    return num, den, r4, r6


def _coeffs(d) -> np.ndarray:
    return d.as_array() if isinstance(d, Distortion) else np.asarray(d, dtype=float)


def apply_distortion(d, p) -> np.ndarray:
    """Distort ideal normalized points ``p`` (shape ``(..., 2)``)."""
    c = _coeffs(d)
    p = np.asarray(p, dtype=float)
    x, y = p[..., 0], p[..., 1]
    p1, p2 = c[2], c[3]
    r2 = x * x + y * y
    num, den, _, _ = _radial_terms(c, r2)
    rad = num / den
    xd = x * rad + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * rad + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def distortion_point_jacobian(d, p) -> np.ndarray:
    """d(distorted)/d(ideal), shape ``(..., 2, 2)``."""
    c = _coeffs(d)
    p = np.asarray(p, dtype=float)
    x, y = p[..., 0], p[..., 1]
    k1, k2, p1, p2, k3, k4, k5, k6 = c
    r2 = x * x + y * y
    num, den, r4, _ = _radial_terms(c, r2)
    rad = num / den
    dnum = k1 + 2.0 * k2 * r2 + 3.0 * k3 * r4
    dden = k4 + 2.0 * k5 * r2 + 3.0 * k6 * r4
    drad = (dnum * den - num * dden) / (den * den)
    J = np.empty(p.shape[:-1] + (2, 2))
    J[..., 0, 0] = rad + 2.0 * x * x * drad + 2.0 * p1 * y + 6.0 * p2 * x
    J[..., 0, 1] = 2.0 * x * y * drad + 2.0 * p1 * x + 2.0 * p2 * y
    J[..., 1, 0] = 2.0 * x * y * drad + 2.0 * p1 * x + 2.0 * p2 * y
    J[..., 1, 1] = rad + 2.0 * y * y * drad + 6.0 * p1 * y + 2.0 * p2 * x
    return J


def distortion_coeff_jacobian(d, p) -> np.ndarray:
    """d(distorted)/d(coefficients) in k1,k2,p1,p2,k3..k6 order, shape ``(..., 2, 8)``."""
    c = _coeffs(d)
    p = np.asarray(p, dtype=float)
    x, y = p[..., 0], p[..., 1]
    r2 = x * x + y * y
    num, den, r4, r6 = _radial_terms(c, r2)
    J = np.zeros(p.shape[:-1] + (2, 8))
    for col, rk in ((0, r2), (1, r4), (4, r6)):
        J[..., 0, col] = x * rk / den
        J[..., 1, col] = y * rk / den
    g = -num / (den * den)
    for col, rk in ((5, r2), (6, r4), (7, r6)):
        J[..., 0, col] = x * rk * g
        J[..., 1, col] = y * rk * g
    J[..., 0, 2] = 2.0 * x * y
    J[..., 1, 2] = r2 + 2.0 * y * y
    J[..., 0, 3] = r2 + 2.0 * x * x
    J[..., 1, 3] = 2.0 * x * y
    return J


def undistort_points(d, pd, max_iter: int = UNDISTORT_MAX_ITER, tol: float = UNDISTORT_TOL):
    """Invert :func:`apply_distortion` by damped Newton iteration.

    Returns ``(points, converged)``.  A point counts as converged only when the
    residual is below ``tol`` *and* the distortion map is locally orientation
    preserving there, so a root on a folded branch of the profile is rejected.
    """
    c = _coeffs(d)
    pd = np.asarray(pd, dtype=float)
    shape = pd.shape
    target = pd.reshape(-1, 2)
    if not c.any():
        return pd.copy(), np.ones(shape[:-1], dtype=bool)
    p = target.copy()
    err = np.linalg.norm(apply_distortion(c, p) - target, axis=1)
    for _ in range(max_iter):
        active = np.flatnonzero(err > tol)
        if active.size == 0:
            break
        pa = p[active]
        f = apply_distortion(c, pa) - target[active]
        J = distortion_point_jacobian(c, pa)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        safe = np.where(np.abs(det) < 1e-300, 1e-300, det)
        step = np.stack([
            -(J[:, 1, 1] * f[:, 0] - J[:, 0, 1] * f[:, 1]) / safe,
            -(-J[:, 1, 0] * f[:, 0] + J[:, 0, 0] * f[:, 1]) / safe,
        ], axis=1)
        ea = err[active]
        alpha = np.ones(active.size)
        best_p = pa.copy()
        best_e = ea.copy()
        pending = np.ones(active.size, dtype=bool)
        for _ in range(30):
            cand = pa + alpha[:, None] * step
            ec = np.linalg.norm(apply_distortion(c, cand) - target[active], axis=1)
            better = pending & np.isfinite(ec) & (ec < ea)
            best_p[better] = cand[better]
            best_e[better] = ec[better]
            pending &= ~better
            if not pending.any():
                break
            alpha[pending] *= 0.5
        stalled = best_e >= ea
        p[active] = best_p
        err[active] = best_e
        if stalled.all():
            break
    J = distortion_point_jacobian(c, p)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    ok = (err <= tol) & (det > 0) & np.isfinite(p).all(axis=1)
    return p.reshape(shape), ok.reshape(shape[:-1])


def undistort_point(d, pd) -> np.ndarray:
    p, ok = undistort_points(d, np.asarray(pd, dtype=float).reshape(1, 2))
    if not ok[0]:
        raise NonConvergent(f"undistortion failed for normalized point {tuple(np.ravel(pd))}")
    return p[0]


# ---------------------------------------------------------------------------
# Projection and rays


def normalized_to_pixels(intr: Intrinsics, xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    return np.stack([intr.fx * xy[..., 0] + intr.cx, intr.fy * xy[..., 1] + intr.cy], axis=-1)


def pixels_to_normalized(intr: Intrinsics, uv) -> np.ndarray:
    uv = np.asarray(uv, dtype=float)
    return np.stack([(uv[..., 0] - intr.cx) / intr.fx, (uv[..., 1] - intr.cy) / intr.fy], axis=-1)


def project_points(cam: CameraModel, pose: Pose, X, *, strict: bool = True):
    """Project board points ``X`` (``(N,2)`` on the plane or ``(N,3)``) to pixels.

    With ``strict=False`` returns ``(uv, in_front)`` and leaves points behind
    the camera as NaN instead of raising.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] == 2:
        X = np.column_stack([X, np.zeros(len(X))])
    Xc = pose.apply(X)
    front = Xc[:, 2] > 0
    if strict and not front.all():
        raise BehindCamera(f"{int((~front).sum())} point(s) at non-positive depth")
    z = np.where(front, Xc[:, 2], np.nan)
    xy = Xc[:, :2] / z[:, None]
    uv = normalized_to_pixels(cam.intrinsics, apply_distortion(cam.distortion, xy))
    return uv if strict else (uv, front)


def project(cam: CameraModel, pose: Pose, X) -> np.ndarray:
    return project_points(cam, pose, np.reshape(X, (1, -1)))[0]


def pixel_rays(cam: CameraModel, uv):
    """Unit camera-frame directions for pixels; returns ``(dirs, converged)``."""
    xy_d = pixels_to_normalized(cam.intrinsics, uv)
    xy, ok = undistort_points(cam.distortion, xy_d)
    d = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True), ok


def pixel_ray(cam: CameraModel, pixel) -> np.ndarray:
    d, ok = pixel_rays(cam, np.asarray(pixel, dtype=float).reshape(1, 2))
    if not ok[0]:
        raise NonConvergent(f"pixel {tuple(np.ravel(pixel))} lies outside the invertible region")
    return d[0]


def intersect_board_plane(origin, direction, pose: Pose) -> np.ndarray:
    """Intersect a camera-frame ray with the board plane; returns board ``(x, y)`` in meters."""
    o = np.asarray(origin, dtype=float).reshape(3)
    d = np.asarray(direction, dtype=float).reshape(3)
    n = pose.rotation[:, 2]
    denom = n @ d
    if abs(denom) <= 1e-12:
        raise Parallel("ray is parallel to the board plane")
    lam = n @ (pose.translation - o) / denom
    if lam <= 0:
        raise BehindCamera("board plane intersection lies behind the ray origin")
    b = pose.rotation.T @ (o + lam * d - pose.translation)
    return b[:2]


# ---------------------------------------------------------------------------
# Camera presets (two lens types used by the benchmark)

RECTILINEAR_DISTORTION = Distortion.from_array([0.05, 0.02, 0.001, 0, 0, 0, 0, 0])
WIDE_DISTORTION = Distortion.from_array([0.5, 0.1, 0.03, 0, 0, 0, 0, 0])


def rectilinear_camera(scale: float = 1.0, distortion: Distortion | None = None) -> CameraModel:
    intr = Intrinsics(3000.0, 3000.0, 2048.0, 1536.0, 4096, 3072)
    cam = CameraModel(intr, RECTILINEAR_DISTORTION if distortion is None else distortion)
    return cam if scale == 1.0 else cam.scaled(scale)


def wide_camera(scale: float = 1.0, distortion: Distortion | None = None) -> CameraModel:
    intr = Intrinsics(600.0, 450.0, 320.0, 240.0, 640, 480)
    cam = CameraModel(intr, WIDE_DISTORTION if distortion is None else distortion)
    return cam if scale == 1.0 else cam.scaled(scale)


CAMERA_PRESETS = {"rectilinear": rectilinear_camera, "wide": wide_camera}


def camera_preset(name: str, scale: float = 1.0) -> CameraModel:
    try:
        return CAMERA_PRESETS[name](scale)
    except KeyError:
        raise InvalidSpec(f"unknown camera preset {name!r}; choose from {sorted(CAMERA_PRESETS)}") from None


def board_to_pixel_jacobian(cam: CameraModel, pose: Pose, board_xy) -> np.ndarray:
    """d(u, v)/d(board x, y) for points on the board plane, shape ``(N, 2, 2)``."""
    xy_b = np.atleast_2d(np.asarray(board_xy, dtype=float))
    X = np.column_stack([xy_b, np.zeros(len(xy_b))])
    Xc = pose.apply(X)
    z = Xc[:, 2]
    n = Xc[:, :2] / z[:, None]
    # d(normalized)/d(Xc)
    dn = np.zeros((len(X), 2, 3))
    dn[:, 0, 0] = 1.0 / z
    dn[:, 1, 1] = 1.0 / z
    dn[:, :, 2] = -n / z[:, None]
    Jd = distortion_point_jacobian(cam.distortion, n)
    F = np.diag([cam.intrinsics.fx, cam.intrinsics.fy])
    return F @ Jd @ dn @ pose.rotation[:, :2]
