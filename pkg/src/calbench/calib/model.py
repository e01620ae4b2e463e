"""Reprojection residuals and analytic Jacobians for plane-based calibration.

Parameter vector layout for a :class:`ViewsProblem`::

    [ free intrinsics (layout order) | view 0: rvec(3), t(3) | view 1: ... ]

Intrinsics are handled as the 12 "atoms" ``fx, fy, cx, cy`` followed by the
eight distortion coefficients; an :class:`IntrinsicLayout` says which atoms
are free.  The pseudo-atom ``f`` ties ``fx = f`` and ``fy = aspect * f``.
Residuals are ``projected - observed`` in pixels, view-major, interleaved
``(u, v)`` per point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from ..errors import InvalidSpec
from ..geometry import (CameraModel, Distortion, Intrinsics, Pose, apply_distortion, distortion_coeff_jacobian,
                        distortion_point_jacobian)
from ..measurement import ViewObservations

ATOMS = ("fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2", "k3", "k4", "k5", "k6")
_ATOM_INDEX = {n: i for i, n in enumerate(ATOMS)}


def camera_atoms(cam: CameraModel) -> np.ndarray:
    i = cam.intrinsics
    return np.concatenate([[i.fx, i.fy, i.cx, i.cy], cam.distortion.as_array()])


def atoms_to_camera(a: np.ndarray, width: int, height: int) -> CameraModel:
    return CameraModel(Intrinsics(float(a[0]), float(a[1]), float(a[2]), float(a[3]), width, height),
                       Distortion.from_array(a[4:]))


@dataclass(frozen=True)
class IntrinsicLayout:
    """Which intrinsic atoms are free; everything else stays at ``fixed``."""

    free: tuple[str, ...]
    fixed: tuple[float, ...] = (0.0,) * 12
    aspect: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(self.free))
        object.__setattr__(self, "fixed", tuple(float(v) for v in self.fixed))
        if len(self.fixed) != 12:
            raise InvalidSpec("fixed must hold 12 atoms")
        for n in self.free:
            if n != "f" and n not in _ATOM_INDEX:
                raise InvalidSpec(f"unknown intrinsic parameter {n!r}")
        if len(set(self.free)) != len(self.free):
            raise InvalidSpec("duplicate free parameter")
        if "f" in self.free and ({"fx", "fy"} & set(self.free)):
            raise InvalidSpec("'f' ties fx and fy; do not free them separately")

    @property
    def size(self) -> int:
        return len(self.free)

    def with_fixed(self, atoms) -> "IntrinsicLayout":
        return IntrinsicLayout(self.free, tuple(np.asarray(atoms, dtype=float)), self.aspect)

    def basis(self) -> np.ndarray:
        """d(atoms)/d(free), shape ``(12, size)``."""
        M = np.zeros((12, self.size))
        for k, n in enumerate(self.free):
            if n == "f":
                M[0, k] = 1.0
                M[1, k] = self.aspect
            else:
                M[_ATOM_INDEX[n], k] = 1.0
        return M

    def atoms(self, theta) -> np.ndarray:
        a = np.array(self.fixed)
        for n, v in zip(self.free, np.asarray(theta, dtype=float)):
            if n == "f":
                a[0] = v
                a[1] = self.aspect * v
            else:
                a[_ATOM_INDEX[n]] = v
        return a

    def theta(self, atoms) -> np.ndarray:
        a = np.asarray(atoms, dtype=float)
        return np.array([a[0] if n == "f" else a[_ATOM_INDEX[n]] for n in self.free])


ZHANG_PARAMS = ("fx", "fy", "cx", "cy", "k1", "k2")
FULL_PARAMS = ("fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2", "k3")
TSAI_PARAMS = ("f", "k1")


def rodrigues_batch(rvecs) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrices and right Jacobians of SO(3) for ``(V, 3)`` rotation vectors."""
    r = np.atleast_2d(np.asarray(rvecs, dtype=float))
    th2 = np.einsum("vi,vi->v", r, r)
    th = np.sqrt(th2)
    small = th < 1e-4
    safe = np.where(small, 1.0, th)
    # sin(th)/th, (1 - cos)/th^2, (th - sin)/th^3 with series near zero
    s1 = np.where(small, 1.0 - th2 / 6.0 + th2 * th2 / 120.0, np.sin(safe) / safe)
    a = np.where(small, 0.5 - th2 / 24.0 + th2 * th2 / 720.0, (1.0 - np.cos(safe)) / safe ** 2)
    b = np.where(small, 1.0 / 6.0 - th2 / 120.0 + th2 * th2 / 5040.0, (safe - np.sin(safe)) / safe ** 3)
    S = np.zeros((len(r), 3, 3))
    S[:, 0, 1], S[:, 0, 2] = -r[:, 2], r[:, 1]
    S[:, 1, 0], S[:, 1, 2] = r[:, 2], -r[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -r[:, 1], r[:, 0]
    S2 = S @ S
    eye = np.eye(3)
    R = eye + s1[:, None, None] * S + a[:, None, None] * S2
    Jr = eye - a[:, None, None] * S + b[:, None, None] * S2
    return R, Jr


def _skew_rows(X) -> np.ndarray:
    Vx = np.zeros((len(X), 3, 3))
    Vx[:, 0, 1], Vx[:, 0, 2] = -X[:, 2], X[:, 1]
    Vx[:, 1, 0], Vx[:, 1, 2] = X[:, 2], -X[:, 0]
    Vx[:, 2, 0], Vx[:, 2, 1] = -X[:, 1], X[:, 0]
    return Vx


def rotation_point_jacobian(rvec, X) -> tuple[np.ndarray, np.ndarray]:
    """``R @ X`` and its derivative with respect to the rotation vector, shape ``(N, 3, 3)``.

    Uses d(R v)/dr = -R [v]x J_r(r) with the right Jacobian of SO(3).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    R, Jr = rodrigues_batch(np.asarray(rvec, dtype=float).reshape(1, 3))
    return X @ R[0].T, -(R[0] @ _skew_rows(X)) @ Jr[0]


def project_atoms(a: np.ndarray, Xc: np.ndarray, jac: bool = True):
    """Pixels of camera-frame points under atoms ``a``.

    With ``jac`` also returns d(uv)/d(atoms) ``(N, 2, 12)`` and
    d(uv)/d(Xc) ``(N, 2, 3)``.
    """
    z = Xc[:, 2]
    n = Xc[:, :2] / z[:, None]
    dist = a[4:]
    d = apply_distortion(dist, n)
    f = a[:2]
    uv = d * f + a[2:4]
    if not jac:
        return uv
    N = len(Xc)
    Ja = np.zeros((N, 2, 12))
    Ja[:, 0, 0] = d[:, 0]
    Ja[:, 1, 1] = d[:, 1]
    Ja[:, 0, 2] = 1.0
    Ja[:, 1, 3] = 1.0
    Ja[:, :, 4:] = distortion_coeff_jacobian(dist, n) * f[None, :, None]
    dn = np.zeros((N, 2, 3))
    dn[:, 0, 0] = 1.0 / z
    dn[:, 1, 1] = 1.0 / z
    dn[:, :, 2] = -n / z[:, None]
    Jx = (distortion_point_jacobian(dist, n) * f[None, :, None]) @ dn
    return uv, Ja, Jx


def block_csr(values: np.ndarray, n_rows: int, n_params: int, col_index: np.ndarray) -> scipy.sparse.csr_matrix:
    """CSR matrix whose row ``k`` holds ``values[k]`` at columns ``col_index[k]`` (ascending)."""
    width = col_index.shape[1]
    indptr = np.arange(n_rows + 1) * width
    return scipy.sparse.csr_matrix((values.reshape(-1), col_index.reshape(-1), indptr), shape=(n_rows, n_params))


class ViewsProblem:
    """Joint reprojection problem for one camera observing a planar target in many views."""

    def __init__(self, views: list[ViewObservations], layout: IntrinsicLayout):
        if not views:
            raise InvalidSpec("no views")
        self.views = views
        self.layout = layout
        self.n_intr = layout.size
        self.n_views = len(views)
        self.n_params = self.n_intr + 6 * self.n_views
        self._X = np.concatenate([np.column_stack([v.object_xy, np.zeros(len(v))]) for v in views])
        self._vid = np.concatenate([np.full(len(v), k) for k, v in enumerate(views)])
        self._obs = np.concatenate([v.image_uv.ravel() for v in views])
        self._basis = layout.basis()
        ni = self.n_intr
        pose_cols = ni + 6 * self._vid[:, None] + np.arange(6)
        cols = np.hstack([np.broadcast_to(np.arange(ni), (len(self._X), ni)), pose_cols])
        self._cols = np.repeat(cols, 2, axis=0)

    @property
    def n_residuals(self) -> int:
        return len(self._obs)

    def pack(self, theta, poses: list[Pose]) -> np.ndarray:
        parts = [np.asarray(theta, dtype=float)]
        for p in poses:
            parts += [p.rvec, p.translation]
        return np.concatenate(parts)

    def unpack(self, x) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
        x = np.asarray(x, dtype=float)
        poses = x[self.n_intr:].reshape(-1, 6)
        return x[: self.n_intr], [(p[:3], p[3:]) for p in poses]

    def _camera_points(self, x):
        x = np.asarray(x, dtype=float)
        P = x[self.n_intr:].reshape(-1, 6)
        R, Jr = rodrigues_batch(P[:, :3])
        Rn = R[self._vid]
        RX = np.einsum("nij,nj->ni", Rn, self._X)
        return x[: self.n_intr], P, Rn, Jr, RX

    def residual(self, x) -> np.ndarray:
        theta, P, _, _, RX = self._camera_points(x)
        uv = project_atoms(self.layout.atoms(theta), RX + P[self._vid, 3:], jac=False)
        return uv.ravel() - self._obs

    def jacobian(self, x) -> scipy.sparse.csr_matrix:
        theta, P, Rn, Jr, RX = self._camera_points(x)
        _, Ja, Jx = project_atoms(self.layout.atoms(theta), RX + P[self._vid, 3:])
        dRX = -(Rn @ _skew_rows(self._X)) @ Jr[self._vid]
        ni = self.n_intr
        block = np.empty((len(RX), 2, ni + 6))
        block[:, :, :ni] = Ja @ self._basis
        block[:, :, ni:ni + 3] = Jx @ dRX
        block[:, :, ni + 3:] = Jx
        return block_csr(block, self.n_residuals, self.n_params, self._cols)


def numeric_jacobian(problem, x, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite differences with per-parameter step ``rel_step * max(|x_i|, 1)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(len(x)):
        h = rel_step * max(abs(x[i]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((problem.residual(xp) - problem.residual(xm)) / (2 * h))
    return np.column_stack(cols)
