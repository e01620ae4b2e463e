"""Normalized DLT homography between the board plane and the image."""

from __future__ import annotations

import numpy as np

from ..errors import Degenerate


def normalizing_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity taking ``pts`` to zero mean and mean distance sqrt(2)."""
    c = pts.mean(axis=0)
    dist = np.linalg.norm(pts - c, axis=1).mean()
    if dist <= 0:
        raise Degenerate("points coincide")
    s = np.sqrt(2.0) / dist
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def apply_homography(H: np.ndarray, pts) -> np.ndarray:
    p = np.asarray(pts, dtype=float)
    q = p @ H[:, :2].T + H[:, 2]
    return q[:, :2] / q[:, 2:3]


def estimate_homography(src, dst, cond_tol: float = 1e-9) -> np.ndarray:
    """``H`` with ``dst ~ H @ [src, 1]``, from at least four point pairs.

    Raises :class:`Degenerate` when the points do not pin down a homography
    (fewer than four, or collinear in either set).
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) != len(dst):
        raise Degenerate("source and destination counts differ")
    if len(src) < 4:
        raise Degenerate(f"need at least 4 points, got {len(src)}")
    Ts = normalizing_transform(src)
    Td = normalizing_transform(dst)
    s = src @ Ts[:2, :2].T + Ts[:2, 2]
    d = dst @ Td[:2, :2].T + Td[:2, 2]
    for pts in (s, d):
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[1] <= cond_tol * sv[0]:
            raise Degenerate("points are collinear")
    n = len(s)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = s
    A[0::2, 2] = 1.0
    A[0::2, 6:8] = -d[:, :1] * s
    A[0::2, 8] = -d[:, 0]
    A[1::2, 3:5] = s
    A[1::2, 5] = 1.0
    A[1::2, 6:8] = -d[:, 1:2] * s
    A[1::2, 8] = -d[:, 1]
    _, sv, vt = np.linalg.svd(A)
    if sv[-2] <= cond_tol * sv[0]:
        raise Degenerate("homography is not uniquely determined")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.solve(Td, Hn @ Ts)
    if abs(H[2, 2]) > 1e-12:
        H = H / H[2, 2]
    else:
        H = H / np.linalg.norm(H)
    return H
