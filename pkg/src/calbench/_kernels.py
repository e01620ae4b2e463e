"""Compiled per-sample kernels: board intensity and inverse-mapped rendering.

The board is described by a flat parameter table built in
:func:`calbench.patterns.pattern_table`; see that function for the layout.
"""

import math

import numpy as np
from numba import njit

KIND_CHECKER = 0
KIND_SYMMETRIC = 1
KIND_ASYMMETRIC = 2
KIND_CHARUCO = 3

# parameter table slots
P_KIND, P_ROWS, P_COLS, P_PITCH, P_RADIUS, P_X0, P_Y0 = 0, 1, 2, 3, 4, 5, 6
P_BXMIN, P_BXMAX, P_BYMIN, P_BYMAX, P_MARKER = 7, 8, 9, 10, 11
TABLE_SIZE = 12


@njit(cache=True)
def board_intensity(p, markers, bx, by):
    """Reflectance of the printed board at board coordinates (meters)."""
    kind = int(p[P_KIND])
    rows = int(p[P_ROWS])
    cols = int(p[P_COLS])
    pitch = p[P_PITCH]
    if kind == KIND_CHECKER or kind == KIND_CHARUCO:
        fx = (bx - p[P_X0]) / pitch
        fy = (p[P_Y0] - by) / pitch
        j = math.floor(fx)
        i = math.floor(fy)
        if i < 0 or j < 0 or i >= rows or j >= cols:
            return 1.0
        if (i + j) % 2 == 0:
            return 0.0
        if kind == KIND_CHECKER:
            return 1.0
        # white square carrying a marker; index counts white squares row-major
        k = (i * cols + j) // 2
        side = p[P_MARKER]
        off = 0.5 * (pitch - side)
        mx = (fx - j) * pitch - off
        my = (fy - i) * pitch - off
        if mx < 0.0 or my < 0.0 or mx >= side or my >= side:
            return 1.0
        nb = markers.shape[1]
        cell = side / (nb + 2)
        ci = int(my / cell)
        cj = int(mx / cell)
        if ci <= 0 or cj <= 0 or ci >= nb + 1 or cj >= nb + 1:
            return 0.0
        return float(markers[k, ci - 1, cj - 1])
    r2 = p[P_RADIUS] * p[P_RADIUS]
    if kind == KIND_SYMMETRIC:
        j = int(round((bx - p[P_X0]) / pitch))
        i = int(round((p[P_Y0] - by) / pitch))
        if i < 0 or j < 0 or i >= rows or j >= cols:
            return 1.0
        dx = bx - (p[P_X0] + j * pitch)
        dy = by - (p[P_Y0] - i * pitch)
        return 0.0 if dx * dx + dy * dy <= r2 else 1.0
    # asymmetric: row i centres at x0 + (2j + i%2) * pitch, y0 - i * pitch
    ic = int(round((p[P_Y0] - by) / pitch))
    for i in range(ic - 1, ic + 2):
        if i < 0 or i >= rows:
            continue
        odd = i % 2
        j = int(round(((bx - p[P_X0]) / pitch - odd) / 2.0))
        if j < 0 or j >= cols:
            continue
        dx = bx - (p[P_X0] + (2 * j + odd) * pitch)
        dy = by - (p[P_Y0] - i * pitch)
        if dx * dx + dy * dy <= r2:
            return 0.0
    return 1.0


@njit(cache=True)
def intensity_many(p, markers, xs, ys):
    out = np.empty(xs.shape[0])
    for n in range(xs.shape[0]):
        out[n] = board_intensity(p, markers, xs[n], ys[n])
    return out


@njit(cache=True)
def _distort(d, x, y):
    r2 = x * x + y * y
    r4 = r2 * r2
    r6 = r4 * r2
    num = 1.0 + d[0] * r2 + d[1] * r4 + d[4] * r6
    den = 1.0 + d[5] * r2 + d[6] * r4 + d[7] * r6
    rad = num / den
    xd = x * rad + 2.0 * d[2] * x * y + d[3] * (r2 + 2.0 * x * x)
    yd = y * rad + d[2] * (r2 + 2.0 * y * y) + 2.0 * d[3] * x * y
    return xd, yd


@njit(cache=True)
def _distort_jac(d, x, y):
    r2 = x * x + y * y
    r4 = r2 * r2
    r6 = r4 * r2
    num = 1.0 + d[0] * r2 + d[1] * r4 + d[4] * r6
    den = 1.0 + d[5] * r2 + d[6] * r4 + d[7] * r6
    rad = num / den
    dnum = d[0] + 2.0 * d[1] * r2 + 3.0 * d[4] * r4
    dden = d[5] + 2.0 * d[6] * r2 + 3.0 * d[7] * r4
    drad = (dnum * den - num * dden) / (den * den)
    a = rad + 2.0 * x * x * drad + 2.0 * d[2] * y + 6.0 * d[3] * x
    b = 2.0 * x * y * drad + 2.0 * d[2] * x + 2.0 * d[3] * y
    c = rad + 2.0 * y * y * drad + 6.0 * d[2] * y + 2.0 * d[3] * x
    return a, b, b, c


@njit(cache=True)
def undistort_scalar(d, xd, yd, x, y, max_iter, tol):
    """Damped Newton from the guess ``(x, y)``; returns ``(x, y, ok)``."""
    fx, fy = _distort(d, x, y)
    ex = fx - xd
    ey = fy - yd
    err = math.sqrt(ex * ex + ey * ey)
    it = 0
    while err > tol and it < max_iter:
        a, b, c, e = _distort_jac(d, x, y)
        det = a * e - b * c
        if det == 0.0 or not math.isfinite(det):
            return x, y, False
        sx = -(e * ex - b * ey) / det
        sy = -(-c * ex + a * ey) / det
        alpha = 1.0
        improved = False
        for _ in range(30):
            nx = x + alpha * sx
            ny = y + alpha * sy
            gx, gy = _distort(d, nx, ny)
            nex = gx - xd
            ney = gy - yd
            ne = math.sqrt(nex * nex + ney * ney)
            if ne < err:
                x, y, ex, ey, err = nx, ny, nex, ney, ne
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        it += 1
    if not (err <= tol):
        return x, y, False
    a, b, c, e = _distort_jac(d, x, y)
    return x, y, (a * e - b * c) > 0.0


@njit(cache=True)
def render_region(out, u0, u1, v0, v1, ss, fx, fy, cx, cy, dist, R, t, p, markers, gain, background):
    """Fill ``out[v0:v1, u0:u1]`` with the supersampled board radiance (0..1 scale).

    Each pixel averages ``ss x ss`` samples.  Samples whose ray misses the
    board, hits it from behind, or fails to undistort take the background.
    """
    has_dist = False
    for k in range(8):
        if dist[k] != 0.0:
            has_dist = True
    nx_ = R[0, 2]
    ny_ = R[1, 2]
    nz_ = R[2, 2]
    nt = nx_ * t[0] + ny_ * t[1] + nz_ * t[2]
    inv = 1.0 / (ss * ss)
    for i in range(v0, v1):
        gx = 0.0
        gy = 0.0
        have_guess = False
        for j in range(u0, u1):
            acc = 0.0
            for a in range(ss):
                v = i + (a + 0.5) / ss
                yd = (v - cy) / fy
                for b in range(ss):
                    u = j + (b + 0.5) / ss
                    xd = (u - cx) / fx
                    if has_dist:
                        if not have_guess:
                            gx, gy = xd, yd
                        x, y, ok = undistort_scalar(dist, xd, yd, gx, gy, 50, 1e-12)
                        if not ok:
                            # retry from the distorted point before giving up
                            x, y, ok = undistort_scalar(dist, xd, yd, xd, yd, 50, 1e-12)
                        if not ok:
                            acc += background
                            have_guess = False
                            continue
                        gx, gy = x, y
                        have_guess = True
                    else:
                        x, y = xd, yd
                    denom = nx_ * x + ny_ * y + nz_
                    if abs(denom) <= 1e-12:
                        acc += background
                        continue
                    lam = nt / denom
                    if lam <= 0.0:
                        acc += background
                        continue
                    # board coordinates: R^T (lam * ray - t)
                    qx = lam * x - t[0]
                    qy = lam * y - t[1]
                    qz = lam - t[2]
                    bx = R[0, 0] * qx + R[1, 0] * qy + R[2, 0] * qz
                    by = R[0, 1] * qx + R[1, 1] * qy + R[2, 1] * qz
                    if bx < p[P_BXMIN] or bx > p[P_BXMAX] or by < p[P_BYMIN] or by > p[P_BYMAX]:
                        acc += background
                        continue
                    acc += gain * board_intensity(p, markers, bx, by)
            out[i, j] = acc * inv


@njit(cache=True)
def undistort_grid(dist, fx, fy, cx, cy, width, height, ss, out_xy, out_ok):
    """Undistorted normalized coordinates of every subsample of a ``width x height`` image."""
    for r in range(height * ss):
        v = (r + 0.5) / ss
        yd = (v - cy) / fy
        gx = 0.0
        gy = 0.0
        have_guess = False
        for c in range(width * ss):
            u = (c + 0.5) / ss
            xd = (u - cx) / fx
            if not have_guess:
                gx, gy = xd, yd
            x, y, ok = undistort_scalar(dist, xd, yd, gx, gy, 50, 1e-12)
            if not ok:
                x, y, ok = undistort_scalar(dist, xd, yd, xd, yd, 50, 1e-12)
            out_xy[r, c, 0] = x
            out_xy[r, c, 1] = y
            out_ok[r, c] = ok
            have_guess = ok
            if ok:
                gx, gy = x, y


@njit(cache=True)
def render_region_cached(out, u0, u1, v0, v1, ss, grid_xy, grid_ok, R, t, p, markers, gain, background):
    """As :func:`render_region`, reading rays from a precomputed undistortion grid."""
    nx_ = R[0, 2]
    ny_ = R[1, 2]
    nz_ = R[2, 2]
    nt = nx_ * t[0] + ny_ * t[1] + nz_ * t[2]
    bxmin = p[P_BXMIN]
    bxmax = p[P_BXMAX]
    bymin = p[P_BYMIN]
    bymax = p[P_BYMAX]
    inv = 1.0 / (ss * ss)
    for i in range(v0, v1):
        for j in range(u0, u1):
            acc = 0.0
            for a in range(ss):
                r = i * ss + a
                for b in range(ss):
                    c = j * ss + b
                    if not grid_ok[r, c]:
                        acc += background
                        continue
                    x = grid_xy[r, c, 0]
                    y = grid_xy[r, c, 1]
                    denom = nx_ * x + ny_ * y + nz_
                    if abs(denom) <= 1e-12:
                        acc += background
                        continue
                    lam = nt / denom
                    if lam <= 0.0:
                        acc += background
                        continue
                    qx = lam * x - t[0]
                    qy = lam * y - t[1]
                    qz = lam - t[2]
                    bx = R[0, 0] * qx + R[1, 0] * qy + R[2, 0] * qz
                    by = R[0, 1] * qx + R[1, 1] * qy + R[2, 1] * qz
                    if bx < bxmin or bx > bxmax or by < bymin or by > bymax:
                        acc += background
                        continue
                    acc += gain * board_intensity(p, markers, bx, by)
            out[i, j] = acc * inv
