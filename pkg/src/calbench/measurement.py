"""2D-3D correspondences for the solvers.

Oracle mode projects control points analytically and adds Gaussian detector
noise.  Image mode measures rendered captures, seeded from perturbed ground
truth: blob centroids for circle grids and saddle refinement for corners.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidSpec, Missing, NotASaddle, TooFewPoints
from .geometry import CameraModel, Pose, board_to_pixel_jacobian, project_points
from .patterns import PatternKind, PatternSpec, circle_radius, object_points_array
from .render import visible_points

SOURCES = ("oracle", "oracle-centroid", "image")

# detector noise standing in for each environment in oracle modes, px
ORACLE_SIGMA = {"clean": 0.1, "noisy": 0.5}
SEED_JITTER_PX = 3.0


@dataclass(frozen=True)
class Correspondence:
    point_id: int
    object_xy: tuple[float, float]
    image_uv: tuple[float, float]
    source: str


@dataclass(eq=False)
class ViewObservations:
    """All correspondences of one view, stored column-wise."""

    frame_index: int
    point_ids: np.ndarray  # (n,) int
    object_xy: np.ndarray  # (n, 2) board meters
    image_uv: np.ndarray  # (n, 2) pixels
    source: str = "oracle"
    gt_pose: Pose | None = None  # evaluation only; solvers never read it

    def __post_init__(self):
        self.point_ids = np.asarray(self.point_ids, dtype=np.int64)
        self.object_xy = np.asarray(self.object_xy, dtype=float).reshape(-1, 2)
        self.image_uv = np.asarray(self.image_uv, dtype=float).reshape(-1, 2)
        if not (len(self.point_ids) == len(self.object_xy) == len(self.image_uv)):
            raise InvalidSpec("point_ids, object_xy and image_uv must have equal length")
        if not np.isfinite(self.image_uv).all():
            raise InvalidSpec("image points must be finite")
        if self.source not in SOURCES:
            raise InvalidSpec(f"unknown source {self.source!r}")

    def __len__(self):
        return len(self.point_ids)

    @property
    def correspondences(self) -> list[Correspondence]:
        return [Correspondence(int(i), (float(x), float(y)), (float(u), float(v)), self.source)
                for i, (x, y), (u, v) in zip(self.point_ids, self.object_xy, self.image_uv)]

    def subset(self, mask) -> "ViewObservations":
        return ViewObservations(self.frame_index, self.point_ids[mask], self.object_xy[mask],
                                self.image_uv[mask], self.source, self.gt_pose)

    def to_dict(self) -> dict:
        return {
            "frame": self.frame_index,
            "source": self.source,
            "points": [{"id": int(i), "x": float(x), "y": float(y), "u": float(u), "v": float(v)}
                       for i, (x, y), (u, v) in zip(self.point_ids, self.object_xy, self.image_uv)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ViewObservations":
        pts = d["points"]
        return cls(d["frame"], [p["id"] for p in pts], [(p["x"], p["y"]) for p in pts],
                   [(p["u"], p["v"]) for p in pts], d.get("source", "oracle"))


def _finish(frame_index, ids, spec, uv, source, pose) -> ViewObservations:
    if len(ids) < 4:
        raise TooFewPoints(f"frame {frame_index}: only {len(ids)} correspondences")
    return ViewObservations(frame_index, ids, object_points_array(spec)[ids], uv, source, pose)


def oracle_points(cam: CameraModel, pose: Pose, spec: PatternSpec, sigma: float = 0.0, seed=0,
                  frame_index: int = 0) -> ViewObservations:
    """Analytic projections plus ``N(0, sigma^2 I)`` pixel noise; invisible points dropped."""
    if sigma < 0:
        raise InvalidSpec("sigma must be non-negative")
    ids, uv = visible_points(cam, pose, spec)
    if sigma > 0:
        uv = uv + np.random.default_rng(seed).normal(0.0, sigma, size=uv.shape)
    return _finish(frame_index, ids, spec, uv, "oracle", pose)


def disc_samples(radius: float, n_min: int) -> np.ndarray:
    """Equal-area polar sample grid of a disc, symmetric under point reflection."""
    n_theta = max(8, 2 * int(math.ceil(math.sqrt(n_min * math.pi) / 2)))
    n_r = max(2, int(math.ceil(n_min / n_theta)))
    r = radius * np.sqrt((np.arange(n_r) + 0.5) / n_r)
    th = 2 * math.pi * (np.arange(n_theta) + 0.5) / n_theta
    R, T = np.meshgrid(r, th, indexing="ij")
    return np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])


def projected_disc_centroid(cam: CameraModel, pose: Pose, center_xy, radius: float,
                            samples_per_circle: int = 2000) -> np.ndarray:
    """Image-area centroid of the projected disc (board samples weighted by the area Jacobian)."""
    pts = np.asarray(center_xy, dtype=float) + disc_samples(radius, samples_per_circle)
    uv = project_points(cam, pose, pts)
    J = board_to_pixel_jacobian(cam, pose, pts)
    w = np.abs(J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])
    return (w[:, None] * uv).sum(axis=0) / w.sum()


def centroid_oracle_points(cam: CameraModel, pose: Pose, spec: PatternSpec, samples_per_circle: int = 2000,
                           sigma: float = 0.0, seed=0, frame_index: int = 0) -> ViewObservations:
    """Circle-grid observations at the centroid of each projected disc instead of its projected centre."""
    if not spec.kind.is_circle_grid:
        raise InvalidSpec("centroid oracle needs a circle grid")
    ids, _ = visible_points(cam, pose, spec)
    X = object_points_array(spec)
    r = circle_radius(spec)
    uv = np.array([projected_disc_centroid(cam, pose, X[i], r, samples_per_circle) for i in ids]).reshape(-1, 2)
    if sigma > 0:
        uv = uv + np.random.default_rng(seed).normal(0.0, sigma, size=uv.shape)
    return _finish(frame_index, ids, spec, uv, "oracle-centroid", pose)


# ---------------------------------------------------------------------------
# Image-mode detectors


def otsu_threshold(values) -> float:
    v = np.asarray(values, dtype=float).ravel()
    hist, edges = np.histogram(v, bins=256, range=(0.0, 256.0))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    m0 = np.cumsum(hist * centers)
    mt = m0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mt * w0 / w0[-1] - m0) ** 2 / (w0 * w1)
    between[~np.isfinite(between)] = -1.0
    return float(edges[int(np.argmax(between)) + 1])


def _seed_spacing(uv: np.ndarray) -> np.ndarray:
    if len(uv) < 2:
        return np.full(len(uv), 20.0)
    d = np.linalg.norm(uv[:, None, :] - uv[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1)


def detect_blobs(image: np.ndarray, spec: PatternSpec, seed_ids, seed_uv, strict: bool = True,
                 jitter: float = SEED_JITTER_PX):
    """Dark-blob centroids near each seed.

    Each seed gets a local window reaching half the typical seed spacing plus
    the seed ``jitter`` bound; the window is Otsu-thresholded, the dark component nearest the seed
    (within the gate) is kept, and its centroid is taken with fractional
    coverage weights so antialiased edges count proportionally.

    Returns ``(ids, centroids)``.  Unmatched seeds raise :class:`Missing` when
    ``strict``; otherwise they are left out.
    """
    if not spec.kind.is_circle_grid:
        raise InvalidSpec("blob detection needs a circle grid")
    img = np.asarray(image, dtype=float)
    H, W = img.shape
    seed_ids = np.asarray(seed_ids)
    seed_uv = np.asarray(seed_uv, dtype=float).reshape(-1, 2)
    # jittered seeds understate local spacing, so use a robust global figure
    sp = float(np.median(_seed_spacing(seed_uv)))
    half = max(3, int(math.ceil(0.5 * sp + jitter)))
    gate = max(0.5 * sp, 2.0)
    found_ids, found_uv, missing = [], [], []
    for sid, (u, v) in zip(seed_ids, seed_uv):
        j0, j1 = int(math.floor(u)) - half, int(math.floor(u)) + half + 1
        i0, i1 = int(math.floor(v)) - half, int(math.floor(v)) + half + 1
        if j0 < 0 or i0 < 0 or j1 > W or i1 > H:
            missing.append(int(sid))
            continue
        win = img[i0:i1, j0:j1]
        if win.max() - win.min() < 10.0:
            missing.append(int(sid))
            continue
        thr = otsu_threshold(win)
        dark = win < thr
        labels, n = ndimage.label(dark)
        if n == 0:
            missing.append(int(sid))
            continue
        idx = np.arange(1, n + 1)
        cms = np.array(ndimage.center_of_mass(dark, labels, idx)).reshape(-1, 2)
        dist = np.hypot(cms[:, 1] + 0.5 + j0 - u, cms[:, 0] + 0.5 + i0 - v)
        k = int(np.argmin(dist))
        if dist[k] > gate:
            missing.append(int(sid))
            continue
        # antialiased rim of the chosen blob, excluding pixels nearer other blobs
        others = ndimage.binary_dilation(dark & (labels != idx[k]), iterations=1)
        comp = ndimage.binary_dilation(labels == idx[k], iterations=2) & ~others
        bright = float(np.median(win[~dark])) if (~dark).any() else float(win.max())
        darkv = float(np.median(win[labels == idx[k]]))
        if bright - darkv <= 0:
            missing.append(int(sid))
            continue
        w = np.clip((bright - win) / (bright - darkv), 0.0, 1.0) * comp
        ii, jj = np.nonzero(w)
        ww = w[ii, jj]
        found_ids.append(int(sid))
        found_uv.append(((jj + 0.5 + j0) @ ww / ww.sum(), (ii + 0.5 + i0) @ ww / ww.sum()))
    if missing and strict:
        raise Missing(missing)
    return np.array(found_ids, dtype=np.int64), np.array(found_uv, dtype=float).reshape(-1, 2)


def refine_saddle(image: np.ndarray, approx, window: int = 5, max_iter: int = 20, smooth: float = 1.0,
                  min_fit: float = 0.3) -> np.ndarray:
    """Sub-pixel X-corner location by iterated local quadratic fits.

    The patch around the current estimate is resampled (bilinear, after a
    light Gaussian blur), a Gaussian-weighted quadratic surface is fitted and
    the estimate moves to that surface's stationary point.  The result is
    rejected unless the Hessian is indefinite and the quadratic explains at
    least ``min_fit`` of the weighted patch variance.
    """
    img = np.asarray(image, dtype=float)
    H, W = img.shape
    c = np.asarray(approx, dtype=float).reshape(2).copy()
    w = int(window)
    margin = w + 3 + int(math.ceil(3 * smooth))
    j0, i0 = int(math.floor(c[0])) - margin, int(math.floor(c[1])) - margin
    j1, i1 = int(math.floor(c[0])) + margin + 1, int(math.floor(c[1])) + margin + 1
    if j0 < 0 or i0 < 0 or j1 > W or i1 > H:
        raise InvalidSpec(f"saddle window around {tuple(c)} leaves the image")
    patch = img[i0:i1, j0:j1]
    if smooth > 0:
        patch = ndimage.gaussian_filter(patch, smooth, mode="nearest")
    d = np.arange(-w, w + 1, dtype=float)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    dx, dy = dx.ravel(), dy.ravel()
    sw = np.sqrt(np.exp(-(dx ** 2 + dy ** 2) / (2 * (0.5 * w) ** 2)))
    A = np.column_stack([dx * dx, dx * dy, dy * dy, dx, dy, np.ones_like(dx)]) * sw[:, None]
    start = c.copy()
    for _ in range(max_iter):
        # array coordinates of pixel centres are (coord - 0.5)
        rows = c[1] - 0.5 - i0 + dy
        cols = c[0] - 0.5 - j0 + dx
        vals = ndimage.map_coordinates(patch, [rows, cols], order=1, mode="nearest")
        b = vals * sw
        coef, *_ = np.linalg.lstsq(A, b, rcond=None)
        a, bxy, cc, e, f, _ = coef
        hess = np.array([[2 * a, bxy], [bxy, 2 * cc]])
        det = np.linalg.det(hess)
        resid = b - A @ coef
        centred = b - sw * (b @ sw) / (sw @ sw)
        fit = 1.0 - (resid @ resid) / max(centred @ centred, 1e-300)
        if det >= 0 or fit < min_fit:
            raise NotASaddle(f"no saddle near {tuple(np.round(start, 2))} (det={det:.3g}, fit={fit:.2f})")
        step = np.linalg.solve(hess, -np.array([e, f]))
        if not np.isfinite(step).all() or np.abs(step).max() > w:
            raise NotASaddle(f"saddle estimate left the window near {tuple(np.round(start, 2))}")
        c = c + step
        if np.abs(c - start).max() > margin - w - 1:
            raise NotASaddle(f"saddle drifted away from seed {tuple(np.round(start, 2))}")
        if np.abs(step).max() < 1e-4:
            break
    return c


def corner_window(point_uv: np.ndarray, fraction: float = 0.35, lo: int = 2, hi: int = 12) -> np.ndarray:
    """Per-corner window half-size from the local corner spacing."""
    sp = _seed_spacing(np.asarray(point_uv, dtype=float).reshape(-1, 2))
    return np.clip(np.floor(fraction * sp), lo, hi).astype(int)


def coarse_saddle(image: np.ndarray, seed, search: float, scale: float = 1.5) -> np.ndarray:
    """Pixel with the strongest saddle response ``Ixy^2 - Ixx Iyy`` within ``search`` px of ``seed``."""
    img = np.asarray(image, dtype=float)
    H, W = img.shape
    s = np.asarray(seed, dtype=float).reshape(2)
    m = int(math.ceil(search + 4 * scale)) + 1
    j0, i0 = max(0, int(math.floor(s[0])) - m), max(0, int(math.floor(s[1])) - m)
    j1, i1 = min(W, int(math.floor(s[0])) + m + 1), min(H, int(math.floor(s[1])) + m + 1)
    patch = img[i0:i1, j0:j1]
    ixx = ndimage.gaussian_filter(patch, scale, order=(0, 2), mode="nearest")
    iyy = ndimage.gaussian_filter(patch, scale, order=(2, 0), mode="nearest")
    ixy = ndimage.gaussian_filter(patch, scale, order=(1, 1), mode="nearest")
    resp = ixy ** 2 - ixx * iyy
    ii, jj = np.mgrid[i0:i1, j0:j1]
    resp[np.hypot(jj + 0.5 - s[0], ii + 0.5 - s[1]) > search] = -np.inf
    k = np.unravel_index(int(np.argmax(resp)), resp.shape)
    return np.array([jj[k] + 0.5, ii[k] + 0.5])


def locate_saddle(image: np.ndarray, seed, window: int, search: float = SEED_JITTER_PX * math.sqrt(2.0) + 1.0):
    """Coarse saddle-response peak near ``seed`` followed by :func:`refine_saddle`."""
    scale = max(1.0, 0.4 * window)
    start = coarse_saddle(image, seed, search, scale)
    return refine_saddle(image, start, window)


def image_points(image: np.ndarray, cam: CameraModel, pose: Pose, spec: PatternSpec, seed=0,
                 frame_index: int = 0, jitter: float = SEED_JITTER_PX) -> ViewObservations:
    """Measure a rendered capture; seeds are ground truth plus uniform jitter up to ``jitter`` px."""
    ids, uv = visible_points(cam, pose, spec)
    rng = np.random.default_rng(seed)
    seeds = uv + rng.uniform(-jitter, jitter, size=uv.shape)
    if spec.kind.is_circle_grid:
        fid, fuv = detect_blobs(image, spec, ids, seeds, strict=False, jitter=jitter)
    else:
        # ChArUco marker borders sit close to each corner, so keep the fit tighter
        wins = corner_window(uv, 0.25 if spec.kind is PatternKind.CHARUCO else 0.35)
        fid, fuv = [], []
        for i, s, w in zip(ids, seeds, wins):
            try:
                fuv.append(locate_saddle(image, s, int(w)))
                fid.append(int(i))
            except (NotASaddle, InvalidSpec):
                continue
        fid = np.array(fid, dtype=np.int64)
        fuv = np.array(fuv, dtype=float).reshape(-1, 2)
    return _finish(frame_index, fid, spec, fuv, "image", pose)
