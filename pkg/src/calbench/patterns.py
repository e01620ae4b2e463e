"""Calibration targets: control points, printed intensity, marker dictionaries, PNG export."""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from PIL import Image

from . import _kernels as K
from .errors import Exhausted, InvalidSpec

MAX_PNG_SIDE = 1 << 15
MAX_PNG_PIXELS = 1 << 28


class PatternKind(str, Enum):
    CHECKERBOARD = "checkerboard"
    SYMMETRIC_CIRCLES = "symmetric_circles"
    ASYMMETRIC_CIRCLES = "asymmetric_circles"
    CHARUCO = "charuco"

    @property
    def short(self) -> str:
        return _SHORT[self]

    @property
    def is_circle_grid(self) -> bool:
        return self in (PatternKind.SYMMETRIC_CIRCLES, PatternKind.ASYMMETRIC_CIRCLES)


_SHORT = {
    PatternKind.CHECKERBOARD: "ch",
    PatternKind.SYMMETRIC_CIRCLES: "sc",
    PatternKind.ASYMMETRIC_CIRCLES: "ac",
    PatternKind.CHARUCO: "cu",
}
_KIND_CODE = {
    PatternKind.CHECKERBOARD: K.KIND_CHECKER,
    PatternKind.SYMMETRIC_CIRCLES: K.KIND_SYMMETRIC,
    PatternKind.ASYMMETRIC_CIRCLES: K.KIND_ASYMMETRIC,
    PatternKind.CHARUCO: K.KIND_CHARUCO,
}


@dataclass(frozen=True)
class PatternSpec:
    """A printed calibration board.  Lengths are in millimeters.

    ``rows``/``cols`` count squares for checkerboards and ChArUco boards, and
    circles for circle grids.  For the asymmetric grid ``circle_spacing`` is
    the nearest-neighbour (diagonal) distance between staggered rows; each
    row holds ``cols`` circles and same-row neighbours are ``spacing*sqrt(2)``
    apart.
    """

    kind: PatternKind
    rows: int
    cols: int
    checker_width: float | None = None
    circle_diameter: float | None = None
    circle_spacing: float | None = None
    marker_dictionary_seed: int = 42
    marker_bits: int = 7
    marker_min_hamming: int = 12
    marker_ratio: float = 0.7
    quiet_zone: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PatternKind(self.kind))
        min_count = 2 if self.kind in (PatternKind.CHECKERBOARD, PatternKind.CHARUCO) else 3
        if int(self.rows) != self.rows or int(self.cols) != self.cols:
            raise InvalidSpec("rows and cols must be integers")
        if self.rows < min_count or self.cols < min_count:
            raise InvalidSpec(f"{self.kind.value} needs rows, cols >= {min_count}, got {self.rows}x{self.cols}")
        if self.quiet_zone < 0:
            raise InvalidSpec("quiet_zone must be non-negative")
        if self.kind in (PatternKind.CHECKERBOARD, PatternKind.CHARUCO):
            if not self.checker_width or self.checker_width <= 0:
                raise InvalidSpec("checker_width (mm) must be positive")
            if self.kind is PatternKind.CHARUCO:
                if self.marker_bits < 3:
                    raise InvalidSpec("marker_bits must be >= 3")
                if not 0 < self.marker_ratio < 1:
                    raise InvalidSpec("marker_ratio must lie in (0, 1)")
        else:
            if not self.circle_diameter or not self.circle_spacing:
                raise InvalidSpec("circle grids need circle_diameter and circle_spacing (mm)")
            if not 0 < self.circle_diameter < self.circle_spacing:
                raise InvalidSpec("need 0 < circle_diameter < circle_spacing")
            if self.kind is PatternKind.ASYMMETRIC_CIRCLES and self.circle_diameter >= self.circle_spacing:
                raise InvalidSpec("circles would overlap")

    @property
    def name(self) -> str:
        return f"{self.rows}x{self.cols}-{self.kind.short}"

    @property
    def n_white_squares(self) -> int:
        return (self.rows * self.cols) // 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["units"] = "mm"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PatternSpec":
        d = dict(d)
        units = d.pop("units", "mm")
        if units != "mm":
            raise InvalidSpec(f"pattern specs are in millimeters, got units={units!r}")
        return cls(**d)


@dataclass(frozen=True)
class ControlPoint:
    id: int
    board_xy: tuple[float, float]
    kind: str  # "corner" | "circle-center"


@dataclass(frozen=True, eq=False)
class MarkerDictionary:
    bits: np.ndarray  # (count, n, n) uint8, 1 = white
    min_hamming: int

    def __len__(self):
        return len(self.bits)


# ---------------------------------------------------------------------------
# Paper board presets

def checkerboard_9x12() -> PatternSpec:
    return PatternSpec(PatternKind.CHECKERBOARD, 9, 12, checker_width=15.0)


def symmetric_circles_10x10() -> PatternSpec:
    return PatternSpec(PatternKind.SYMMETRIC_CIRCLES, 10, 10, circle_diameter=7.0, circle_spacing=15.0)


def asymmetric_circles_9x10() -> PatternSpec:
    return PatternSpec(PatternKind.ASYMMETRIC_CIRCLES, 9, 10, circle_diameter=9.0, circle_spacing=22.0)


def charuco_9x12() -> PatternSpec:
    return PatternSpec(PatternKind.CHARUCO, 9, 12, checker_width=15.0)


PATTERN_PRESETS = {
    "ch": checkerboard_9x12,
    "sc": symmetric_circles_10x10,
    "ac": asymmetric_circles_9x10,
    "cu": charuco_9x12,
}


# ---------------------------------------------------------------------------
# Geometry

def _layout(spec: PatternSpec):
    """Grid reference (x0, y0), pitch and pattern-region bounds, all in meters."""
    if spec.kind in (PatternKind.CHECKERBOARD, PatternKind.CHARUCO):
        s = spec.checker_width * 1e-3
        w, h = spec.cols * s, spec.rows * s
        return -w / 2, h / 2, s, (-w / 2, w / 2, -h / 2, h / 2)
    if spec.kind is PatternKind.SYMMETRIC_CIRCLES:
        s = spec.circle_spacing * 1e-3
        x0 = -(spec.cols - 1) / 2 * s
        y0 = (spec.rows - 1) / 2 * s
        return x0, y0, s, (x0 - s / 2, -x0 + s / 2, -y0 - s / 2, y0 + s / 2)
    s = spec.circle_spacing * 1e-3 / math.sqrt(2.0)
    odd_rows = spec.rows // 2
    mean_x = ((spec.cols - 1) + odd_rows / spec.rows) * s
    x0 = -mean_x
    y0 = (spec.rows - 1) / 2 * s
    xmax = x0 + (2 * (spec.cols - 1) + (1 if spec.rows > 1 else 0)) * s
    return x0, y0, s, (x0 - s, xmax + s, -y0 - s, y0 + s)


def board_bounds(spec: PatternSpec) -> tuple[float, float, float, float]:
    """Physical board extent ``(xmin, xmax, ymin, ymax)`` including the quiet zone, meters."""
    _, _, _, (x0, x1, y0, y1) = _layout(spec)
    q = spec.quiet_zone * 1e-3
    return x0 - q, x1 + q, y0 - q, y1 + q


@lru_cache(maxsize=64)
def _points_cached(spec: PatternSpec) -> tuple[np.ndarray, str]:
    x0, y0, s, _ = _layout(spec)
    if spec.kind in (PatternKind.CHECKERBOARD, PatternKind.CHARUCO):
        i, j = np.meshgrid(np.arange(1, spec.rows), np.arange(1, spec.cols), indexing="ij")
        xy = np.column_stack([x0 + j.ravel() * s, y0 - i.ravel() * s])
        return xy, "corner"
    i, j = np.meshgrid(np.arange(spec.rows), np.arange(spec.cols), indexing="ij")
    i, j = i.ravel(), j.ravel()
    if spec.kind is PatternKind.SYMMETRIC_CIRCLES:
        xy = np.column_stack([x0 + j * s, y0 - i * s])
    else:
        xy = np.column_stack([x0 + (2 * j + i % 2) * s, y0 - i * s])
    return xy, "circle-center"


def object_points_array(spec: PatternSpec) -> np.ndarray:
    """Control point positions as an ``(N, 2)`` array in id order (row-major, top row first)."""
    xy, _ = _points_cached(spec)
    out = xy.copy()
    out.setflags(write=False)
    return out


def object_points(spec: PatternSpec) -> list[ControlPoint]:
    xy, kind = _points_cached(spec)
    return [ControlPoint(k, (float(x), float(y)), kind) for k, (x, y) in enumerate(xy)]


def circle_radius(spec: PatternSpec) -> float:
    if not spec.kind.is_circle_grid:
        raise InvalidSpec(f"{spec.kind.value} has no circles")
    return spec.circle_diameter * 1e-3 / 2


# ---------------------------------------------------------------------------
# Markers

def _rotations(bits: np.ndarray) -> list[np.ndarray]:
    return [np.rot90(bits, k) for k in range(4)]


def rotated_hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Minimum Hamming distance between ``a`` and the four rotations of ``b``."""
    return min(int(np.count_nonzero(a != r)) for r in _rotations(b))


def generate_marker_dictionary(seed: int, count: int, min_hamming: int = 12, bits: int = 7,
                               max_attempts: int | None = None) -> MarkerDictionary:
    """Rejection-sample ``count`` rotation-distinct ``bits x bits`` markers."""
    if count < 0:
        raise InvalidSpec("count must be non-negative")
    if count > 2 ** (bits * bits):
        raise Exhausted(f"only 2^{bits * bits} distinct {bits}x{bits} grids exist, {count} requested")
    if max_attempts is None:
        max_attempts = 200 * count + 10_000
    rng = np.random.default_rng(seed)
    accepted: list[np.ndarray] = []
    # flattened rotations of accepted markers, for vectorised distance checks
    rot_bank = np.empty((0, bits * bits), dtype=np.uint8)
    attempts = 0
    while len(accepted) < count:
        if attempts >= max_attempts:
            raise Exhausted(
                f"found {len(accepted)} of {count} markers with min Hamming {min_hamming} "
                f"after {attempts} attempts"
            )
        attempts += 1
        cand = rng.integers(0, 2, size=(bits, bits), dtype=np.uint8)
        rots = _rotations(cand)
        if any(np.count_nonzero(cand != r) < min_hamming for r in rots[1:]):
            continue
        if len(rot_bank) and np.count_nonzero(rot_bank != cand.ravel(), axis=1).min() < min_hamming:
            continue
        accepted.append(cand)
        rot_bank = np.vstack([rot_bank, np.stack([r.ravel() for r in rots])])
    arr = np.array(accepted, dtype=np.uint8).reshape(count, bits, bits)
    arr.setflags(write=False)
    return MarkerDictionary(arr, min_hamming)


@lru_cache(maxsize=16)
def _markers_for(spec: PatternSpec) -> np.ndarray:
    if spec.kind is not PatternKind.CHARUCO:
        return np.zeros((1, 1, 1), dtype=np.uint8)
    d = generate_marker_dictionary(spec.marker_dictionary_seed, spec.n_white_squares,
                                   spec.marker_min_hamming, spec.marker_bits)
    return np.ascontiguousarray(d.bits)


def marker_dictionary_for(spec: PatternSpec) -> MarkerDictionary:
    return MarkerDictionary(_markers_for(spec), spec.marker_min_hamming)


# ---------------------------------------------------------------------------
# Intensity

@lru_cache(maxsize=64)
def pattern_table(spec: PatternSpec) -> tuple[np.ndarray, np.ndarray]:
    """Flat parameter table + marker bits consumed by the compiled kernels."""
    x0, y0, s, _ = _layout(spec)
    p = np.zeros(K.TABLE_SIZE)
    p[K.P_KIND] = _KIND_CODE[spec.kind]
    p[K.P_ROWS] = spec.rows
    p[K.P_COLS] = spec.cols
    p[K.P_PITCH] = s
    p[K.P_RADIUS] = circle_radius(spec) if spec.kind.is_circle_grid else 0.0
    p[K.P_X0] = x0
    p[K.P_Y0] = y0
    p[K.P_BXMIN:K.P_BYMAX + 1] = board_bounds(spec)
    p[K.P_MARKER] = spec.marker_ratio * s if spec.kind is PatternKind.CHARUCO else 0.0
    p.setflags(write=False)
    return p, _markers_for(spec)


def pattern_intensity(spec: PatternSpec, board_xy) -> np.ndarray | float:
    """Printed reflectance in [0, 1] at board coordinates (meters); white outside the pattern."""
    xy = np.asarray(board_xy, dtype=float)
    scalar = xy.ndim == 1
    flat = xy.reshape(-1, 2)
    p, markers = pattern_table(spec)
    out = K.intensity_many(p, markers, np.ascontiguousarray(flat[:, 0]), np.ascontiguousarray(flat[:, 1]))
    return float(out[0]) if scalar else out.reshape(xy.shape[:-1])


def pattern_png(spec: PatternSpec, pixels_per_mm: float, supersample: int = 4) -> np.ndarray:
    """Rasterise the board (quiet zone included) to an 8-bit grayscale array.

    Row 0 is the top of the board (largest board y).  Board point ``(x, y)``
    maps to continuous image coordinates
    ``u = (x - xmin) * ppm_m``, ``v = (ymax - y) * ppm_m``.
    """
    if not pixels_per_mm > 0:
        raise InvalidSpec("pixels_per_mm must be positive")
    xmin, xmax, ymin, ymax = board_bounds(spec)
    ppm = pixels_per_mm * 1e3
    w = int(math.ceil((xmax - xmin) * ppm - 1e-9))
    h = int(math.ceil((ymax - ymin) * ppm - 1e-9))
    if w > MAX_PNG_SIDE or h > MAX_PNG_SIDE or w * h > MAX_PNG_PIXELS:
        raise InvalidSpec(f"pattern image {w}x{h} exceeds the size guard")
    offs = (np.arange(supersample) + 0.5) / supersample
    us = (np.arange(w)[:, None] + offs[None, :]).ravel()
    vs = (np.arange(h)[:, None] + offs[None, :]).ravel()
    bx = xmin + us / ppm
    by = ymax - vs / ppm
    X, Y = np.meshgrid(bx, by)
    vals = pattern_intensity(spec, np.stack([X, Y], axis=-1))
    vals = vals.reshape(h, supersample, w, supersample).mean(axis=(1, 3))
    return np.clip(np.rint(vals * 255.0), 0, 255).astype(np.uint8)


def board_to_png_pixels(spec: PatternSpec, pixels_per_mm: float, board_xy) -> np.ndarray:
    xmin, _, _, ymax = board_bounds(spec)
    ppm = pixels_per_mm * 1e3
    xy = np.asarray(board_xy, dtype=float)
    return np.stack([(xy[..., 0] - xmin) * ppm, (ymax - xy[..., 1]) * ppm], axis=-1)


def encode_png(image: np.ndarray, compress_level: int = 6) -> bytes:
    """Encode an 8-bit grayscale array as PNG with no ancillary chunks."""
    if image.dtype != np.uint8 or image.ndim != 2:
        raise InvalidSpec("expected a 2-D uint8 image")
    buf = io.BytesIO()
    Image.fromarray(image, mode="L").save(buf, format="PNG", compress_level=compress_level)
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        if im.mode != "L":
            raise InvalidSpec(f"expected 8-bit grayscale PNG, got mode {im.mode}")
        return np.array(im)
