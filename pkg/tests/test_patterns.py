import itertools
import math

import numpy as np
import pytest

from calbench.errors import Exhausted, InvalidSpec
from calbench.patterns import (PATTERN_PRESETS, PatternKind, PatternSpec, asymmetric_circles_9x10, board_bounds,
                               board_to_png_pixels, charuco_9x12, checkerboard_9x12, circle_radius, decode_png,
                               encode_png, generate_marker_dictionary, marker_dictionary_for, object_points,
                               object_points_array, pattern_intensity, pattern_png, rotated_hamming,
                               symmetric_circles_10x10)


def nearest_neighbour(xy):
    d = np.linalg.norm(xy[:, None] - xy[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1)


class TestSpec:
    def test_presets_constructible(self):
        assert set(PATTERN_PRESETS) == {"ch", "sc", "ac", "cu"}
        for make in PATTERN_PRESETS.values():
            spec = make()
            assert PatternSpec.from_dict(spec.to_dict()) == spec

    @pytest.mark.parametrize("kw", [
        dict(kind=PatternKind.CHECKERBOARD, rows=0, cols=5, checker_width=10.0),
        dict(kind=PatternKind.CHECKERBOARD, rows=5, cols=5),
        dict(kind=PatternKind.SYMMETRIC_CIRCLES, rows=2, cols=5, circle_diameter=5.0, circle_spacing=10.0),
        dict(kind=PatternKind.SYMMETRIC_CIRCLES, rows=5, cols=5, circle_diameter=10.0, circle_spacing=10.0),
        dict(kind=PatternKind.ASYMMETRIC_CIRCLES, rows=5, cols=5, circle_diameter=12.0, circle_spacing=10.0),
    ])
    def test_invalid_specs_rejected(self, kw):
        with pytest.raises(InvalidSpec):
            PatternSpec(**kw)

    def test_units_must_be_mm(self):
        d = checkerboard_9x12().to_dict()
        d["units"] = "m"
        with pytest.raises(InvalidSpec):
            PatternSpec.from_dict(d)


class TestObjectPoints:
    def test_checkerboard_count_and_spacing(self):
        xy = object_points_array(checkerboard_9x12())
        assert len(xy) == 88
        np.testing.assert_allclose(nearest_neighbour(xy), 0.015, rtol=1e-12)
        np.testing.assert_allclose(xy.mean(axis=0), 0, atol=1e-15)

    def test_minimal_checkerboard(self):
        spec = PatternSpec(PatternKind.CHECKERBOARD, 2, 2, checker_width=10.0)
        np.testing.assert_allclose(object_points_array(spec), [[0.0, 0.0]], atol=1e-15)

    def test_asymmetric_lattice(self):
        xy = object_points_array(asymmetric_circles_9x10())
        assert len(xy) == 90
        # brute force: nearest neighbour is the diagonal spacing, same-row neighbour is sqrt(2) times that
        np.testing.assert_allclose(nearest_neighbour(xy), 0.022, rtol=1e-12)
        same_row = [np.linalg.norm(a - b) for a, b in itertools.combinations(xy, 2) if abs(a[1] - b[1]) < 1e-12]
        assert min(same_row) == pytest.approx(0.022 * math.sqrt(2), rel=1e-12)

    def test_symmetric_lattice(self):
        xy = object_points_array(symmetric_circles_10x10())
        assert len(xy) == 100
        np.testing.assert_allclose(nearest_neighbour(xy), 0.015, rtol=1e-12)
        np.testing.assert_allclose(xy.mean(axis=0), 0, atol=1e-15)

    @pytest.mark.parametrize("rows", range(3, 21))
    def test_count_formulae(self, rows):
        for cols in range(3, 21):
            ch = PatternSpec(PatternKind.CHECKERBOARD, rows, cols, checker_width=10.0)
            sc = PatternSpec(PatternKind.SYMMETRIC_CIRCLES, rows, cols, circle_diameter=4.0, circle_spacing=10.0)
            ac = PatternSpec(PatternKind.ASYMMETRIC_CIRCLES, rows, cols, circle_diameter=4.0, circle_spacing=10.0)
            assert len(object_points(ch)) == (rows - 1) * (cols - 1)
            assert len(object_points(sc)) == len(object_points(ac)) == rows * cols

    def test_ids_row_major_and_deterministic(self):
        pts = object_points(checkerboard_9x12())
        assert [p.id for p in pts] == list(range(88))
        assert pts[0].board_xy[1] > pts[11].board_xy[1]  # first row on top
        assert pts[0].board_xy[0] < pts[1].board_xy[0]
        assert object_points(checkerboard_9x12()) == pts

    def test_charuco_shares_checker_geometry(self):
        np.testing.assert_array_equal(object_points_array(charuco_9x12()), object_points_array(checkerboard_9x12()))


class TestIntensity:
    def test_top_left_square_is_black(self):
        spec = checkerboard_9x12()
        x0, y0 = -0.09, 0.0675
        assert pattern_intensity(spec, [x0 + 0.0075, y0 - 0.0075]) == 0.0
        assert pattern_intensity(spec, [x0 + 0.0225, y0 - 0.0075]) == 1.0

    def test_outside_is_white(self):
        for make in PATTERN_PRESETS.values():
            assert pattern_intensity(make(), [1.0, 1.0]) == 1.0

    def test_circle_centres_are_dark(self):
        for spec in (symmetric_circles_10x10(), asymmetric_circles_9x10()):
            np.testing.assert_array_equal(pattern_intensity(spec, object_points_array(spec)), 0.0)

    def test_cell_integral_by_sampling(self, rng):
        spec = checkerboard_9x12()
        s = 0.015
        for i, j in [(0, 0), (0, 1), (3, 4), (8, 11)]:
            x = -0.09 + (j + rng.uniform(size=4000)) * s
            y = 0.0675 - (i + rng.uniform(size=4000)) * s
            area = pattern_intensity(spec, np.column_stack([x, y])).mean() * s * s
            assert area == pytest.approx(((i + j) % 2) * s * s, abs=1e-15)

    def test_corners_are_saddles(self):
        spec = checkerboard_9x12()
        e = 1e-4
        for x, y in object_points_array(spec):
            q = pattern_intensity(spec, np.array([[x + e, y + e], [x - e, y + e], [x - e, y - e], [x + e, y - e]]))
            assert q[0] == q[2] and q[1] == q[3] and q[0] != q[1]

    def test_circle_centre_is_dark_disc_centroid(self, rng):
        spec = symmetric_circles_10x10()
        r = circle_radius(spec)
        for c in object_points_array(spec)[[0, 37, 99]]:
            pts = c + rng.uniform(-r * 1.1, r * 1.1, size=(20000, 2))
            dark = pts[pattern_intensity(spec, pts) == 0]
            np.testing.assert_allclose(dark.mean(axis=0), c, atol=r * 0.02)
            assert len(dark) / len(pts) == pytest.approx(math.pi / 4.84, rel=0.03)

    def test_charuco_white_squares_carry_markers(self):
        spec = charuco_9x12()
        s = 0.015
        cx, cy = -0.09 + 1.5 * s, 0.0675 - 0.5 * s  # white square (0, 1)
        g = np.linspace(-0.3 * s, 0.3 * s, 40)
        vals = pattern_intensity(spec, np.stack(np.meshgrid(cx + g, cy + g), axis=-1))
        assert 0 < vals.mean() < 1


class TestMarkers:
    def test_single_marker_deterministic(self):
        a = generate_marker_dictionary(42, 1)
        b = generate_marker_dictionary(42, 1)
        assert a.bits.shape == (1, 7, 7)
        np.testing.assert_array_equal(a.bits, b.bits)

    @pytest.mark.parametrize("count", [44, 54])
    def test_pairwise_rotated_distance(self, count):
        d = generate_marker_dictionary(42, count)
        for a, b in itertools.combinations(d.bits, 2):
            assert rotated_hamming(a, b) >= d.min_hamming
        for a in d.bits:
            assert min(int(np.count_nonzero(a != np.rot90(a, k))) for k in (1, 2, 3)) >= d.min_hamming

    def test_pigeonhole(self):
        with pytest.raises(Exhausted):
            generate_marker_dictionary(42, 2 ** 49 + 1)

    def test_unsatisfiable_budget(self):
        with pytest.raises(Exhausted):
            generate_marker_dictionary(0, 10, min_hamming=40, max_attempts=500)

    def test_board_dictionary_covers_white_squares(self):
        assert len(marker_dictionary_for(charuco_9x12())) == charuco_9x12().n_white_squares == 54


class TestPng:
    def test_corners_match_object_points(self):
        spec = checkerboard_9x12()
        img = pattern_png(spec, 2.0).astype(float)
        uv = board_to_png_pixels(spec, 2.0, object_points_array(spec))
        for u, v in uv:
            # the corner is where the four neighbouring pixel blocks alternate
            i, j = int(round(v)), int(round(u))
            assert abs(u - j) <= 0.5 and abs(v - i) <= 0.5
            block = img[i - 2:i + 2, j - 2:j + 2]
            assert block[0, 0] == block[3, 3] and block[0, 3] == block[3, 0] and block[0, 0] != block[0, 3]

    def test_size_includes_quiet_zone(self):
        spec = checkerboard_9x12()
        x0, x1, y0, y1 = board_bounds(spec)
        img = pattern_png(spec, 1.0)
        assert img.shape == (round((y1 - y0) * 1e3), round((x1 - x0) * 1e3))

    def test_deterministic_bytes(self):
        a = encode_png(pattern_png(charuco_9x12(), 1.0))
        b = encode_png(pattern_png(charuco_9x12(), 1.0))
        assert a == b
        np.testing.assert_array_equal(decode_png(a), pattern_png(charuco_9x12(), 1.0))

    def test_reencode_is_byte_stable(self):
        data = encode_png(pattern_png(asymmetric_circles_9x10(), 1.0), 1)
        assert encode_png(decode_png(data), 1) == data

    def test_guards(self):
        with pytest.raises(InvalidSpec):
            pattern_png(checkerboard_9x12(), 0.0)
        with pytest.raises(InvalidSpec):
            pattern_png(checkerboard_9x12(), 1e4)
