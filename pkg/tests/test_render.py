import math

import numpy as np
import pytest

from calbench.errors import AllOutOfView, InvalidSpec
from calbench.geometry import CameraModel, Distortion, Pose, camera_preset, rodrigues_to_matrix
from calbench.measurement import refine_saddle
from calbench.patterns import pattern_intensity, symmetric_circles_10x10
from calbench.render import EnvMode, Environment, render_frame, render_radiance, shade, visible_points


def fronto(depth=0.5, x=0.0, y=0.0):
    return Pose(rodrigues_to_matrix([math.pi, 0, 0]), np.array([x, y, depth]))


class TestEnvironment:
    def test_invariants(self):
        with pytest.raises(InvalidSpec):
            Environment(EnvMode.CLEAN, noise_sigma=1.0)
        with pytest.raises(InvalidSpec):
            Environment(EnvMode.NOISY, noise_sigma=0.0)
        with pytest.raises(InvalidSpec):
            Environment(light_direction=(0, 0, 0))

    def test_round_trip(self):
        env = Environment.noisy()
        assert Environment.from_dict(env.to_dict()) == env

    def test_shade(self):
        assert shade(Environment.clean(), [0.3, 0.1, -0.9]) == 1.0
        env = Environment(EnvMode.NOISY, ambient=0.3, light_direction=(0, 0, 1), diffuse_gain=0.7, noise_sigma=8)
        assert shade(env, [0, 0, -1]) == pytest.approx(1.0)
        assert shade(env, [1, 0, 0]) == pytest.approx(0.3)


class TestRender:
    def test_ground_truth_never_from_image(self, rect_cam, checker):
        pose = fronto()
        a = render_frame(rect_cam, pose, checker, Environment.clean(), 0)
        ids, uv = visible_points(rect_cam, pose, checker)
        np.testing.assert_array_equal(a.point_ids, ids)
        np.testing.assert_array_equal(a.point_uv, uv)
        assert a.image.dtype == np.uint8 and a.image.shape == (768, 1024)
        assert a.gt_json()["points"][0] == {"id": 0, "u": float(uv[0, 0]), "v": float(uv[0, 1])}

    def test_fronto_parallel_saddles_match_ground_truth(self, rect_cam, checker):
        frame = render_frame(rect_cam, fronto(), checker, Environment.clean(), 0)
        err = [np.linalg.norm(refine_saddle(frame.image, uv + [1.5, -1.0], window=7) - uv) for uv in frame.point_uv]
        assert max(err) < 0.3

    def test_board_behind_camera(self, rect_cam, checker):
        with pytest.raises(AllOutOfView):
            render_frame(rect_cam, Pose(np.eye(3), np.array([0, 0, -1.0])), checker, Environment.clean(), 0)

    def test_noise_determinism_and_magnitude(self, checker):
        cam = camera_preset("wide", 0.5)
        env = Environment.noisy(8.0)
        pose = fronto(0.6)
        a = render_frame(cam, pose, checker, env, 11).image
        b = render_frame(cam, pose, checker, env, 11).image
        c = render_frame(cam, pose, checker, env, 12).image
        np.testing.assert_array_equal(a, b)
        # background pixels are far from clipping, so their differences are N(0, 2 sigma^2)
        clean = render_radiance(cam, pose, checker, 1.0, env.background)
        bg = clean == env.background
        diff = np.abs(a[bg].astype(float) - c[bg].astype(float)).mean()
        assert diff == pytest.approx(8.0 * 2 / math.sqrt(math.pi), rel=0.1)

    def test_clean_constant_regions_are_exact(self, checker):
        cam = CameraModel(camera_preset("rectilinear", 0.25).intrinsics, Distortion())
        pose = fronto(0.5)
        frame = render_frame(cam, pose, checker, Environment.clean(), 0)
        # sample pixel centres well inside squares: board coordinate via the exact pinhole inverse
        i = cam.intrinsics
        v, u = np.mgrid[0:768, 0:1024] + 0.5
        x, y = (u - i.cx) / i.fx * 0.5, (v - i.cy) / i.fy * 0.5
        bxy = np.stack([x, -y], axis=-1)  # board y points up
        s = 0.015
        fx, fy = (bxy[..., 0] + 0.09) / s % 1, (0.0675 - bxy[..., 1]) / s % 1
        inside = (np.abs(bxy[..., 0]) < 0.085) & (np.abs(bxy[..., 1]) < 0.0625)
        inside &= (fx > 0.2) & (fx < 0.8) & (fy > 0.2) & (fy < 0.8)
        expected = np.rint(pattern_intensity(checker, bxy[inside]) * 255)
        assert np.abs(frame.image[inside].astype(float) - expected).max() <= 1

    def test_pixels_in_range_and_distortion_periphery(self):
        cam = camera_preset("wide")
        frame = render_frame(cam, fronto(0.25), symmetric_circles_10x10(), Environment.noisy(), 3)
        assert frame.image.min() >= 0 and frame.image.max() <= 255
        assert len(frame.point_ids) > 0
