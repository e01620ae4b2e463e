import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from calbench.errors import BehindCamera, InvalidSpec, NonConvergent, NotOrthonormal, Parallel
from calbench.geometry import (CameraModel, Distortion, Intrinsics, Pose, apply_distortion, board_to_pixel_jacobian,
                               camera_preset, distortion_coeff_jacobian, distortion_point_jacobian,
                               intersect_board_plane, matrix_to_rodrigues, nearest_rotation, pixel_ray, project,
                               project_points, rodrigues_to_matrix, undistort_point, undistort_points)

from conftest import with_distortion

finite = st.floats(-1.0, 1.0, allow_nan=False)


def scalar_project(fx, fy, cx, cy, d, X):
    """Independent scalar evaluation of the rational Brown-Conrady projection."""
    k1, k2, p1, p2, k3, k4, k5, k6 = d
    x, y = X[0] / X[2], X[1] / X[2]
    r2 = x * x + y * y
    rad = (1 + k1 * r2 + k2 * r2 ** 2 + k3 * r2 ** 3) / (1 + k4 * r2 + k5 * r2 ** 2 + k6 * r2 ** 3)
    xd = x * rad + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * rad + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return fx * xd + cx, fy * yd + cy


def random_rotation(rng, max_angle=math.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rodrigues_to_matrix(axis * rng.uniform(1e-3, max_angle - 1e-3))


# -- types -------------------------------------------------------------------

class TestTypes:
    def test_intrinsics_invariants(self):
        with pytest.raises(InvalidSpec):
            Intrinsics(-1.0, 1.0, 10.0, 10.0, 20, 20)
        with pytest.raises(InvalidSpec):
            Intrinsics(1.0, 1.0, 30.0, 10.0, 20, 20)

    def test_intrinsics_json_round_trip(self):
        intr = Intrinsics(600.0, 450.0, 320.0, 240.0, 640, 480)
        assert Intrinsics.from_dict(intr.to_dict()) == intr
        assert intr.to_dict()["K"][0][1] == 0.0

    def test_distortion_order_and_default(self):
        assert not Distortion().as_array().any()
        d = Distortion.from_array([1, 2, 3, 4, 5, 6, 7, 8])
        assert (d.k1, d.k2, d.p1, d.p2, d.k3, d.k4, d.k5, d.k6) == (1, 2, 3, 4, 5, 6, 7, 8)
        assert Distortion.from_dict(d.to_dict()).as_array().tolist() == list(range(1, 9))
        assert d.to_dict()["order"] == ["k1", "k2", "p1", "p2", "k3", "k4", "k5", "k6"]

    def test_pose_rejects_non_rotation(self):
        with pytest.raises(NotOrthonormal):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
        with pytest.raises(NotOrthonormal):
            Pose(np.eye(3) * 1.01, np.zeros(3))

    def test_pose_compose_inverse(self, rng):
        a = Pose(random_rotation(rng), rng.normal(size=3))
        b = Pose(random_rotation(rng), rng.normal(size=3))
        X = rng.normal(size=(5, 3))
        np.testing.assert_allclose(a.compose(b).apply(X), a.apply(b.apply(X)), atol=1e-12)
        np.testing.assert_allclose(a.inverse().apply(a.apply(X)), X, atol=1e-12)

    def test_camera_json_round_trip(self, wide_cam):
        back = CameraModel.from_dict(wide_cam.to_dict())
        assert back.intrinsics == wide_cam.intrinsics
        np.testing.assert_array_equal(back.distortion.as_array(), wide_cam.distortion.as_array())

    def test_presets(self):
        rect, wide = camera_preset("rectilinear"), camera_preset("wide")
        assert (rect.intrinsics.fx, rect.intrinsics.cx, rect.intrinsics.size) == (3000, 2048, (4096, 3072))
        assert (wide.intrinsics.fy, wide.intrinsics.cy, wide.intrinsics.size) == (450, 240, (640, 480))
        assert rect.distortion.p1 == 0.001 and wide.distortion.p1 == 0.03
        small = camera_preset("rectilinear", 0.25)
        assert small.intrinsics.size == (1024, 768) and small.intrinsics.fx == 750
        with pytest.raises(InvalidSpec):
            camera_preset("fisheye")


# -- rotations ---------------------------------------------------------------

class TestRodrigues:
    def test_zero_is_identity(self):
        np.testing.assert_array_equal(rodrigues_to_matrix([0, 0, 0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        R = rodrigues_to_matrix([0, 0, math.pi / 2])
        np.testing.assert_allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)

    def test_round_trip_fixed(self):
        r = np.array([0.1, 0.2, 0.3])
        np.testing.assert_allclose(matrix_to_rodrigues(rodrigues_to_matrix(r)), r, atol=1e-10)

    def test_identity_inverse(self):
        np.testing.assert_array_equal(matrix_to_rodrigues(np.eye(3)), np.zeros(3))

    def test_half_turn_about_z(self):
        r = matrix_to_rodrigues(rodrigues_to_matrix([0, 0, math.pi]))
        assert np.linalg.norm(r) == pytest.approx(math.pi, abs=1e-12)
        np.testing.assert_allclose(np.abs(r), [0, 0, math.pi], atol=1e-9)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(NotOrthonormal):
            matrix_to_rodrigues(np.eye(3) * 2)

    def test_round_trip_random(self, rng):
        for _ in range(1000):
            R = random_rotation(rng)
            r = matrix_to_rodrigues(R)
            assert 0 <= np.linalg.norm(r) <= math.pi + 1e-12
            np.testing.assert_allclose(rodrigues_to_matrix(r), R, atol=1e-10)

    @given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3))
    def test_matrix_is_rotation(self, r):
        R = rodrigues_to_matrix(r)
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)

    def test_nearest_rotation_projects(self, rng):
        R = random_rotation(rng)
        M = R + 1e-3 * rng.normal(size=(3, 3))
        Q = nearest_rotation(M)
        np.testing.assert_allclose(Q.T @ Q, np.eye(3), atol=1e-12)
        assert np.linalg.det(Q) == pytest.approx(1.0)


# -- distortion --------------------------------------------------------------

class TestDistortion:
    def test_zero_is_identity(self):
        np.testing.assert_array_equal(apply_distortion(Distortion(), [0.3, -0.2]), [0.3, -0.2])

    def test_centre_is_fixed(self):
        np.testing.assert_array_equal(apply_distortion(camera_preset("wide").distortion, [0.0, 0.0]), [0, 0])

    def test_hand_value_k1(self):
        d = Distortion(k1=0.5)
        np.testing.assert_allclose(apply_distortion(d, [0.1, 0.0]), [0.1005, 0.0], rtol=0, atol=1e-15)

    def test_inverse_hand_value(self):
        np.testing.assert_allclose(undistort_point(Distortion(k1=0.5), [0.1005, 0.0]), [0.1, 0.0], atol=1e-9)

    def test_inverse_of_zero_distortion(self):
        np.testing.assert_array_equal(undistort_point(Distortion(), [0.4, -0.7]), [0.4, -0.7])

    @pytest.mark.parametrize("preset", ["rectilinear", "wide"])
    def test_frame_corner_round_trip_or_error(self, preset):
        cam = camera_preset(preset)
        W, H = cam.intrinsics.size
        corners = np.array([[0.0, 0.0], [W, 0.0], [0.0, H], [W, H]])
        pd = (corners - [cam.intrinsics.cx, cam.intrinsics.cy]) / [cam.intrinsics.fx, cam.intrinsics.fy]
        for p in pd:
            try:
                x = undistort_point(cam.distortion, p)
            except NonConvergent:
                continue
            assert np.linalg.norm(apply_distortion(cam.distortion, x) - p) < 1e-9

    def test_non_monotone_region_is_an_error(self):
        # k1 < 0 folds the profile back at r^2 = -1/(3 k1); beyond its peak there is no preimage
        d = Distortion(k1=-0.5)
        with pytest.raises(NonConvergent):
            undistort_point(d, [0.6, 0.0])

    @given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6))
    def test_undistort_inverts_distort(self, x, y):
        d = camera_preset("wide").distortion
        pd = apply_distortion(d, [x, y])
        xy, ok = undistort_points(d, pd[None])
        assert ok[0]
        np.testing.assert_allclose(xy[0], [x, y], atol=1e-9)

    def test_point_jacobian_matches_differences(self, rng):
        d = Distortion.from_array([0.3, -0.1, 0.01, -0.02, 0.05, 0.1, 0.01, 0.002])
        p = rng.uniform(-0.5, 0.5, size=(10, 2))
        J = distortion_point_jacobian(d, p)
        h = 1e-6
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            num = (apply_distortion(d, p + e) - apply_distortion(d, p - e)) / (2 * h)
            np.testing.assert_allclose(J[:, :, k], num, rtol=1e-6, atol=1e-9)

    def test_coeff_jacobian_matches_differences(self, rng):
        a = np.array([0.3, -0.1, 0.01, -0.02, 0.05, 0.1, 0.01, 0.002])
        p = rng.uniform(-0.5, 0.5, size=(10, 2))
        J = distortion_coeff_jacobian(Distortion.from_array(a), p)
        h = 1e-6
        for k in range(8):
            e = np.zeros(8)
            e[k] = h
            num = (apply_distortion(Distortion.from_array(a + e), p)
                   - apply_distortion(Distortion.from_array(a - e), p)) / (2 * h)
            np.testing.assert_allclose(J[:, :, k], num, rtol=1e-6, atol=1e-9)


# -- projection and rays ----------------------------------------------------

class TestProjection:
    def test_optical_axis_hits_principal_point(self):
        uv = project(camera_preset("rectilinear"), Pose.identity(), [0, 0, 1])
        np.testing.assert_allclose(uv, [2048, 1536])

    def test_wide_k1_hand_value(self):
        cam = with_distortion(camera_preset("wide"), [0.5, 0, 0, 0, 0, 0, 0, 0])
        np.testing.assert_allclose(project(cam, Pose.identity(), [0.1, 0, 1]), [380.3, 240.0], atol=1e-9)

    def test_full_wide_matches_scalar_reference(self):
        cam = camera_preset("wide")
        i = cam.intrinsics
        ref = scalar_project(i.fx, i.fy, i.cx, i.cy, cam.distortion.as_array(), [0.05, 0.05, 0.5])
        np.testing.assert_allclose(project(cam, Pose.identity(), [0.05, 0.05, 0.5]), ref, rtol=0, atol=1e-10)

    def test_behind_camera(self):
        with pytest.raises(BehindCamera):
            project(camera_preset("wide"), Pose.identity(), [0, 0, -1])
        uv, front = project_points(camera_preset("wide"), Pose.identity(), [[0, 0, -1.0], [0, 0, 1.0]], strict=False)
        assert front.tolist() == [False, True] and np.isnan(uv[0]).all()

    def test_rigid_reexpression(self, rng, wide_cam):
        P1 = Pose(random_rotation(rng, 0.3), np.array([0.0, 0.0, 2.0]))
        P2 = Pose(random_rotation(rng, 0.3), rng.normal(scale=0.05, size=3))
        X = rng.uniform(-0.2, 0.2, size=(50, 3))
        np.testing.assert_allclose(project_points(wide_cam, P1.compose(P2), X),
                                   project_points(wide_cam, P1, P2.apply(X)), atol=1e-9)

    def test_zero_distortion_is_pinhole(self, rng):
        cam = with_distortion(camera_preset("rectilinear"), np.zeros(8))
        X = rng.uniform([-0.5, -0.5, 1], [0.5, 0.5, 3], size=(100, 3))
        K = cam.intrinsics.K
        h = (K @ X.T).T
        np.testing.assert_allclose(project_points(cam, Pose.identity(), X), h[:, :2] / h[:, 2:], rtol=1e-12)

    def test_ray_through_principal_point(self, wide_cam):
        np.testing.assert_allclose(pixel_ray(wide_cam, [320, 240]), [0, 0, 1], atol=1e-15)

    def test_ray_hand_value(self):
        cam = with_distortion(camera_preset("rectilinear"), np.zeros(8))
        d = pixel_ray(cam, [2348, 1536])
        np.testing.assert_allclose(d / d[2], [0.1, 0, 1], atol=1e-12)

    @pytest.mark.parametrize("preset", ["rectilinear", "wide"])
    def test_ray_reprojects(self, preset, rng):
        cam = camera_preset(preset)
        W, H = cam.intrinsics.size
        for uv in rng.uniform([0.1 * W, 0.1 * H], [0.9 * W, 0.9 * H], size=(50, 2)):
            d = pixel_ray(cam, uv)
            for lam in (0.5, 3.0):
                np.testing.assert_allclose(project(cam, Pose.identity(), lam * d), uv, atol=1e-6)

    @pytest.mark.parametrize("preset", ["rectilinear", "wide"])
    def test_project_then_ray_recovers_direction(self, preset, rng):
        cam = camera_preset(preset)
        z = rng.uniform(0.3, 3.0, 1000)
        xy = rng.uniform(-0.5, 0.5, size=(1000, 2)) * z[:, None]
        X = np.column_stack([xy, z])
        uv = project_points(cam, Pose.identity(), X)
        for x, p in zip(X[:50], uv[:50]):
            np.testing.assert_allclose(pixel_ray(cam, p), x / np.linalg.norm(x), atol=1e-9)

    def test_board_jacobian_matches_differences(self, wide_cam, rng):
        pose = Pose(random_rotation(rng, 0.5), np.array([0.02, -0.01, 0.6]))
        xy = rng.uniform(-0.05, 0.05, size=(20, 2))
        J = board_to_pixel_jacobian(wide_cam, pose, xy)
        h = 1e-7
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            num = (project_points(wide_cam, pose, xy + e) - project_points(wide_cam, pose, xy - e)) / (2 * h)
            np.testing.assert_allclose(J[:, :, k], num, rtol=1e-5)


class TestBoardPlane:
    def test_fronto_parallel_centre(self):
        pose = Pose(rodrigues_to_matrix([math.pi, 0, 0]), np.array([0, 0, 1.0]))
        np.testing.assert_allclose(intersect_board_plane(np.zeros(3), [0, 0, 1], pose), [0, 0], atol=1e-15)

    def test_tilted_board_reprojects(self, wide_cam):
        pose = Pose(rodrigues_to_matrix([math.pi + math.radians(30), 0, 0]), np.array([0.01, 0.02, 0.8]))
        d = pixel_ray(wide_cam, [320, 240])
        b = intersect_board_plane(np.zeros(3), d, pose)
        np.testing.assert_allclose(project(wide_cam, pose, [b[0], b[1], 0.0]), [320, 240], atol=1e-6)

    def test_grazing_ray_is_parallel(self):
        pose = Pose(rodrigues_to_matrix([math.pi / 2, 0, 0]), np.array([0, 0, 1.0]))
        with pytest.raises(Parallel):
            intersect_board_plane(np.zeros(3), [0, 0, 1], pose)

    def test_plane_behind_origin(self):
        pose = Pose(np.eye(3), np.array([0, 0, -1.0]))
        with pytest.raises(BehindCamera):
            intersect_board_plane(np.zeros(3), [0, 0, 1], pose)
