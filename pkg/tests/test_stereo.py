import numpy as np
import pytest

from calbench.calib import StereoResult, calibrate_full, calibrate_zhang, stereo_extrinsics
from calbench.calib.stereo import average_poses
from calbench.errors import NoSharedFrames
from calbench.geometry import Pose, camera_preset, rodrigues_to_matrix, rotation_angle
from calbench.presets import verged_rig_pose

from conftest import make_views, with_distortion

BASELINE = 0.2


@pytest.fixture(scope="module")
def rig():
    return verged_rig_pose(BASELINE, 0.6)


def rig_views(cam_a, cam_b, rig, poses, sigma=0.0, seed=0):
    va = make_views(cam_a, poses, sigma=sigma, seed=seed)
    vb = make_views(cam_b, [rig.compose(p) for p in poses], sigma=sigma, seed=seed + 500)
    return va, vb


class TestStereo:
    def test_noise_free_baseline(self, rect_cam, rig, spiral_poses):
        cam = with_distortion(rect_cam, [0.05, 0.02, 0, 0, 0, 0, 0, 0])
        va, vb = rig_views(cam, cam, rig, spiral_poses)
        ra, rb = calibrate_zhang(va, cam.intrinsics.size), calibrate_zhang(vb, cam.intrinsics.size)
        st = stereo_extrinsics(ra, rb, va, vb)
        assert st.converged
        assert abs(st.baseline - BASELINE) < 1e-6
        assert rotation_angle(st.relative.rotation.T @ rig.rotation) < 1e-8
        assert st.rpe_rms < 1e-6

    def test_single_shared_frame_passthrough(self, rect_cam, rig, spiral_poses):
        cam = with_distortion(rect_cam, [0.05, 0.02, 0, 0, 0, 0, 0, 0])
        va, vb = rig_views(cam, cam, rig, spiral_poses)
        ra = calibrate_zhang(va, cam.intrinsics.size)
        rb = calibrate_zhang(vb[1:], cam.intrinsics.size)
        st = stereo_extrinsics(ra, rb, va[:2], vb[1:])
        assert st.frame_indices == [1]
        expected = rb.pose_for(1).compose(ra.pose_for(1).inverse())
        np.testing.assert_allclose(st.initial_relative.rotation, expected.rotation, atol=1e-12)
        np.testing.assert_allclose(st.initial_relative.translation, expected.translation, atol=1e-12)
        assert rotation_angle(st.relative.rotation.T @ expected.rotation) < 1e-8
        np.testing.assert_allclose(st.relative.translation, expected.translation, atol=1e-8)

    def test_no_shared_frames(self, rect_cam, rig, spiral_poses):
        va, vb = rig_views(rect_cam, rect_cam, rig, spiral_poses)
        ra = calibrate_zhang(va[:8], rect_cam.intrinsics.size)
        rb = calibrate_zhang(vb[8:], rect_cam.intrinsics.size)
        with pytest.raises(NoSharedFrames):
            stereo_extrinsics(ra, rb, va, vb)

    def test_mixed_rig_noisy(self, rect_cam, rig, spiral_poses):
        wide = camera_preset("wide", 0.25 * 1024 / 640)
        va, vb = rig_views(rect_cam, wide, rig, spiral_poses, sigma=0.5, seed=2)
        ra, rb = calibrate_full(va, rect_cam.intrinsics.size), calibrate_full(vb, wide.intrinsics.size)
        st = stereo_extrinsics(ra, rb, va, vb)
        assert st.converged
        assert 0.35 <= st.rpe_rms <= 0.7
        assert abs(st.baseline - BASELINE) < 0.01

    def test_round_trip(self, rect_cam, rig, spiral_poses):
        va, vb = rig_views(rect_cam, rect_cam, rig, spiral_poses, sigma=0.3)
        ra, rb = calibrate_zhang(va, rect_cam.intrinsics.size), calibrate_zhang(vb, rect_cam.intrinsics.size)
        st = stereo_extrinsics(ra, rb, va, vb)
        back = StereoResult.from_dict(st.to_dict())
        assert back.frame_indices == st.frame_indices and back.rpe_rms == st.rpe_rms
        np.testing.assert_allclose(back.relative.rotation, st.relative.rotation, atol=1e-14)
        np.testing.assert_array_equal(back.relative.translation, st.relative.translation)


def test_average_poses():
    base = Pose(rodrigues_to_matrix([0.1, -0.2, 0.3]), np.array([0.2, 0.0, 0.01]))
    rng = np.random.default_rng(0)
    jitter = [Pose(rodrigues_to_matrix(e), base.translation + t) for e, t in
              zip(rng.normal(scale=1e-3, size=(50, 3)), rng.normal(scale=1e-3, size=(50, 3)))]
    avg = average_poses([Pose(base.rotation @ p.rotation, p.translation) for p in jitter])
    assert rotation_angle(avg.rotation.T @ base.rotation) < 5e-4
    np.testing.assert_allclose(avg.translation, base.translation, atol=5e-4)
    same = average_poses([base, base])
    np.testing.assert_allclose(same.rotation, base.rotation, atol=1e-12)
