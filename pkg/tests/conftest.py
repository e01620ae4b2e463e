"""Shared fixtures: preset cameras, short spiral trajectories and oracle views."""

from __future__ import annotations

import numpy as np
import pytest

from calbench.geometry import CameraModel, Distortion, camera_preset
from calbench.measurement import oracle_points
from calbench.patterns import checkerboard_9x12
from calbench.trajectory import SpiralParams, conical_spiral_poses

SHORT_SPIRAL = SpiralParams(n_frames=15)


def make_views(cam: CameraModel, poses, spec=None, sigma: float = 0.0, seed: int = 0):
    spec = spec or checkerboard_9x12()
    return [oracle_points(cam, p, spec, sigma, seed=seed * 1000 + f, frame_index=f) for f, p in enumerate(poses)]


def with_distortion(cam: CameraModel, coeffs) -> CameraModel:
    return CameraModel(cam.intrinsics, Distortion.from_array(coeffs))


@pytest.fixture(scope="session")
def rect_cam() -> CameraModel:
    return camera_preset("rectilinear", 0.25)


@pytest.fixture(scope="session")
def wide_cam() -> CameraModel:
    return camera_preset("wide", 1.0)


@pytest.fixture(scope="session")
def spiral_poses():
    return conical_spiral_poses(SHORT_SPIRAL)


@pytest.fixture(scope="session")
def checker():
    return checkerboard_9x12()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ------------------------------------------------------

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion, shown live and in the session summary."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
