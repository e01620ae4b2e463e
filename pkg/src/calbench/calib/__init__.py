"""Calibration solvers and their shared machinery."""

from .homography import apply_homography, estimate_homography
from .lm import FunctionProblem, LMConfig, LMResult, lm_optimize
from .model import FULL_PARAMS, TSAI_PARAMS, ZHANG_PARAMS, IntrinsicLayout, ViewsProblem, numeric_jacobian
from .result import ALGORITHMS, CalibResult
from .stereo import StereoProblem, StereoResult, average_poses, stereo_extrinsics
from .tsai import calibrate_tsai, rac_view
from .zhang import calibrate_full, calibrate_zhang, extrinsics_from_homography, zhang_closed_form

__all__ = [
    "ALGORITHMS", "CalibResult", "FULL_PARAMS", "FunctionProblem", "IntrinsicLayout", "LMConfig", "LMResult",
    "StereoProblem", "StereoResult", "TSAI_PARAMS", "ViewsProblem", "ZHANG_PARAMS", "apply_homography",
    "average_poses", "calibrate", "calibrate_full", "calibrate_tsai", "calibrate_zhang", "estimate_homography",
    "extrinsics_from_homography", "lm_optimize", "numeric_jacobian", "rac_view", "stereo_extrinsics",
    "zhang_closed_form",
]


def calibrate(algorithm: str, views, image_size, aspect: float = 1.0, config: LMConfig = LMConfig()) -> CalibResult:
    """Dispatch by algorithm name; ``aspect`` (fy/fx) is only used by Tsai."""
    if algorithm == "zhang":
        return calibrate_zhang(views, image_size, config)
    if algorithm == "full":
        return calibrate_full(views, image_size, config)
    if algorithm == "tsai":
        return calibrate_tsai(views, image_size, aspect, config)
    raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
