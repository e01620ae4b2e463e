"""Benchmark harness: measure, calibrate and evaluate one configuration at a time."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .calib import ALGORITHMS, CalibResult, StereoResult, calibrate, stereo_extrinsics
from .errors import CalbenchError, InvalidSpec, NoSharedFrames, TooFewPoints
from .geometry import Pose
from .measurement import (ORACLE_SIGMA, SEED_JITTER_PX, SOURCES, ViewObservations, centroid_oracle_points,
                          image_points, oracle_points)
from .metrics import (CANONICAL_VECTOR, MPJPE_CONVENTION, RMSE_CAL_CONVENTION, ParamErrorReport, param_rmse,
                      rmse_cal, rpe_rms, triangulate_points)
from .presets import Configuration, derive_seed, frame_seed
from .render import render_frame

ImageLoader = Callable[[int, int], np.ndarray]  # (camera, frame) -> image

CONVENTIONS = {
    "rpe_rms": "sqrt(mean over points of squared Euclidean pixel error)",
    "rpe_rms_coord": "sqrt(mean over u and v residuals squared), as minimised by the solvers",
    "param_rmse_composite": CANONICAL_VECTOR,
    "rmse_cal": RMSE_CAL_CONVENTION + "; every control point seen by both cameras, world = camera 0",
    "mpjpe": MPJPE_CONVENTION,
    "oracle_sigma_px": dict(ORACLE_SIGMA),
    "image_seed_jitter_px": SEED_JITTER_PX,
}


def observe(config: Configuration, camera: int, mode: str, master_seed: int, stride: int = 1,
            images: ImageLoader | None = None) -> tuple[list[ViewObservations], list[tuple[int, str]]]:
    """Correspondences for every ``stride``-th frame of one camera; unusable frames are listed, not raised."""
    if mode not in SOURCES:
        raise InvalidSpec(f"unknown mode {mode!r}; choose from {SOURCES}")
    if mode == "oracle-centroid" and not config.pattern.kind.is_circle_grid:
        raise InvalidSpec(f"{mode} mode needs a circle grid, {config.name} uses {config.pattern.kind.value}")
    if stride < 1:
        raise InvalidSpec("stride must be >= 1")
    cam = config.camera(camera)
    poses = config.gt_poses(camera)
    sigma = ORACLE_SIGMA[config.environment.mode.value]
    views, dropped = [], []
    for f in range(0, config.n_frames, stride):
        seed = derive_seed(master_seed, config.name, mode, camera, f)
        try:
            if mode == "oracle":
                v = oracle_points(cam, poses[f], config.pattern, sigma, seed, f)
            elif mode == "oracle-centroid":
                v = centroid_oracle_points(cam, poses[f], config.pattern, sigma=sigma, seed=seed, frame_index=f)
            else:
                if images is not None:
                    img = images(camera, f)
                else:
                    img = render_frame(cam, poses[f], config.pattern, config.environment,
                                       frame_seed(master_seed, config.name, camera, f), f).image
                v = image_points(img, cam, poses[f], config.pattern, seed, f)
        except TooFewPoints as exc:
            dropped.append((f, f"TooFewPoints: {exc}"))
            continue
        views.append(v)
    return views, dropped


@dataclass(eq=False)
class CalibrationRun:
    """Everything the solvers produced for one configuration."""

    config: Configuration
    mode: str
    observations: list[list[ViewObservations]]  # per camera
    results: dict[str, list[CalibResult]] = field(default_factory=dict)  # algorithm -> per camera
    stereo: dict[str, StereoResult] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)  # algorithm -> message
    dropped: list[list[tuple[int, str]]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "configuration": self.config.name,
            "mode": self.mode,
            "observations": [[v.to_dict() for v in cam] for cam in self.observations],
            "dropped": [[{"frame": int(f), "reason": r} for f, r in cam] for cam in self.dropped],
            "results": {a: [r.to_dict() for r in rs] for a, rs in self.results.items()},
            "stereo": {a: s.to_dict() for a, s in self.stereo.items()},
            "errors": dict(self.errors),
        }

    @classmethod
    def from_dict(cls, d: dict, config: Configuration) -> "CalibrationRun":
        if d["configuration"] != config.name:
            raise InvalidSpec(f"results for {d['configuration']!r} do not belong to {config.name!r}")
        return cls(config, d["mode"], [[ViewObservations.from_dict(v) for v in cam] for cam in d["observations"]],
                   {a: [CalibResult.from_dict(r) for r in rs] for a, rs in d["results"].items()},
                   {a: StereoResult.from_dict(x) for a, x in d["stereo"].items()}, dict(d["errors"]),
                   [[(int(x["frame"]), x["reason"]) for x in cam] for cam in d["dropped"]])


def _aspect(config: Configuration, camera: int) -> float:
    intr = config.camera(camera).intrinsics
    return intr.fy / intr.fx


def calibrate_configuration(config: Configuration, algorithms=ALGORITHMS, mode: str = "oracle",
                            master_seed: int = 0, stride: int = 1,
                            images: ImageLoader | None = None) -> CalibrationRun:
    obs, dropped = [], []
    for i in range(len(config.cameras)):
        v, d = observe(config, i, mode, master_seed, stride, images)
        obs.append(v)
        dropped.append(d)
    run = CalibrationRun(config, mode, obs, dropped=dropped)
    for alg in algorithms:
        try:
            per_cam = []
            for i in range(len(config.cameras)):
                size = config.camera(i).intrinsics.size
                # Tsai treats the nominal pixel aspect ratio as known
                per_cam.append(calibrate(alg, obs[i], size, aspect=_aspect(config, i)))
            run.results[alg] = per_cam
            if config.is_stereo:
                run.stereo[alg] = stereo_extrinsics(per_cam[0], per_cam[1], obs[0], obs[1])
        except CalbenchError as exc:
            run.errors[alg] = f"{type(exc).__name__}: {exc}"
    return run


# ---------------------------------------------------------------------------
# Evaluation

METRIC_FIELDS = ("rpe_rms", "rpe_rms_coord", "focal", "principal", "distortion", "rotation", "translation",
                 "composite", "rmse_cal", "baseline_error")


@dataclass
class ResultRow:
    configuration: str
    algorithm: str
    mode: str
    n_views: int
    converged: bool
    rpe_rms: float = math.nan  # px, per-point Euclidean
    rpe_rms_coord: float = math.nan  # px, per coordinate
    focal: float = math.nan
    principal: float = math.nan
    distortion: float = math.nan
    rotation: float = math.nan
    translation: float = math.nan
    composite: float = math.nan
    rmse_cal: float = math.nan  # m, stereo only
    baseline_error: float = math.nan  # m, stereo only
    status: str = "ok"

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRow":
        kw = {}
        for f in fields(cls):
            v = d.get(f.name)
            kw[f.name] = math.nan if v is None and f.type in ("float",) else v
        return cls(**kw)


def _combine(reports: list[ParamErrorReport], n_views: list[int]) -> dict:
    """Pool per-camera parameter errors into one RMS per group."""
    counts = {"focal": [2] * len(reports), "principal": [2] * len(reports), "distortion": [5] * len(reports),
              "rotation": [3 * n for n in n_views], "translation": [3 * n for n in n_views],
              "composite": [r.length for r in reports]}
    out = {}
    for k, c in counts.items():
        num = sum(getattr(r, k) ** 2 * ci for r, ci in zip(reports, c))
        out[k] = math.sqrt(num / sum(c)) if sum(c) else 0.0
    return out


def stereo_rmse_cal(config: Configuration, obs_a: list[ViewObservations], obs_b: list[ViewObservations],
                    res_a: CalibResult, res_b: CalibResult, st: StereoResult) -> float:
    """Position error of every control point seen by both cameras, triangulated with the estimated rig."""
    world_board = config.board_poses()
    va = {v.frame_index: v for v in obs_a}
    vb = {v.frame_index: v for v in obs_b}
    sim, calc = [], []
    for f in st.frame_indices:
        a, b = va[f], vb[f]
        common, ia, ib = np.intersect1d(a.point_ids, b.point_ids, return_indices=True)
        if len(common) == 0:
            continue
        X = triangulate_points(res_a.camera, Pose.identity(), res_b.camera, st.relative,
                               a.image_uv[ia], b.image_uv[ib])
        Xgt = world_board[f].apply(np.column_stack([a.object_xy[ia], np.zeros(len(common))]))
        calc.append(X)
        sim.append(Xgt)
    if not sim:
        raise NoSharedFrames("no point is visible in both cameras")
    return rmse_cal(np.concatenate(sim), np.concatenate(calc))


def _alg_order(name: str):
    return (ALGORITHMS.index(name) if name in ALGORITHMS else len(ALGORITHMS), name)


def evaluate_run(run: CalibrationRun) -> list[ResultRow]:
    cfg = run.config
    rows = []
    for alg in sorted(set(run.results) | set(run.errors), key=_alg_order):
        if alg in run.errors:
            rows.append(ResultRow(cfg.name, alg, run.mode, 0, False, status=run.errors[alg]))
            continue
        per_cam = run.results[alg]
        try:
            sq, npts, reps = 0.0, 0, []
            for i, res in enumerate(per_cam):
                views = [v for v in run.observations[i] if v.frame_index in set(res.frame_indices)]
                n = sum(len(v) for v in views)
                sq += rpe_rms(res, views) ** 2 * n
                npts += n
                gt = cfg.gt_poses(i)
                reps.append(param_rmse(res, cfg.camera(i), {f: gt[f] for f in res.frame_indices}))
            row = ResultRow(cfg.name, alg, run.mode, min(len(r.frame_indices) for r in per_cam),
                            all(r.converged for r in per_cam), rpe_rms=math.sqrt(sq / npts),
                            rpe_rms_coord=math.sqrt(sq / npts / 2.0), **_combine(reps, [len(r.frame_indices)
                                                                                      for r in per_cam]))
            if cfg.is_stereo:
                st = run.stereo[alg]
                row.converged = row.converged and st.converged
                row.rmse_cal = stereo_rmse_cal(cfg, run.observations[0], run.observations[1], per_cam[0],
                                               per_cam[1], st)
                gt_rel = cfg.rig[1].compose(cfg.rig[0].inverse())
                row.baseline_error = float(np.linalg.norm(st.relative.translation - gt_rel.translation))
        except CalbenchError as exc:
            row = ResultRow(cfg.name, alg, run.mode, 0, False, status=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


@dataclass(eq=False)
class BenchmarkReport:
    rows: list[ResultRow]
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows], "conventions": self.conventions,
                "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkReport":
        return cls([ResultRow.from_dict(r) for r in d["rows"]], d.get("conventions", {}), d.get("metadata", {}))

    @property
    def failures(self) -> list[ResultRow]:
        return [r for r in self.rows if r.status != "ok"]


def _run_one(args):
    config, algorithms, mode, seed, stride = args
    try:
        run = calibrate_configuration(config, algorithms, mode, seed, stride)
    except CalbenchError as exc:
        return [ResultRow(config.name, a, mode, 0, False, status=f"{type(exc).__name__}: {exc}") for a in algorithms]
    return evaluate_run(run)


def run_benchmark(configs: list[Configuration], algorithms=ALGORITHMS, mode: str = "oracle", seed: int = 0,
                  stride: int = 1, jobs: int = 1, progress: Callable[[str], None] | None = None) -> BenchmarkReport:
    """Calibrate and evaluate every configuration (rendering on the fly in image mode)."""
    tasks = [(c, tuple(algorithms), mode, seed, stride) for c in configs]
    rows: list[ResultRow] = []
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            for c, r in zip(configs, ex.map(_run_one, tasks)):
                rows += r
                if progress:
                    progress(c.name)
    else:
        for t in tasks:
            rows += _run_one(t)
            if progress:
                progress(t[0].name)
    return BenchmarkReport(rows, metadata={"mode": mode, "seed": seed, "stride": stride,
                                           "algorithms": list(algorithms)})
