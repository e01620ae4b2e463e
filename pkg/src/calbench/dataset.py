"""On-disk dataset layout and benchmark result files.

::

    manifest.json                                  (written last)
    <config>/board.json
    <config>/camera_<i>/intrinsics.json
    <config>/camera_<i>/extrinsics.json            (multi-camera rigs)
    <config>/camera_<i>/frames/frame_0000.png
    <config>/camera_<i>/gt/frame_0000.json

Files are byte-deterministic for a fixed master seed: JSON is written with
sorted keys and shortest round-trip floats, PNGs are grayscale with fixed
encoder settings and no ancillary chunks.
"""

from __future__ import annotations

import json
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .errors import CorruptJson, DatasetExists, InvalidSpec, MissingFile, SchemaMismatch
from .geometry import CameraModel, Pose
from .measurement import ORACLE_SIGMA, SEED_JITTER_PX
from .patterns import decode_png, encode_png
from .presets import Configuration, frame_seed
from .render import render_frame

SCHEMA_VERSION = "synthcal-1"
PNG_COMPRESS_LEVEL = 1


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")


def read_json(path: Path):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptJson(f"{path}: {exc}") from exc


def frame_name(frame: int, ext: str) -> str:
    return f"frame_{frame:04d}.{ext}"


def camera_dir(root: Path, config: str, camera: int) -> Path:
    return Path(root) / config / f"camera_{camera}"


@dataclass(frozen=True)
class DatasetManifest:
    master_seed: int
    configurations: tuple[Configuration, ...]
    schema_version: str = SCHEMA_VERSION
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        names = [c.name for c in self.configurations]
        if len(set(names)) != len(names):
            raise InvalidSpec("configuration names must be unique")
        object.__setattr__(self, "configurations", tuple(self.configurations))

    def configuration(self, name: str) -> Configuration:
        for c in self.configurations:
            if c.name == name:
                return c
        raise InvalidSpec(f"no configuration named {name!r}")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "master_seed": self.master_seed,
            "configurations": [c.to_dict() for c in self.configurations],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SchemaMismatch(f"schema_version {d.get('schema_version')!r}, expected {SCHEMA_VERSION!r}")
        return cls(int(d["master_seed"]), tuple(Configuration.from_dict(c) for c in d["configurations"]),
                   d["schema_version"], d.get("metadata", {}))


def default_metadata() -> dict:
    return {
        "generator": {"package": "calbench", "version": __version__},
        "png": {"mode": "L", "bit_depth": 8, "compress_level": PNG_COMPRESS_LEVEL},
        "oracle_sigma_px": dict(ORACLE_SIGMA),
        "image_seed_jitter_px": SEED_JITTER_PX,
        "world_frame": "camera_0",
    }


def write_configuration(root: Path, config: Configuration, master_seed: int,
                        compress_level: int = PNG_COMPRESS_LEVEL) -> int:
    """Render and write every frame of one configuration; returns the number of images."""
    base = Path(root) / config.name
    write_json(base / "board.json", {"pattern": config.pattern.to_dict(),
                                     "environment": config.environment.to_dict(),
                                     "trajectory": config.spiral.to_dict()})
    count = 0
    for i in range(len(config.cameras)):
        cdir = camera_dir(root, config.name, i)
        cam = config.camera(i)
        write_json(cdir / "intrinsics.json", {"preset": config.cameras[i], "scale": config.scale, **cam.to_dict()})
        if config.is_stereo:
            write_json(cdir / "extrinsics.json", {"world_to_camera": config.rig[i].to_dict()})
        (cdir / "frames").mkdir(parents=True, exist_ok=True)
        for f, pose in enumerate(config.gt_poses(i)):
            frame = render_frame(cam, pose, config.pattern, config.environment,
                                 frame_seed(master_seed, config.name, i, f), f)
            (cdir / "frames" / frame_name(f, "png")).write_bytes(encode_png(frame.image, compress_level))
            write_json(cdir / "gt" / frame_name(f, "json"), frame.gt_json())
            count += 1
    return count


def _write_task(args):
    root, config, seed = args
    return write_configuration(Path(root), config, seed)


def write_dataset(root, manifest: DatasetManifest, overwrite: bool = False, jobs: int = 1,
                  progress: Callable[[str], None] | None = None) -> Path:
    """Write the whole dataset; the manifest goes last so a partial tree is recognisable."""
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        if not overwrite:
            raise DatasetExists(f"{root} is not empty; pass overwrite to replace it")
        names = {c.name for c in manifest.configurations} | {"manifest.json"}
        if not (root / "manifest.json").exists() and not {p.name for p in root.iterdir()} <= names:
            raise DatasetExists(f"{root} does not look like a dataset; refusing to delete it")
        shutil.rmtree(root)
    root.mkdir(parents=True, exist_ok=True)
    tasks = [(str(root), c, manifest.master_seed) for c in manifest.configurations]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            for c, _ in zip(manifest.configurations, ex.map(_write_task, tasks)):
                if progress:
                    progress(c.name)
    else:
        for c, t in zip(manifest.configurations, tasks):
            _write_task(t)
            if progress:
                progress(c.name)
    write_json(root / "manifest.json", manifest.to_dict())
    return root


class Dataset:
    """A dataset on disk; images are decoded only when asked for."""

    def __init__(self, root, manifest: DatasetManifest):
        self.root = Path(root)
        self.manifest = manifest

    @property
    def configurations(self) -> tuple[Configuration, ...]:
        return self.manifest.configurations

    def camera(self, config: str, camera: int) -> CameraModel:
        return CameraModel.from_dict(read_json(camera_dir(self.root, config, camera) / "intrinsics.json"))

    def rig_pose(self, config: str, camera: int) -> Pose:
        path = camera_dir(self.root, config, camera) / "extrinsics.json"
        if not path.exists() and camera == 0:
            return Pose.identity()
        return Pose.from_dict(read_json(path)["world_to_camera"])

    def board(self, config: str) -> dict:
        return read_json(self.root / config / "board.json")

    def gt(self, config: str, camera: int, frame: int) -> dict:
        return read_json(camera_dir(self.root, config, camera) / "gt" / frame_name(frame, "json"))

    def gt_pose(self, config: str, camera: int, frame: int) -> Pose:
        g = self.gt(config, camera, frame)
        return Pose.from_rvec(np.asarray(g["rvec"]), np.asarray(g["tvec"]))

    def image_path(self, config: str, camera: int, frame: int) -> Path:
        return camera_dir(self.root, config, camera) / "frames" / frame_name(frame, "png")

    def image(self, config: str, camera: int, frame: int) -> np.ndarray:
        path = self.image_path(config, camera, frame)
        if not path.is_file():
            raise MissingFile(f"missing file: {path}")
        return decode_png(path.read_bytes())

    def image_loader(self, config: str) -> Callable[[int, int], np.ndarray]:
        return lambda camera, frame: self.image(config, camera, frame)

    def expected_files(self):
        for c in self.configurations:
            yield self.root / c.name / "board.json"
            for i in range(len(c.cameras)):
                d = camera_dir(self.root, c.name, i)
                yield d / "intrinsics.json"
                if c.is_stereo:
                    yield d / "extrinsics.json"
                for f in range(c.n_frames):
                    yield d / "frames" / frame_name(f, "png")
                    yield d / "gt" / frame_name(f, "json")


def read_dataset(root, check_files: bool = True) -> Dataset:
    """Open a dataset, validating the schema version and (optionally) that every file exists."""
    root = Path(root)
    manifest = DatasetManifest.from_dict(read_json(root / "manifest.json"))
    ds = Dataset(root, manifest)
    if check_files:
        for path in ds.expected_files():
            if not os.path.isfile(path):
                raise MissingFile(f"missing file: {path}")
    return ds
