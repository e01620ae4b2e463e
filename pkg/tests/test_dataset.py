import hashlib
import json

import numpy as np
import pytest

from calbench.dataset import (PNG_COMPRESS_LEVEL, SCHEMA_VERSION, DatasetManifest, default_metadata,
                              read_dataset, read_json, write_dataset)
from calbench.errors import CorruptJson, DatasetExists, MissingFile, SchemaMismatch
from calbench.geometry import project_points
from calbench.patterns import decode_png, encode_png, object_points_array
from calbench.presets import fast, make_configuration


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def fast_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds") / "fast"
    return write_dataset(root, DatasetManifest(11, tuple(fast()), metadata=default_metadata()))


def test_layout_and_counts(fast_dataset):
    files = sorted(p.relative_to(fast_dataset).as_posix() for p in fast_dataset.rglob("*") if p.is_file())
    assert len([f for f in files if f.endswith(".png")]) == 24
    assert len([f for f in files if "/gt/" in f]) == 24
    meta = [f for f in files if not f.endswith(".png") and "/gt/" not in f]
    assert meta == ["manifest.json", "mono-rect-ch-clean/board.json", "mono-rect-ch-clean/camera_0/intrinsics.json"]
    assert "mono-rect-ch-clean/camera_0/frames/frame_0023.png" in files


def test_round_trip(fast_dataset):
    ds = read_dataset(fast_dataset)
    (cfg,) = ds.configurations
    assert cfg == fast()[0] and cfg.to_dict() == fast()[0].to_dict()
    assert ds.manifest.master_seed == 11 and ds.manifest.schema_version == SCHEMA_VERSION
    assert ds.camera(cfg.name, 0) == cfg.camera(0)
    gt = ds.gt_pose(cfg.name, 0, 7)
    np.testing.assert_allclose(gt.rotation, cfg.gt_poses(0)[7].rotation, atol=1e-12)
    np.testing.assert_allclose(gt.translation, cfg.gt_poses(0)[7].translation, rtol=1e-12)
    img = ds.image(cfg.name, 0, 3)
    assert img.shape == (768, 1024) and img.dtype == np.uint8


def test_gt_points_are_analytic(fast_dataset):
    ds = read_dataset(fast_dataset)
    cfg = ds.configurations[0]
    g = ds.gt(cfg.name, 0, 4)
    ids = np.array([p["id"] for p in g["points"]])
    xy = object_points_array(cfg.pattern)[ids]
    uv = project_points(cfg.camera(0), cfg.gt_poses(0)[4], np.column_stack([xy, np.zeros(len(xy))]))
    np.testing.assert_allclose([[p["u"], p["v"]] for p in g["points"]], uv, atol=1e-9)


def test_byte_deterministic(fast_dataset, tmp_path):
    again = write_dataset(tmp_path / "again", DatasetManifest(11, tuple(fast()), metadata=default_metadata()))
    assert tree_digest(again) == tree_digest(fast_dataset)


def test_png_reencode_stable(fast_dataset):
    data = next(fast_dataset.rglob("frame_0000.png")).read_bytes()
    assert encode_png(decode_png(data), PNG_COMPRESS_LEVEL) == data


def test_refuses_overwrite(fast_dataset, tmp_path):
    m = DatasetManifest(11, tuple(fast()))
    with pytest.raises(DatasetExists):
        write_dataset(fast_dataset, m)
    stranger = tmp_path / "home"
    stranger.mkdir()
    (stranger / "notes.txt").write_text("keep")
    with pytest.raises(DatasetExists):
        write_dataset(stranger, m, overwrite=True)
    assert (stranger / "notes.txt").read_text() == "keep"


def test_missing_frame(tmp_path):
    cfg = fast()[0]
    root = tmp_path / "ds"
    write_dataset(root, DatasetManifest(0, (cfg,)))
    victim = root / cfg.name / "camera_0" / "frames" / "frame_0005.png"
    victim.unlink()
    with pytest.raises(MissingFile, match="frame_0005.png"):
        read_dataset(root)
    ds = read_dataset(root, check_files=False)
    with pytest.raises(MissingFile, match="frame_0005.png"):
        ds.image(cfg.name, 0, 5)


def test_schema_and_corruption(tmp_path):
    m = DatasetManifest(0, (make_configuration(("rectilinear",), "sc", "noisy", 0.25),)).to_dict()
    m["schema_version"] = "synthcal-2"
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(SchemaMismatch):
        read_dataset(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(CorruptJson, match="manifest.json"):
        read_dataset(tmp_path)
    with pytest.raises(MissingFile):
        read_json(tmp_path / "absent.json")


def test_manifest_round_trip_precision():
    m = DatasetManifest(5, tuple(fast(0.3)), metadata={"x": 1})
    back = DatasetManifest.from_dict(json.loads(json.dumps(m.to_dict())))
    assert back == m and back.metadata == {"x": 1}
    with pytest.raises(ValueError):
        DatasetManifest(0, (fast()[0], fast()[0]))
