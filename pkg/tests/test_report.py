import csv
import io
import math

import pytest

from calbench.bench import BenchmarkReport, ResultRow
from calbench.errors import InvalidSpec
from calbench.report import COLUMNS, render_figures, render_report


def row(config, alg, rpe, **kw):
    return ResultRow(config, alg, "oracle", 12, True, rpe_rms=rpe, rpe_rms_coord=rpe / math.sqrt(2),
                     focal=1.23456789, principal=0.5, distortion=1e-3, rotation=2e-3, translation=3e-4,
                     composite=0.25, **kw)


@pytest.fixture
def report():
    return BenchmarkReport([row("mono-rect-ch-clean", "zhang", 0.1512345678),
                            row("mono-rect-ch-clean", "full", 0.1412345678)], metadata={"seed": 1})


def test_markdown_two_rows_best_marked(report):
    text = render_report(report)
    lines = text.splitlines()
    body = [ln for ln in lines[2:] if ln.startswith("| mono")]
    assert len(body) == 2
    assert "**0.141235**" in body[1] and "**" not in body[0]
    assert lines[0].startswith("| configuration | algorithm | mode")
    assert "Run: seed=1" in text and "`rpe_rms`" in text


def test_csv_round_trip(report):
    parsed = list(csv.DictReader(io.StringIO(render_report(report, "csv"))))
    assert list(parsed[0]) == list(COLUMNS) + ["best"]
    assert [p["best"] for p in parsed] == ["0", "1"]
    for p, r in zip(parsed, report.rows):
        for c in ("rpe_rms", "rpe_rms_coord", "focal", "principal", "distortion", "rotation", "translation"):
            assert float(p[c]) == pytest.approx(getattr(r, c), rel=5e-6)
        assert p["rmse_cal"] == "" and p["converged"] == "yes"


def test_best_is_per_configuration():
    rep = BenchmarkReport([row("a", "zhang", 0.3), row("a", "full", 0.2), row("b", "zhang", 0.1),
                           row("b", "full", 0.4), ResultRow("b", "tsai", "oracle", 0, False, status="RACDegenerate")])
    best = [p["best"] for p in csv.DictReader(io.StringIO(render_report(rep, "csv")))]
    assert best == ["0", "1", "1", "0", "0"]


def test_deterministic(report):
    assert render_report(report) == render_report(report)
    assert render_report(report, "csv") == render_report(report, "csv")


def test_rejections(report):
    with pytest.raises(InvalidSpec):
        render_report(BenchmarkReport([]))
    with pytest.raises(InvalidSpec):
        render_report(report, "html")


def test_figures(tmp_path):
    rep = BenchmarkReport([row("stereo-rect-rect-ch-clean", "zhang", 0.2, rmse_cal=1e-3),
                           row("mono-rect-ch-clean", "zhang", 0.2)])
    paths = render_figures(rep, tmp_path / "fig")
    assert sorted(p.name for p in paths) == ["param_rmse.png", "rmse_cal.png", "rpe_rms.png"]
    for p in paths:
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    again = render_figures(rep, tmp_path / "fig2")
    assert [p.read_bytes() for p in paths] == [p.read_bytes() for p in again]
