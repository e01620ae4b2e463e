"""Tabular (markdown / csv) and graphical rendering of benchmark reports."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .bench import BenchmarkReport, ResultRow
from .errors import InvalidSpec

COLUMNS = ("configuration", "algorithm", "mode", "n_views", "converged", "rpe_rms", "rpe_rms_coord", "focal",
           "principal", "distortion", "rotation", "translation", "composite", "rmse_cal", "baseline_error", "status")
HEADERS = {
    "rpe_rms": "rpe_rms [px]", "rpe_rms_coord": "rpe_rms_coord [px]", "focal": "focal [px]",
    "principal": "principal [px]", "rotation": "rotation [rad]", "translation": "translation [m]",
    "rmse_cal": "rmse_cal [m]", "baseline_error": "baseline_error [m]",
}
FORMATS = ("markdown", "csv")


def fmt(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def best_rows(rows: list[ResultRow]) -> set[int]:
    """Index of the lowest rpe_rms row within each configuration (successful rows only)."""
    best: dict[str, tuple[float, int]] = {}
    for k, r in enumerate(rows):
        if r.status != "ok" or math.isnan(r.rpe_rms):
            continue
        if r.configuration not in best or r.rpe_rms < best[r.configuration][0]:
            best[r.configuration] = (r.rpe_rms, k)
    return {k for _, k in best.values()}


def render_report(report: BenchmarkReport, format: str = "markdown") -> str:
    """Deterministic text table, one row per (configuration, algorithm), best rpe_rms marked."""
    if not report.rows:
        raise InvalidSpec("cannot render an empty report")
    if format not in FORMATS:
        raise InvalidSpec(f"unknown format {format!r}; choose from {FORMATS}")
    best = best_rows(report.rows)
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(COLUMNS) + ["best"])
        for k, r in enumerate(report.rows):
            w.writerow([fmt(getattr(r, c)) for c in COLUMNS] + [int(k in best)])
        return buf.getvalue()
    head = [HEADERS.get(c, c) for c in COLUMNS]
    lines = ["| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in head) + "|"]
    for k, r in enumerate(report.rows):
        cells = [fmt(getattr(r, c)) for c in COLUMNS]
        if k in best:
            i = COLUMNS.index("rpe_rms")
            cells[i] = f"**{cells[i]}**"
        lines.append("| " + " | ".join(cells) + " |")
    lines += ["", "Best rpe_rms per configuration in bold.", "", "Conventions:", ""]
    for key in sorted(report.conventions):
        lines.append(f"- `{key}`: {report.conventions[key]}")
    if report.metadata:
        lines += ["", "Run: " + ", ".join(f"{k}={report.metadata[k]}" for k in sorted(report.metadata))]
    return "\n".join(lines) + "\n"


def _grouped(rows: list[ResultRow], metric: str):
    configs, algs = [], []
    for r in rows:
        if r.configuration not in configs:
            configs.append(r.configuration)
        if r.algorithm not in algs:
            algs.append(r.algorithm)
    values = {(r.configuration, r.algorithm): getattr(r, metric) for r in rows if r.status == "ok"}
    return configs, algs, values


def _bar_figure(rows: list[ResultRow], metric: str, ylabel: str, path: Path, scale: float = 1.0) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    configs, algs, values = _grouped(rows, metric)
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(configs) * max(1, len(algs))), 4.0))
    width = 0.8 / max(1, len(algs))
    x = np.arange(len(configs))
    for k, alg in enumerate(algs):
        y = [values.get((c, alg), math.nan) * scale for c in configs]
        ax.bar(x + (k - (len(algs) - 1) / 2) * width, y, width, label=alg)
    ax.set_xticks(x)
    ax.set_xticklabels(configs, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def render_figures(report: BenchmarkReport, out_dir) -> list[Path]:
    """Bar charts of reprojection error (all rows) and triangulation error (stereo rows)."""
    if not report.rows:
        raise InvalidSpec("cannot plot an empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [_bar_figure(report.rows, "rpe_rms", "rpe_rms [px]", out / "rpe_rms.png"),
             _bar_figure(report.rows, "composite", "parameter RMSE (composite)", out / "param_rmse.png")]
    stereo = [r for r in report.rows if not math.isnan(r.rmse_cal)]
    if stereo:
        paths.append(_bar_figure(stereo, "rmse_cal", "rmse_cal [mm]", out / "rmse_cal.png", scale=1e3))
    return paths
