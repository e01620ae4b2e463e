"""Command-line driver: generate, calibrate, evaluate, report, all.

Exit codes: 0 success, 1 domain error or partial failure, 2 usage error.
Progress goes to stderr; machine output only to files.
"""

from __future__ import annotations

import argparse
import fnmatch
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

from .bench import BenchmarkReport, CalibrationRun, calibrate_configuration, evaluate_run
from .calib import ALGORITHMS
from .dataset import DatasetManifest, default_metadata, read_dataset, read_json, write_dataset, write_json
from .errors import CalbenchError
from .measurement import SOURCES
from .presets import PRESETS, preset_configurations
from .report import render_figures, render_report

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

OUT_ENV = "CALBENCH_OUT"  # overrides the default output root
REPORT_FORMATS = {"md": ("markdown", "report.md"), "csv": ("csv", "report.csv")}


class UsageError(Exception):
    """Bad arguments or run configuration (exit code 2)."""


@dataclass
class RunConfig:
    """Resolved options of one invocation; also the schema of the ``--config`` TOML file."""

    preset: str = "fast"
    scale: float | None = None
    seed: int | None = None
    dataset: str | None = None
    results: str | None = None
    report: str | None = None
    out: str | None = None
    configs: str | None = None  # comma-separated name patterns
    algorithms: str = ",".join(ALGORITHMS)
    mode: str = "oracle"
    stride: int = 1
    jobs: int = 1
    formats: str = "md,csv"
    overwrite: bool = False
    quiet: bool = False

    @property
    def algorithm_list(self) -> list[str]:
        algs = [a.strip() for a in self.algorithms.split(",") if a.strip()]
        if not algs:
            raise UsageError("at least one algorithm is required")
        bad = [a for a in algs if a not in ALGORITHMS]
        if bad:
            raise UsageError(f"unknown algorithm(s) {bad}; choose from {list(ALGORITHMS)}")
        return list(dict.fromkeys(algs))

    @property
    def format_list(self) -> list[str]:
        fm = [f.strip() for f in self.formats.split(",") if f.strip()]
        bad = [f for f in fm if f not in REPORT_FORMATS]
        if not fm or bad:
            raise UsageError(f"formats must be a non-empty subset of {sorted(REPORT_FORMATS)}")
        return fm

    def validate(self) -> None:
        self.algorithm_list
        self.format_list
        if self.mode not in SOURCES:
            raise UsageError(f"unknown mode {self.mode!r}; choose from {list(SOURCES)}")
        if self.preset not in PRESETS:
            raise UsageError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.stride < 1 or self.jobs < 1:
            raise UsageError("stride and jobs must be >= 1")
        if self.scale is not None and not self.scale > 0:
            raise UsageError("scale must be positive")

    def select(self, configurations):
        """Apply the name filter and the mode/pattern compatibility rule."""
        chosen = list(configurations)
        if self.configs:
            pats = [p.strip() for p in self.configs.split(",") if p.strip()]
            chosen = [c for c in chosen if any(fnmatch.fnmatchcase(c.name, p) for p in pats)]
            if not chosen:
                raise UsageError(f"no configuration matches {self.configs!r}")
        if self.mode == "oracle-centroid":
            bad = [c.name for c in chosen if not c.pattern.kind.is_circle_grid]
            if bad:
                raise UsageError(f"oracle-centroid mode needs circle grids; filter out {bad}")
        return chosen


def _out_root(cfg: RunConfig) -> Path:
    return Path(cfg.out or os.environ.get(OUT_ENV) or "calbench-out")


def _log(cfg: RunConfig, msg: str) -> None:
    if not cfg.quiet:
        print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# Argument parsing

def _add(p: argparse.ArgumentParser, *names: str) -> None:
    spec = {
        "preset": dict(choices=sorted(PRESETS), help="configuration preset"),
        "scale": dict(type=float, help="resolution scale (default per preset)"),
        "seed": dict(type=int, help="master seed (default 0; calibrate defaults to the dataset's)"),
        "dataset": dict(help="dataset directory"),
        "results": dict(help="directory of per-configuration calibration results"),
        "report": dict(help="report JSON file"),
        "out": dict(help=f"output path (default ${OUT_ENV} or ./calbench-out)"),
        "configs": dict(help="comma-separated configuration name patterns (fnmatch)"),
        "algorithms": dict(help=f"comma-separated subset of {','.join(ALGORITHMS)}"),
        "mode": dict(choices=SOURCES, help="measurement source"),
        "stride": dict(type=int, help="use every n-th frame"),
        "jobs": dict(type=int, help="parallel worker processes"),
        "formats": dict(help="comma-separated report formats (md,csv)"),
    }
    for n in names:
        if n == "overwrite":
            p.add_argument("--overwrite", action="store_true", default=None, help="replace an existing dataset")
        else:
            p.add_argument(f"--{n}", default=None, **spec[n])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calbench", description="Synthetic camera calibration benchmark.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with RunConfig keys (flags take precedence)")
    common.add_argument("-q", "--quiet", action="store_true", default=None, help="no progress output")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    cmds = {
        "generate": ("render a dataset", ("preset", "scale", "seed", "out", "configs", "jobs", "overwrite")),
        "calibrate": ("calibrate every configuration of a dataset",
                      ("dataset", "out", "configs", "algorithms", "mode", "seed", "stride", "jobs")),
        "evaluate": ("score calibration results against ground truth", ("dataset", "results", "out")),
        "report": ("render a report JSON as tables and figures", ("report", "out", "formats")),
        "all": ("generate, calibrate, evaluate and report in one go",
                ("preset", "scale", "seed", "dataset", "out", "configs", "algorithms", "mode", "stride", "jobs",
                 "formats", "overwrite")),
    }
    for name, (help_, opts) in cmds.items():
        p = sub.add_parser(name, help=help_, description=help_, parents=[common])
        _add(p, *opts)
    return parser


def resolve(ns: argparse.Namespace) -> RunConfig:
    """Flags override the config file, which overrides the defaults."""
    values = {}
    if getattr(ns, "config", None):
        try:
            with open(ns.config, "rb") as fh:
                values = tomllib.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"{ns.config}: {exc}") from None
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"{ns.config}: unknown key(s) {unknown}")
        if isinstance(values.get("algorithms"), list):
            values["algorithms"] = ",".join(values["algorithms"])
        if isinstance(values.get("configs"), list):
            values["configs"] = ",".join(values["configs"])
    for f in fields(RunConfig):
        v = getattr(ns, f.name, None)
        if v is not None:
            values[f.name] = v
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Commands

def cmd_generate(cfg: RunConfig, out: Path | None = None) -> Path:
    root = Path(out) if out else _out_root(cfg)
    configs = cfg.select(preset_configurations(cfg.preset, cfg.scale))
    seed = 0 if cfg.seed is None else cfg.seed
    manifest = DatasetManifest(seed, tuple(configs), metadata={**default_metadata(), "preset": cfg.preset})
    _log(cfg, f"generating {len(configs)} configuration(s) into {root}")
    done = [0]

    def progress(name):
        done[0] += 1
        _log(cfg, f"[{done[0]}/{len(configs)}] {name}")

    write_dataset(root, manifest, overwrite=bool(cfg.overwrite), jobs=cfg.jobs, progress=progress)
    return root


def _calibrate_task(args):
    root, name, algorithms, mode, seed, stride, out = args
    ds = read_dataset(root, check_files=False)
    config = ds.manifest.configuration(name)
    images = ds.image_loader(name) if mode == "image" else None
    run = calibrate_configuration(config, algorithms, mode, seed, stride, images)
    write_json(Path(out) / f"{name}.json", {"seed": seed, "stride": stride, **run.to_dict()})
    return name, dict(run.errors)


def cmd_calibrate(cfg: RunConfig, dataset: Path | None = None, out: Path | None = None) -> tuple[Path, int]:
    root = Path(dataset or cfg.dataset or "")
    if not str(root) or root == Path(""):
        raise UsageError("calibrate needs --dataset")
    ds = read_dataset(root, check_files=(cfg.mode == "image"))
    configs = cfg.select(ds.configurations)
    seed = ds.manifest.master_seed if cfg.seed is None else cfg.seed
    res_dir = Path(out) if out else _out_root(cfg)
    res_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(str(root), c.name, tuple(cfg.algorithm_list), cfg.mode, seed, cfg.stride, str(res_dir))
             for c in configs]
    failed = 0

    def collect(results):
        nonlocal failed
        for k, (name, errors) in enumerate(results, 1):
            failed += len(errors)
            _log(cfg, f"[{k}/{len(tasks)}] {name}" + (f"  failed: {sorted(errors)}" if errors else ""))

    if cfg.jobs == 1:
        collect(map(_calibrate_task, tasks))
    else:
        with ProcessPoolExecutor(cfg.jobs) as ex:
            collect(ex.map(_calibrate_task, tasks))
    return res_dir, failed


def cmd_evaluate(cfg: RunConfig, dataset: Path | None = None, results: Path | None = None,
                 out: Path | None = None) -> tuple[Path, BenchmarkReport]:
    root = Path(dataset or cfg.dataset or "")
    res_dir = Path(results or cfg.results or "")
    if root == Path("") or res_dir == Path(""):
        raise UsageError("evaluate needs --dataset and --results")
    ds = read_dataset(root, check_files=False)
    rows, meta = [], {}
    files = sorted(res_dir.glob("*.json"))
    by_name = {p.stem: p for p in files}
    names = [c.name for c in ds.configurations if c.name in by_name]
    if not names:
        raise UsageError(f"{res_dir} holds no results for this dataset")
    for name in names:
        d = read_json(by_name[name])
        run = CalibrationRun.from_dict(d, ds.manifest.configuration(name))
        rows += evaluate_run(run)
        meta = {"mode": d["mode"], "seed": d["seed"], "stride": d["stride"]}
        _log(cfg, f"evaluated {name}")
    meta["algorithms"] = list(dict.fromkeys(r.algorithm for r in rows))
    report = BenchmarkReport(rows, metadata=meta)
    path = Path(out) if out else _out_root(cfg) / "report.json"
    write_json(path, report.to_dict())
    return path, report


def cmd_report(cfg: RunConfig, report_path: Path | None = None, out: Path | None = None) -> list[Path]:
    path = Path(report_path or cfg.report or "")
    if path == Path(""):
        raise UsageError("report needs --report")
    report = BenchmarkReport.from_dict(read_json(path))
    out_dir = Path(out) if out else _out_root(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for f in cfg.format_list:
        fmt, filename = REPORT_FORMATS[f]
        (out_dir / filename).write_text(render_report(report, fmt))
        written.append(out_dir / filename)
    written += render_figures(report, out_dir / "figures")
    for p in written:
        _log(cfg, f"wrote {p}")
    return written


def cmd_all(cfg: RunConfig) -> int:
    root = _out_root(cfg)
    dataset = Path(cfg.dataset) if cfg.dataset else cmd_generate(cfg, root / "dataset")
    cmd_calibrate(cfg, dataset, root / "results")
    _, report = cmd_evaluate(cfg, dataset, root / "results", root / "report.json")
    cmd_report(cfg, root / "report.json", root)
    return _summarize(cfg, report)


def _summarize(cfg: RunConfig, report: BenchmarkReport) -> int:
    if report.failures:
        for r in report.failures:
            print(f"failed: {r.configuration} {r.algorithm}: {r.status}", file=sys.stderr)
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # --help (0) or usage error (2)
        return int(exc.code or 0)
    try:
        cfg = resolve(ns)
        if ns.command == "generate":
            cmd_generate(cfg)
            return 0
        if ns.command == "calibrate":
            _, failed = cmd_calibrate(cfg)
            return 1 if failed else 0
        if ns.command == "evaluate":
            _, report = cmd_evaluate(cfg)
            return _summarize(cfg, report)
        if ns.command == "report":
            cmd_report(cfg)
            return 0
        return cmd_all(cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"calbench: error: {exc}", file=sys.stderr)
        return 2
    except CalbenchError as exc:
        print(f"calbench: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"calbench: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
