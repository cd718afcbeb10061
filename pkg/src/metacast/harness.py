"""Reproducible experiment driver.

A run is: build data, meta-train, pretrain the transfer baseline, evaluate
all three models on every meta-test task, aggregate.  Every artifact is
stamped with the config hash and seed; (config, seed) fully determines every
emitted number.  Sweeps repeat runs along one axis into cell-private
directories and collect a wide table; axes that do not affect training reuse
the trained checkpoints across cells.

Config files are flat ``key = value`` text; see DEFAULT_KEYS for the schema.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BaselineConfig, finetune_eval_ti, pretrain_ti, train_ts
from .data import MetaDataset, Task, build_task, ingest_csv, load_manifest, save_manifest
from .lstm import ArchConfig, ParamSet, load_params, save_params
from .meta import Checkpoint, LearnableRates, MetaTrainConfig, adapt_and_eval, meta_train
from .metrics import TaskMetrics, aggregate
from .synthetic import (SynthConfig, manifest_entries, series_from_entry,
                        synth_meta_dataset, synth_support_sweep_tasks)

MODELS = ("ts_lstm", "ti_lstm", "proposed")
SWEEP_AXES = ("second_order_epochs", "linear_layers", "inner_steps",
              "hidden_size", "support_months")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synth"              # synth | manifest
    resolution_minutes: int = 15
    n_consumers: int = 50
    train_tasks: int = 40
    test_tasks: int = 72
    winter_peaking: bool = True
    support_stride_days: int = 7
    manifest: str = ""               # kind=manifest: path to manifest.json
    csv_files: str = ""              # ingest: comma-separated paths or glob


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    meta: MetaTrainConfig = field(default_factory=MetaTrainConfig)
    baseline_lr: float = 0.01
    baseline_train_epochs: int = 1
    baseline_finetune_epochs: int = 1
    baseline_pretrain_epochs: int = 150
    baseline_batch_size: int = 32
    eval_inner_steps: int | None = None
    sweep_axis: str = ""
    sweep_values: tuple[int, ...] = ()
    seed: int = 0

    def baseline(self, kind: str) -> BaselineConfig:
        return BaselineConfig(
            kind=kind, lr=self.baseline_lr,
            train_epochs=self.baseline_train_epochs,
            finetune_epochs=self.baseline_finetune_epochs,
            pretrain_epochs=self.baseline_pretrain_epochs,
            batch_size=self.baseline_batch_size,
            arch=self.arch, seed=self.seed)

    def synth(self) -> SynthConfig:
        return SynthConfig(
            n_consumers=self.data.n_consumers,
            train_tasks=self.data.train_tasks,
            test_tasks=self.data.test_tasks,
            seed=self.seed,
            resolution_minutes=self.data.resolution_minutes,
            winter_peaking=self.data.winter_peaking,
            support_stride_days=self.data.support_stride_days)


# ---------------------------------------------------------------------------
# Flat key/value config text.
# ---------------------------------------------------------------------------

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_scalar(key: str, raw: str, kind: type):
    try:
        if kind is bool:
            return _BOOL[raw.strip().lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_config(text: str) -> ExperimentConfig:
    """Parse `key = value` lines (# comments) into an ExperimentConfig."""
    items: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        items[key.strip()] = value.strip()

    def take(key: str, kind: type, default):
        if key not in items:
            return default
        return _parse_scalar(key, items.pop(key), kind)

    data = DataConfig(
        kind=take("data.kind", str, "synth"),
        resolution_minutes=take("data.resolution_minutes", int, 15),
        n_consumers=take("data.n_consumers", int, 50),
        train_tasks=take("data.train_tasks", int, 40),
        test_tasks=take("data.test_tasks", int, 72),
        winter_peaking=take("data.winter_peaking", bool, True),
        support_stride_days=take("data.support_stride_days", int, 7),
        manifest=take("data.manifest", str, ""),
        csv_files=take("data.csv_files", str, ""),
    )
    if data.kind not in ("synth", "manifest"):
        raise ConfigError(f"data.kind: expected synth|manifest, got {data.kind!r}")
    day = 1440 // data.resolution_minutes
    arch = ArchConfig(
        hidden_size=take("arch.hidden_size", int, 32),
        input_len=take("arch.input_len", int, 7 * day),
        output_len=take("arch.output_len", int, day),
        num_linear_layers=take("arch.num_linear_layers", int, 1),
    )
    n_epochs = take("meta.epochs", int, 150)
    meta = MetaTrainConfig(
        n_epochs=n_epochs,
        inner_steps=take("meta.inner_steps", int, 1),
        first_order_epochs=take("meta.first_order_epochs", int, min(50, n_epochs)),
        gamma=take("meta.gamma", float, 0.1),
        alpha_init=take("meta.alpha_init", float, 0.01),
        beta_max=take("meta.beta_max", float, 1e-2),
        beta_min=take("meta.beta_min", float, 1e-5),
        mode=take("meta.mode", str, "maml_pp"),
        seed=take("seed", int, 0),
    )
    sweep_axis = take("sweep.axis", str, "")
    raw_values = take("sweep.values", str, "")
    sweep_values = tuple(int(v) for v in raw_values.split(",") if v.strip()) if raw_values else ()
    if sweep_axis and sweep_axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis: expected one of {SWEEP_AXES}, got {sweep_axis!r}")
    cfg = ExperimentConfig(
        data=data, arch=arch, meta=meta,
        baseline_lr=take("baseline.lr", float, 0.01),
        baseline_train_epochs=take("baseline.train_epochs", int, 1),
        baseline_finetune_epochs=take("baseline.finetune_epochs", int, 1),
        baseline_pretrain_epochs=take("baseline.pretrain_epochs", int, 150),
        baseline_batch_size=take("baseline.batch_size", int, 32),
        eval_inner_steps=take("eval.inner_steps", int, None),
        sweep_axis=sweep_axis, sweep_values=sweep_values,
        seed=meta.seed,
    )
    items.pop("out", None)  # accepted in files, overridden by --out
    if items:
        raise ConfigError(f"unknown config keys: {sorted(items)}")
    return cfg


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    cfg = parse_config(Path(path).read_text())
    if seed_override is not None:
        cfg = with_seed(cfg, seed_override)
    return cfg


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, seed=seed, meta=replace(cfg.meta, seed=seed))


def config_lines(cfg: ExperimentConfig) -> list[str]:
    doc = {
        "data.kind": cfg.data.kind,
        "data.resolution_minutes": cfg.data.resolution_minutes,
        "data.n_consumers": cfg.data.n_consumers,
        "data.train_tasks": cfg.data.train_tasks,
        "data.test_tasks": cfg.data.test_tasks,
        "data.winter_peaking": cfg.data.winter_peaking,
        "data.support_stride_days": cfg.data.support_stride_days,
        "data.manifest": cfg.data.manifest,
        "data.csv_files": cfg.data.csv_files,
        "arch.hidden_size": cfg.arch.hidden_size,
        "arch.input_len": cfg.arch.input_len,
        "arch.output_len": cfg.arch.output_len,
        "arch.num_linear_layers": cfg.arch.num_linear_layers,
        "meta.epochs": cfg.meta.n_epochs,
        "meta.inner_steps": cfg.meta.inner_steps,
        "meta.first_order_epochs": cfg.meta.first_order_epochs,
        "meta.gamma": cfg.meta.gamma,
        "meta.alpha_init": cfg.meta.alpha_init,
        "meta.beta_max": cfg.meta.beta_max,
        "meta.beta_min": cfg.meta.beta_min,
        "meta.mode": cfg.meta.mode,
        "baseline.lr": cfg.baseline_lr,
        "baseline.train_epochs": cfg.baseline_train_epochs,
        "baseline.finetune_epochs": cfg.baseline_finetune_epochs,
        "baseline.pretrain_epochs": cfg.baseline_pretrain_epochs,
        "baseline.batch_size": cfg.baseline_batch_size,
        "sweep.axis": cfg.sweep_axis,
        "sweep.values": ",".join(str(v) for v in cfg.sweep_values),
        "seed": cfg.seed,
    }
    return [f"{k} = {v}" for k, v in sorted(doc.items())]


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256("\n".join(config_lines(cfg)).encode()).hexdigest()[:16]


def data_hash(cfg: ExperimentConfig) -> str:
    lines = [l for l in config_lines(cfg) if l.startswith("data.") or l.startswith("seed")]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Data build.
# ---------------------------------------------------------------------------

def build_dataset(cfg: ExperimentConfig) -> MetaDataset:
    if cfg.data.kind == "synth":
        return synth_meta_dataset(cfg.synth())
    entries = load_manifest(cfg.data.manifest)
    base = Path(cfg.data.manifest).parent
    train, test = [], []
    for entry in entries:
        if "file" in entry:
            series = ingest_csv([base / entry["file"]])[0]
        else:
            series = series_from_entry(entry)
        task = build_task(series, support_months=entry.get("support_months", 0),
                          stride_days=cfg.data.support_stride_days, task_id=entry["id"])
        (train if entry["role"] == "train" else test).append(task)
    return MetaDataset(train_tasks=train, test_tasks=test)


# ---------------------------------------------------------------------------
# Artifact writers.
# ---------------------------------------------------------------------------

def _write_metrics_csv(path, rows: list[tuple[str, TaskMetrics]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "task_id", "mse", "mape_pct", "malpe_pct", "n_points"])
        for model, m in rows:
            w.writerow([model, m.task_id, repr(m.mse), repr(m.mape_pct),
                        repr(m.malpe_pct), m.n_points])


def read_metrics_csv(path) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["model"], []).append(
                {"task_id": row["task_id"], "mse": float(row["mse"]),
                 "mape_pct": float(row["mape_pct"]), "malpe_pct": float(row["malpe_pct"]),
                 "n_points": int(row["n_points"])})
    return out


def _stamp(out: Path, cfg: ExperimentConfig, stage: str, seconds: float) -> None:
    meta_path = out / "run_meta.json"
    doc = json.loads(meta_path.read_text()) if meta_path.exists() else {
        "config_hash": config_hash(cfg), "data_hash": data_hash(cfg),
        "seed": cfg.seed, "stages": {},
        "versions": {"metacast": __version__, "numpy": np.__version__,
                     "python": sys.version.split()[0]},
    }
    doc["stages"][stage] = {"wall_time_s": round(seconds, 3)}
    meta_path.write_text(json.dumps(doc, indent=1))
    (out / "config.txt").write_text("\n".join(config_lines(cfg)) + "\n")


def _save_checkpoint(path, ckpt: Checkpoint) -> None:
    save_params(path, ckpt.theta0, ckpt.arch, extra={
        "learned_rates": ckpt.rates.value_matrix().tolist(),
        "rate_layers": ckpt.rates.layer_names,
        "train_config": asdict(ckpt.config),
        "history": ckpt.history,
    })


def load_checkpoint(path) -> Checkpoint:
    theta, arch, extra = load_params(path)
    rates = LearnableRates.from_matrix(extra["rate_layers"], np.asarray(extra["learned_rates"]))
    cfg = MetaTrainConfig(**extra["train_config"])
    return Checkpoint(theta, rates, arch, cfg, extra.get("history", []))


# ---------------------------------------------------------------------------
# Stages and the composed run.
# ---------------------------------------------------------------------------

def stage_train(cfg: ExperimentConfig, out: Path, data: MetaDataset | None = None) -> Checkpoint:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    data = data or build_dataset(cfg)
    ckpt, _ = meta_train(cfg.meta, data, cfg.arch)
    _save_checkpoint(out / "checkpoint.json", ckpt)
    _stamp(out, cfg, "train", time.perf_counter() - t0)
    return ckpt


def stage_baseline(cfg: ExperimentConfig, out: Path, data: MetaDataset | None = None) -> ParamSet:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    data = data or build_dataset(cfg)
    ti = pretrain_ti(data.train_tasks, cfg.baseline("task_independent"))
    save_params(out / "ti_checkpoint.json", ti, cfg.arch)
    _stamp(out, cfg, "baseline", time.perf_counter() - t0)
    return ti


def evaluate_models(cfg: ExperimentConfig, test_tasks: list[Task],
                    ckpt: Checkpoint | None, ti: ParamSet | None) -> list[tuple[str, TaskMetrics]]:
    """Per-task metrics for every available model, in stable order."""
    rows: list[tuple[str, TaskMetrics]] = []
    ts_cfg = cfg.baseline("task_specific")
    for task in test_tasks:
        rows.append(("ts_lstm", train_ts(task, ts_cfg)))
    if ti is not None:
        ti_cfg = cfg.baseline("task_independent")
        for task in test_tasks:
            rows.append(("ti_lstm", finetune_eval_ti(ti, task, ti_cfg)))
    if ckpt is not None:
        for task in test_tasks:
            rows.append(("proposed", adapt_and_eval(ckpt, task, cfg.eval_inner_steps)))
    return rows


def stage_eval(cfg: ExperimentConfig, out: Path, data: MetaDataset | None = None,
               ckpt: Checkpoint | None = None, ti: ParamSet | None = None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    data = data or build_dataset(cfg)
    if ckpt is None and (out / "checkpoint.json").exists():
        ckpt = load_checkpoint(out / "checkpoint.json")
    if ti is None and (out / "ti_checkpoint.json").exists():
        ti, _, _ = load_params(out / "ti_checkpoint.json")
    rows = evaluate_models(cfg, data.test_tasks, ckpt, ti)
    _write_metrics_csv(out / "metrics_per_task.csv", rows)
    agg = {}
    for model in MODELS:
        results = [m for name, m in rows if name == model]
        if results:
            agg[model] = aggregate(results, group_by_month=True).to_dict()
    (out / "aggregate.json").write_text(json.dumps(agg, indent=1))
    _stamp(out, cfg, "eval", time.perf_counter() - t0)
    return agg


@dataclass
class RunArtifacts:
    out_dir: Path
    checkpoint: Checkpoint
    aggregate: dict

    def mean_mse(self, model: str) -> float:
        return self.aggregate[model]["mean"]["mse"]


def run(cfg: ExperimentConfig, out_dir) -> RunArtifacts:
    """Full pipeline: data, meta-train, TI pretrain, evaluate, aggregate."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = build_dataset(cfg)
    ckpt = stage_train(cfg, out, data)
    ti = stage_baseline(cfg, out, data)
    agg = stage_eval(cfg, out, data, ckpt, ti)
    return RunArtifacts(out, ckpt, agg)


# ---------------------------------------------------------------------------
# Sweeps.
# ---------------------------------------------------------------------------

def _cell_config(cfg: ExperimentConfig, axis: str, value: int) -> ExperimentConfig:
    if axis == "second_order_epochs":
        if not 0 <= value <= cfg.meta.n_epochs:
            raise ConfigError(f"second_order_epochs {value} outside 0..{cfg.meta.n_epochs}")
        return replace(cfg, meta=replace(cfg.meta, first_order_epochs=cfg.meta.n_epochs - value))
    if axis == "linear_layers":
        return replace(cfg, arch=replace(cfg.arch, num_linear_layers=value))
    if axis == "inner_steps":
        return replace(cfg, meta=replace(cfg.meta, inner_steps=value),
                       baseline_train_epochs=value, baseline_finetune_epochs=value)
    if axis == "hidden_size":
        return replace(cfg, arch=replace(cfg.arch, hidden_size=value))
    if axis == "support_months":
        return cfg  # training unchanged; cells swap the test tasks
    raise ConfigError(f"unknown sweep axis {axis!r}")


def sweep(cfg: ExperimentConfig, out_dir) -> list[dict]:
    """One run per axis value with a shared data seed; support_months reuses
    the shared trained models and only rebuilds the test tasks."""
    if len(cfg.sweep_values) < 2:
        raise ConfigError("sweep needs at least 2 values")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    axis = cfg.sweep_axis
    shared_ckpt = shared_ti = None
    shared_data = None
    if axis == "support_months":
        shared_data = build_dataset(cfg)
        shared_dir = out / "shared_training"
        shared_ckpt = stage_train(cfg, shared_dir, shared_data)
        shared_ti = stage_baseline(cfg, shared_dir, shared_data)

    table: list[dict] = []
    for value in cfg.sweep_values:
        cell_dir = out / f"cell_{axis}_{value}"
        row: dict = {"axis": axis, "value": value}
        try:
            cell_cfg = _cell_config(cfg, axis, value)
            if axis == "support_months":
                tasks = synth_support_sweep_tasks(cfg.synth(), value)
                cell_dir.mkdir(parents=True, exist_ok=True)
                rows = evaluate_models(cell_cfg, tasks, shared_ckpt, shared_ti)
                _write_metrics_csv(cell_dir / "metrics_per_task.csv", rows)
                agg = {}
                for model in MODELS:
                    results = [m for name, m in rows if name == model]
                    agg[model] = aggregate(results).to_dict()
                (cell_dir / "aggregate.json").write_text(json.dumps(agg, indent=1))
                _stamp(cell_dir, cell_cfg, "eval", 0.0)
            else:
                agg = run(cell_cfg, cell_dir).aggregate
            for model in MODELS:
                if model in agg:
                    for metric in ("mse", "mape_pct", "malpe_pct"):
                        row[f"{model}_{metric}"] = agg[model]["mean"][metric]
                        row[f"{model}_{metric}_std"] = agg[model]["std"][metric]
            row["status"] = "ok"
        except Exception as exc:  # a failed cell is marked, not fatal
            row["status"] = f"failed: {exc}"
        table.append(row)

    cols = ["axis", "value", "status"] + [
        f"{m}_{k}{s}" for m in MODELS for k in ("mse", "mape_pct", "malpe_pct") for s in ("", "_std")]
    with open(out / "sweep_table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in table:
            w.writerow({c: row.get(c, "") for c in cols})
    return table


# ---------------------------------------------------------------------------
# Report: boxplot data and a markdown summary over completed runs.
# ---------------------------------------------------------------------------

def _quartiles(values: np.ndarray) -> dict[str, float]:
    qs = np.percentile(values, [0, 25, 50, 75, 100], method="linear")
    return dict(zip(("min", "q1", "median", "q3", "max"), map(float, qs)))


def report(run_dirs, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    hashes = set()
    for d in run_dirs:
        d = Path(d)
        metrics = d / "metrics_per_task.csv"
        meta_file = d / "run_meta.json"
        if not metrics.exists() or not meta_file.exists():
            raise FileNotFoundError(f"{d}: missing metrics_per_task.csv or run_meta.json")
        meta = json.loads(meta_file.read_text())
        hashes.add(meta["data_hash"])
        runs.append((d, read_metrics_csv(metrics)))
    if len(hashes) > 1:
        raise ValueError(f"refusing to merge runs with different data hashes: {sorted(hashes)}")

    pooled: dict[str, dict[str, list[float]]] = {}
    for _, per_model in runs:
        for model, rows in per_model.items():
            slot = pooled.setdefault(model, {"mse": [], "mape_pct": [], "malpe_pct": []})
            for r in rows:
                for metric in slot:
                    slot[metric].append(r[metric])

    with open(out / "boxplot_data.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "metric", "min", "q1", "median", "q3", "max", "n"])
        for model in MODELS:
            if model not in pooled:
                continue
            for metric, values in pooled[model].items():
                q = _quartiles(np.asarray(values))
                w.writerow([model, metric, repr(q["min"]), repr(q["q1"]),
                            repr(q["median"]), repr(q["q3"]), repr(q["max"]), len(values)])

    lines = ["# Run summary", "",
             f"Runs: {', '.join(str(d) for d, _ in runs)}", "",
             "| model | MSE | MAPE % | MALPE % | tasks |",
             "|---|---|---|---|---|"]
    for model in MODELS:
        if model not in pooled:
            continue
        vals = pooled[model]
        n = len(vals["mse"])
        cells = []
        for metric in ("mse", "mape_pct", "malpe_pct"):
            a = np.asarray(vals[metric])
            cells.append(f"{a.mean():.4f} ± {a.std(ddof=1) if n > 1 else 0.0:.4f}")
        lines.append(f"| {model} | {cells[0]} | {cells[1]} | {cells[2]} | {n} |")
    (out / "summary.md").write_text("\n".join(lines) + "\n")
    return out / "boxplot_data.csv"


# ---------------------------------------------------------------------------
# Manifest generation entry points (synth / ingest subcommands).
# ---------------------------------------------------------------------------

def stage_synth(cfg: ExperimentConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    save_manifest(path, manifest_entries(cfg.synth()))
    _stamp(out, cfg, "synth", 0.0)
    return path


def stage_ingest(cfg: ExperimentConfig, out: Path) -> Path:
    from glob import glob
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.data.csv_files
    if not spec:
        raise ConfigError("data.csv_files: required for ingest")
    paths: list[str] = []
    for part in spec.split(","):
        part = part.strip()
        matched = sorted(glob(part))
        if not matched:
            raise ConfigError(f"data.csv_files: no files match {part!r}")
        paths.extend(matched)
    series = ingest_csv(paths)
    entries = []
    for p, s in zip(paths, series):
        entries.append({"id": s.name, "role": "test", "support_months": 0,
                        "file": str(Path(p).resolve())})
    path = out / "manifest.json"
    save_manifest(path, entries)
    _stamp(out, cfg, "ingest", 0.0)
    return path
