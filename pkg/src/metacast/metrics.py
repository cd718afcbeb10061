"""Per-task forecast metrics and across-task aggregation.

MAPE penalizes over-forecasts more than under-forecasts of the same ratio;
the log-ratio metric (here "malpe") treats them symmetrically:
|log(f/y)| = |log(y/f)|.  Both are invariant under a common positive
rescaling, so per-task scaling does not change them; MSE is reported in
scaled units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

EPSILON = 1e-8  # clamp floor for values entering ratio metrics

log = logging.getLogger(__name__)

# Clamping is reported: once loudly per process, then at debug level, with the
# running total always available here.
clamp_count = 0
_clamp_warned = False


class MetricError(ValueError):
    pass


def _ratio_inputs(forecast, actual, clamp_forecast: bool):
    global clamp_count, _clamp_warned
    f = np.asarray(forecast, dtype=np.float64).reshape(-1)
    y = np.asarray(actual, dtype=np.float64).reshape(-1)
    if f.shape != y.shape:
        raise MetricError(f"forecast/actual length mismatch: {f.shape} vs {y.shape}")
    if f.size == 0:
        raise MetricError("empty inputs")
    if not (np.isfinite(f).all() and np.isfinite(y).all()):
        raise MetricError("non-finite values in metric inputs")
    n_clamped = int((y < EPSILON).sum())
    if clamp_forecast:
        n_clamped += int((f < EPSILON).sum())
        f = np.maximum(f, EPSILON)
    y = np.maximum(y, EPSILON)
    if n_clamped:
        clamp_count += n_clamped
        if not _clamp_warned:
            log.warning("ratio metric clamped %d values below %.0e "
                        "(further clamps logged at DEBUG; total in metrics.clamp_count)",
                        n_clamped, EPSILON)
            _clamp_warned = True
        else:
            log.debug("ratio metric clamped %d values below %.0e", n_clamped, EPSILON)
    return f, y


def mse(forecast, actual) -> float:
    f = np.asarray(forecast, dtype=np.float64).reshape(-1)
    y = np.asarray(actual, dtype=np.float64).reshape(-1)
    if f.shape != y.shape or f.size == 0:
        raise MetricError(f"forecast/actual length mismatch: {f.shape} vs {y.shape}")
    return float(np.mean((f - y) ** 2))


def mape(forecast, actual) -> float:
    """100/n * sum |f_i - y_i| / y_i, in percent."""
    f, y = _ratio_inputs(forecast, actual, clamp_forecast=False)
    return float(100.0 * np.mean(np.abs(f - y) / y))


def malpe(forecast, actual) -> float:
    """100/n * sum |ln(f_i / y_i)|, in percent; symmetric in its arguments."""
    f, y = _ratio_inputs(forecast, actual, clamp_forecast=True)
    return float(100.0 * np.mean(np.abs(np.log(f / y))))


@dataclass
class TaskMetrics:
    task_id: str
    mse: float
    mape_pct: float
    malpe_pct: float
    n_points: int
    query_month: int | None = None

    def as_row(self) -> dict:
        return {"task_id": self.task_id, "mse": self.mse, "mape_pct": self.mape_pct,
                "malpe_pct": self.malpe_pct, "n_points": self.n_points}


def task_metrics(task, pred: np.ndarray) -> TaskMetrics:
    """Score a [n_query, T_O] prediction against the task's query targets."""
    qy = np.stack([s.y for s in task.query])
    if pred.shape != qy.shape:
        raise MetricError(f"prediction shape {pred.shape} != query targets {qy.shape}")
    return TaskMetrics(
        task_id=task.id,
        mse=mse(pred, qy),
        mape_pct=mape(pred, qy),
        malpe_pct=malpe(pred, qy),
        n_points=qy.size,
        query_month=task.query_month,
    )


@dataclass
class AggregateReport:
    n_tasks: int
    mean: dict[str, float]
    std: dict[str, float]
    per_month: dict[int, dict[str, float]] | None = None

    def to_dict(self) -> dict:
        doc = {"n_tasks": self.n_tasks, "mean": self.mean, "std": self.std}
        if self.per_month is not None:
            doc["per_month"] = {str(m): v for m, v in sorted(self.per_month.items())}
        return doc


_METRIC_FIELDS = ("mse", "mape_pct", "malpe_pct")


def write_report_csv(path, results: list["TaskMetrics"]) -> None:
    """One row per task plus mean/std footer rows."""
    import csv

    rep = aggregate(results)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_id", "mse", "mape_pct", "malpe_pct", "n_points"])
        for r in results:
            w.writerow([r.task_id, repr(r.mse), repr(r.mape_pct),
                        repr(r.malpe_pct), r.n_points])
        w.writerow(["mean", repr(rep.mean["mse"]), repr(rep.mean["mape_pct"]),
                    repr(rep.mean["malpe_pct"]), ""])
        w.writerow(["std", repr(rep.std["mse"]), repr(rep.std["mape_pct"]),
                    repr(rep.std["malpe_pct"]), ""])


def write_report_json(path, results: list["TaskMetrics"],
                      group_by_month: bool = False) -> None:
    """Per-task rows plus the aggregate block."""
    import json

    doc = {"tasks": [r.as_row() for r in results],
           "aggregate": aggregate(results, group_by_month=group_by_month).to_dict()}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def aggregate(results: list[TaskMetrics], group_by_month: bool = False) -> AggregateReport:
    """Across-task mean and sample standard deviation (0 for a single task)."""
    if not results:
        raise MetricError("aggregate: no task results")
    cols = {m: np.array([getattr(r, m) for r in results]) for m in _METRIC_FIELDS}
    mean = {m: float(v.mean()) for m, v in cols.items()}
    std = {m: float(v.std(ddof=1)) if len(v) > 1 else 0.0 for m, v in cols.items()}
    per_month = None
    if group_by_month:
        per_month = {}
        for month in sorted({r.query_month for r in results if r.query_month is not None}):
            sub = [r for r in results if r.query_month == month]
            per_month[month] = {m: float(np.mean([getattr(r, m) for r in sub]))
                                for m in _METRIC_FIELDS}
            per_month[month]["n_tasks"] = len(sub)
    return AggregateReport(n_tasks=len(results), mean=mean, std=std, per_month=per_month)
