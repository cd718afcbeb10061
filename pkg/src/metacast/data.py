"""Task construction from raw load series.

A task splits one series into a support set of non-overlapping weekly windows
(stride 7 days, each sample needing 8 days: week in, day out) and a fixed
query set of 7 samples whose inputs start on consecutive days (stride 1 day)
over the trailing 14 days.  All values are divided by the per-task scale, the
maximum reading over the support region, so ratio metrics are unchanged and
magnitudes land in (0, 1].
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone

import numpy as np

MANIFEST_FORMAT_VERSION = 1
QUERY_DAYS = 7          # samples in every query set
QUERY_SPAN_DAYS = 14    # 7 stride-1 inputs of 7 days + 7 output days
SAMPLE_DAYS = 8         # one sample consumes a week of input + a day of output
DAYS_PER_MONTH = 30     # task-length arithmetic only


class DataError(ValueError):
    """Malformed or insufficient input data."""


@dataclass
class TimeSeries:
    """Gap-free energy readings at a fixed resolution."""

    start: datetime
    values: np.ndarray
    resolution_minutes: int = 15
    name: str = "series"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.start.tzinfo is None:
            self.start = self.start.replace(tzinfo=timezone.utc)
        if (self.values < 0).any():
            raise DataError(f"{self.name}: negative readings")
        if not np.isfinite(self.values).all():
            raise DataError(f"{self.name}: non-finite readings")
        if 1440 % self.resolution_minutes != 0:
            raise DataError(f"{self.name}: resolution {self.resolution_minutes} does not divide a day")

    @property
    def samples_per_day(self) -> int:
        return 1440 // self.resolution_minutes

    def timestamp(self, index: int) -> datetime:
        return self.start + timedelta(minutes=index * self.resolution_minutes)


@dataclass
class ForecastSample:
    """One week of readings and the following day."""

    x: np.ndarray
    y: np.ndarray


@dataclass
class Task:
    """One series split into support/query, with its scale divisor."""

    id: str
    support: list[ForecastSample]
    query: list[ForecastSample]
    scale: float
    source_range: tuple[datetime, datetime]
    day_len: int
    query_month: int
    support_region: np.ndarray = field(repr=False, default=None)

    def support_batch(self) -> tuple[np.ndarray, np.ndarray]:
        xs = np.stack([s.x for s in self.support])
        ys = np.stack([s.y for s in self.support])
        return xs, ys

    def query_batch(self) -> tuple[np.ndarray, np.ndarray]:
        xs = np.stack([s.x for s in self.query])
        ys = np.stack([s.y for s in self.query])
        return xs, ys


@dataclass
class MetaDataset:
    train_tasks: list[Task]
    test_tasks: list[Task]

    def __post_init__(self):
        ids = [t.id for t in self.train_tasks] + [t.id for t in self.test_tasks]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate task ids in meta-dataset")


def support_starts(support_days: int, stride_days: int = 7) -> list[int]:
    """Day offsets of support sample inputs within the support region."""
    starts = []
    a = 0
    while a + SAMPLE_DAYS <= support_days:
        starts.append(a)
        a += stride_days
    return starts


def build_task(series: TimeSeries, support_months: int = 0,
               stride_days: int = 7, task_id: str | None = None) -> Task:
    """Split a series into a Task per the windowing rules.

    The trailing 14 days form the query region; everything before them is the
    support region, tiled with the given stride.  With ``support_months`` > 0
    the series is first trimmed to its trailing ``30*months + 14`` days, so
    the support region is exactly that many months.
    """
    if stride_days not in (7, 8):
        raise DataError(f"unsupported support stride {stride_days}")
    day_len = series.samples_per_day
    n_days = len(series.values) // day_len  # partial leading day is dropped
    needed = (DAYS_PER_MONTH * support_months + QUERY_SPAN_DAYS if support_months > 0
              else SAMPLE_DAYS + QUERY_SPAN_DAYS)
    if n_days < needed:
        raise DataError(
            f"{series.name}: needs {needed} whole days "
            f"({'support_months=%d' % support_months if support_months else 'one support sample'}"
            f" + {QUERY_SPAN_DAYS}-day query span), has {n_days}")
    if support_months > 0:
        n_days = needed
    used = series.values[len(series.values) - n_days * day_len:]
    used_start = series.timestamp(len(series.values) - n_days * day_len)

    support_days = n_days - QUERY_SPAN_DAYS
    region = used[:support_days * day_len]

    def window(day0: int, n: int) -> np.ndarray:
        return used[day0 * day_len:(day0 + n) * day_len]

    support = [ForecastSample(window(a, 7).copy(), window(a + 7, 1).copy())
               for a in support_starts(support_days, stride_days)]
    query = [ForecastSample(window(support_days + j, 7).copy(),
                            window(support_days + j + 7, 1).copy())
             for j in range(QUERY_DAYS)]

    first_out_day = used_start + timedelta(days=support_days + 7)
    task = Task(
        id=task_id or series.name,
        support=support,
        query=query,
        scale=1.0,
        source_range=(used_start, used_start + timedelta(days=n_days)),
        day_len=day_len,
        query_month=first_out_day.month,
        support_region=region.copy(),
    )
    return scale_task(task)


def scale_task(task: Task) -> Task:
    """Divide all sample values by the max support-region reading."""
    if task.scale != 1.0:
        raise DataError(f"{task.id}: already scaled")
    scale = float(task.support_region.max()) if task.support_region is not None else 0.0
    if scale <= 0.0:
        raise DataError(f"{task.id}: all-zero support region")
    return replace(
        task,
        support=[ForecastSample(s.x / scale, s.y / scale) for s in task.support],
        query=[ForecastSample(s.x / scale, s.y / scale) for s in task.query],
        scale=scale,
    )


def unscale_task(task: Task) -> Task:
    """Inverse of scale_task: restore raw units."""
    s = task.scale
    return replace(
        task,
        support=[ForecastSample(p.x * s, p.y * s) for p in task.support],
        query=[ForecastSample(p.x * s, p.y * s) for p in task.query],
        scale=1.0,
    )


# ---------------------------------------------------------------------------
# CSV ingestion: header `timestamp,kwh`, ISO-8601 UTC, strict 15-min spacing.
# ---------------------------------------------------------------------------

def _parse_timestamp(text: str, path, line_no: int) -> datetime:
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise DataError(f"{path}:{line_no}: malformed timestamp {text!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def ingest_csv(paths) -> list[TimeSeries]:
    """Read one series per file, validating spacing, sign and format."""
    out = []
    for path in paths:
        rows: list[tuple[datetime, float]] = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip().lower() for h in header] != ["timestamp", "kwh"]:
                raise DataError(f"{path}: expected header 'timestamp,kwh', got {header}")
            for line_no, row in enumerate(reader, start=2):
                if len(row) != 2:
                    raise DataError(f"{path}:{line_no}: expected 2 fields, got {len(row)}")
                ts = _parse_timestamp(row[0].strip(), path, line_no)
                try:
                    kwh = float(row[1])
                except ValueError as exc:
                    raise DataError(f"{path}:{line_no}: malformed reading {row[1]!r}") from exc
                if kwh < 0:
                    raise DataError(f"{path}:{line_no}: negative reading {kwh}")
                rows.append((ts, kwh))
        if not rows:
            raise DataError(f"{path}: no data rows")
        rows.sort(key=lambda r: r[0])
        step = timedelta(minutes=15)
        for (t0, _), (t1, _) in zip(rows, rows[1:]):
            if t1 - t0 != step:
                missing = t0 + step
                raise DataError(f"{path}: gap in series, first missing timestamp {missing.isoformat()}")
        name = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
        out.append(TimeSeries(start=rows[0][0],
                              values=np.array([v for _, v in rows]),
                              resolution_minutes=15,
                              name=name))
    return out


# ---------------------------------------------------------------------------
# Meta-dataset manifest.
# ---------------------------------------------------------------------------

def save_manifest(path, tasks: list[dict]) -> None:
    """tasks: [{id, file | synth, support_months, role}]."""
    with open(path, "w") as fh:
        json.dump({"format_version": MANIFEST_FORMAT_VERSION, "tasks": tasks}, fh, indent=1)


def load_manifest(path) -> list[dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise DataError(f"unsupported manifest format_version {doc.get('format_version')}")
    for entry in doc["tasks"]:
        if "id" not in entry or "role" not in entry:
            raise DataError("manifest task entries need 'id' and 'role'")
        if entry["role"] not in ("train", "test"):
            raise DataError(f"manifest role must be train|test, got {entry['role']!r}")
        if ("file" in entry) == ("synth" in entry):
            raise DataError(f"task {entry['id']}: exactly one of 'file' or 'synth' required")
    return doc["tasks"]
