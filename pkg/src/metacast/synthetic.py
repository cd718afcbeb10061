"""Synthetic consumer-aggregate load series.

Each series is the sum of simulated consumer profiles: a base level, morning
and evening peaks, weekday/weekend modulation, a smooth annual seasonal
factor, and autocorrelated day-to-day and intraday noise.  Values at a given
absolute timestamp depend only on (seed, role, index, timestamp), never on the
series' start or length: noise innovations are keyed per absolute day and the
day-level autocorrelation uses a truncated moving average.  Windows of the
same task therefore coincide exactly across different history lengths, which
keeps support-size sweeps internally consistent.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone

import numpy as np

from .data import DAYS_PER_MONTH, QUERY_SPAN_DAYS, MetaDataset, Task, TimeSeries, build_task

_ROLE_CODE = {"train": 0, "test": 1}
_AR_RHO = 0.6
_AR_TAPS = 10
_DAY_SIGMA = 0.04
_INTRADAY_SIGMA = 0.015
_DEFAULT_GRID = tuple(date(2021, m, 1) for m in range(1, 13))


@dataclass(frozen=True)
class SynthConfig:
    n_consumers: int = 50
    train_tasks: int = 40
    test_tasks: int = 72
    seed: int = 0
    resolution_minutes: int = 15
    train_months: tuple[int, ...] = (2, 3, 4)
    test_months: tuple[int, ...] = (1, 2, 3)
    start_grid: tuple[date, ...] = _DEFAULT_GRID
    winter_peaking: bool = True
    support_stride_days: int = 7


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def _day_rng(cfg: SynthConfig, role: str, index: int, day_ordinal: int) -> np.random.Generator:
    return _rng(cfg.seed, _ROLE_CODE[role], index, 1, day_ordinal)


def _task_params(cfg: SynthConfig, role: str, index: int) -> dict:
    # Task-level draws are the idiosyncrasies a forecaster must adapt to;
    # consumer-level draws mostly average out in the 50-consumer aggregate.
    rng = _rng(cfg.seed, _ROLE_CODE[role], index, 0)
    c = cfg.n_consumers
    return {
        "peak_shift": rng.uniform(-3.0, 3.0),
        "morning_scale": rng.uniform(0.3, 1.7),
        "evening_scale": rng.uniform(0.6, 2.2),
        "width_scale": rng.uniform(0.8, 1.6),
        "weekend_lift": rng.uniform(0.85, 1.5),
        "seasonal_amp": rng.uniform(0.2, 0.5),
        "base": rng.uniform(0.55, 1.45) * rng.uniform(0.04, 0.12, c),
        "m_amp": rng.uniform(0.01, 0.08, c),
        "m_center": rng.normal(7.5, 0.5, c),
        "m_width": rng.uniform(1.0, 2.0, c),
        "e_amp": rng.uniform(0.04, 0.20, c),
        "e_center": rng.normal(19.0, 0.6, c),
        "e_width": rng.uniform(1.5, 2.5, c),
    }


def _daily_curves(p: dict, samples_per_day: int) -> np.ndarray:
    """Aggregate weekday and weekend load curves, shape [2, samples_per_day]."""
    hours = (np.arange(samples_per_day) + 0.5) * (24.0 / samples_per_day)

    def bump(amp, center, width):
        u = (hours[None, :] - center[:, None]) / width[:, None]
        return amp[:, None] * np.exp(-0.5 * u * u)

    m_center = p["m_center"] + p["peak_shift"]
    e_center = p["e_center"] + p["peak_shift"]
    m_width = p["m_width"] * p["width_scale"]
    e_width = p["e_width"] * p["width_scale"]
    weekday = (p["base"][:, None]
               + p["morning_scale"] * bump(p["m_amp"], m_center, m_width)
               + p["evening_scale"] * bump(p["e_amp"], e_center, e_width))
    weekend = (p["base"][:, None] * p["weekend_lift"]
               + p["morning_scale"] * bump(p["m_amp"], m_center + 1.5, m_width)
               + p["evening_scale"] * bump(p["e_amp"], e_center, e_width))
    return np.stack([weekday.sum(axis=0), weekend.sum(axis=0)])


def make_series(cfg: SynthConfig, role: str, index: int, start: date,
                days: int) -> TimeSeries:
    """Deterministic aggregate series covering [start, start + days)."""
    p = _task_params(cfg, role, index)
    d = 1440 // cfg.resolution_minutes
    curves = _daily_curves(p, d)
    peak_doy = 15 if cfg.winter_peaking else 196

    # Per-absolute-day noise streams: one innovation (for the day-level
    # truncated AR) plus intraday knots, keyed only by the calendar day.
    ord0 = start.toordinal()
    innov = np.empty(days + _AR_TAPS)
    knots = np.empty((days, 5))
    for j in range(days + _AR_TAPS):
        ordinal = ord0 - _AR_TAPS + j
        rng_d = _day_rng(cfg, role, index, ordinal)
        innov[j] = rng_d.standard_normal()
        if j >= _AR_TAPS:
            knots[j - _AR_TAPS] = rng_d.standard_normal(5)
    taps = _AR_RHO ** np.arange(_AR_TAPS, -1.0, -1.0)  # oldest tap first
    taps /= np.sqrt((taps * taps).sum())

    values = np.empty(days * d)
    knots_x = np.linspace(0.0, d - 1, 5)
    grid = np.arange(d)
    for k in range(days):
        day = start + timedelta(days=k)
        doy = day.timetuple().tm_yday
        season = 1.0 + p["seasonal_amp"] * np.cos(
            2.0 * np.pi * (doy - peak_doy) / 365.25)
        offset = float(taps @ innov[k:k + _AR_TAPS + 1])
        day_factor = 1.0 + _DAY_SIGMA * offset
        intraday = 1.0 + _INTRADAY_SIGMA * np.interp(grid, knots_x, knots[k])
        curve = curves[1 if day.weekday() >= 5 else 0]
        values[k * d:(k + 1) * d] = curve * (season * day_factor) * intraday
    np.clip(values, 0.0, None, out=values)
    values *= cfg.resolution_minutes / 15.0  # energy per interval
    return TimeSeries(
        start=datetime(start.year, start.month, start.day, tzinfo=timezone.utc),
        values=values,
        resolution_minutes=cfg.resolution_minutes,
        name=f"{role}-{index:03d}",
    )


def _train_spec(cfg: SynthConfig, i: int) -> tuple[date, int]:
    rng = _rng(cfg.seed, 0, i, 5)
    months = int(rng.choice(np.asarray(cfg.train_months)))
    start = cfg.start_grid[int(rng.integers(0, len(cfg.start_grid)))]
    return start, DAYS_PER_MONTH * months


def _test_spec(cfg: SynthConfig, i: int) -> tuple[date, int]:
    grid = cfg.start_grid
    months = cfg.test_months[(i // len(grid)) % len(cfg.test_months)]
    return grid[i % len(grid)], DAYS_PER_MONTH * months


def synth_meta_dataset(cfg: SynthConfig) -> MetaDataset:
    """Meta-train and meta-test tasks on the paper-style month grid:
    longer histories for training tasks, short unseen series for testing."""
    train = []
    for i in range(cfg.train_tasks):
        start, days = _train_spec(cfg, i)
        series = make_series(cfg, "train", i, start, days)
        train.append(build_task(series, stride_days=cfg.support_stride_days))
    test = []
    for i in range(cfg.test_tasks):
        start, days = _test_spec(cfg, i)
        series = make_series(cfg, "test", i, start, days)
        test.append(build_task(series, stride_days=cfg.support_stride_days))
    return MetaDataset(train_tasks=train, test_tasks=test)


def synth_support_sweep_tasks(cfg: SynthConfig, support_months: int) -> list[Task]:
    """Test tasks with exactly `support_months` of history and a query window
    anchored to the task's grid month, so windows nest across sweep values."""
    days = DAYS_PER_MONTH * support_months + QUERY_SPAN_DAYS
    tasks = []
    for i in range(cfg.test_tasks):
        anchor = cfg.start_grid[i % len(cfg.start_grid)]
        start = anchor - timedelta(days=DAYS_PER_MONTH * support_months)
        series = make_series(cfg, "test", i, start, days)
        tasks.append(build_task(series, support_months=support_months,
                                stride_days=cfg.support_stride_days))
    return tasks


# ---------------------------------------------------------------------------
# Manifest round-trip for synthetic tasks.
# ---------------------------------------------------------------------------

def manifest_entries(cfg: SynthConfig) -> list[dict]:
    entries = []
    for role, count, spec in (("train", cfg.train_tasks, _train_spec),
                              ("test", cfg.test_tasks, _test_spec)):
        for i in range(count):
            start, days = spec(cfg, i)
            entries.append({
                "id": f"{role}-{i:03d}",
                "role": role,
                "support_months": 0,
                "synth": {
                    "role": role, "index": i,
                    "start": start.isoformat(), "days": days,
                    "seed": cfg.seed, "n_consumers": cfg.n_consumers,
                    "resolution_minutes": cfg.resolution_minutes,
                    "winter_peaking": cfg.winter_peaking,
                },
            })
    return entries


def series_from_entry(entry: dict) -> TimeSeries:
    s = entry["synth"]
    cfg = SynthConfig(
        n_consumers=s["n_consumers"], seed=s["seed"],
        resolution_minutes=s["resolution_minutes"],
        winter_peaking=s.get("winter_peaking", True),
    )
    return make_series(cfg, s["role"], s["index"], date.fromisoformat(s["start"]), s["days"])
