"""Windowing against a brute-force enumeration oracle, scaling behavior, and
CSV ingestion contracts."""

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from metacast.data import (DataError, TimeSeries, build_task, ingest_csv,
                           load_manifest, save_manifest, scale_task, support_starts,
                           unscale_task)
from metacast.metrics import malpe, mape

UTC = timezone.utc
DAY = 24  # hourly resolution keeps the fixtures small


def make_series(n_days: int, start=datetime(2021, 3, 1, tzinfo=UTC), seed=0) -> TimeSeries:
    rng = np.random.default_rng(seed)
    values = rng.uniform(0.5, 2.0, n_days * DAY)
    return TimeSeries(start=start, values=values, resolution_minutes=60, name=f"s{n_days}")


def enumerate_windows(n_days: int, stride: int):
    """Independent oracle: walk the day grid collecting admissible windows."""
    support_days = n_days - 14
    support = []
    a = 0
    while True:
        if a + 8 > support_days:
            break
        support.append((a, a + 7, a + 7, a + 8))  # x-span, y-span in days
        a += stride
    query = []
    for j in range(7):
        x0 = support_days + j
        query.append((x0, x0 + 7, x0 + 7, x0 + 8))
    return support, query


@pytest.mark.parametrize("stride", [7, 8])
def test_windowing_matches_enumeration_oracle(stride):
    for n_days in range(25, 121):
        series = make_series(n_days, seed=n_days)
        task = build_task(series, stride_days=stride)
        want_support, want_query = enumerate_windows(n_days, stride)
        assert len(task.support) == len(want_support), f"{n_days}d stride {stride}"
        assert len(task.query) == 7
        raw = series.values
        for sample, (x0, x1, y0, y1) in zip(task.support, want_support):
            assert np.array_equal(sample.x, raw[x0 * DAY:x1 * DAY] / task.scale)
            assert np.array_equal(sample.y, raw[y0 * DAY:y1 * DAY] / task.scale)
        for sample, (x0, x1, y0, y1) in zip(task.query, want_query):
            assert np.array_equal(sample.x, raw[x0 * DAY:x1 * DAY] / task.scale)
            assert np.array_equal(sample.y, raw[y0 * DAY:y1 * DAY] / task.scale)


def test_spec_examples_30_and_90_days():
    t30 = build_task(make_series(30))
    assert len(t30.support) == 2 and len(t30.query) == 7
    t90 = build_task(make_series(90))
    assert len(t90.support) == 10


def test_consecutive_query_inputs_share_six_days():
    task = build_task(make_series(40))
    for a, b in zip(task.query, task.query[1:]):
        assert np.array_equal(a.x[DAY:], b.x[:-DAY])


def test_support_precedes_query():
    n_days = 45
    series = make_series(n_days)
    task = build_task(series)
    support_days = n_days - 14
    # last support sample ends (input+output) no later than the support region
    starts = support_starts(support_days)
    assert starts[-1] + 8 <= support_days
    # first query input begins exactly at the query region
    assert np.array_equal(task.query[0].x * task.scale,
                          series.values[support_days * DAY:(support_days + 7) * DAY])


def test_query_outputs_cover_all_weekdays():
    task = build_task(make_series(50, start=datetime(2021, 6, 3, tzinfo=UTC)))
    # 7 consecutive output days: day-of-week of the y windows covers 0..6
    first_out = task.source_range[0] + timedelta(days=(50 - 14) + 7)
    dows = {(first_out + timedelta(days=j)).weekday() for j in range(7)}
    assert dows == set(range(7))


def test_insufficient_length_error_reports_days():
    with pytest.raises(DataError, match=r"needs 44 whole days.*has 40"):
        build_task(make_series(40), support_months=1)
    with pytest.raises(DataError, match="needs 22 whole days"):
        build_task(make_series(20))


def test_support_months_trims_to_trailing_window():
    series = make_series(100)
    task = build_task(series, support_months=2)
    assert len(task.support_region) == 60 * DAY
    # trailing 74 days used: query equals the raw tail
    assert np.allclose(task.query[-1].y * task.scale, series.values[-DAY:])


def test_scale_task_examples():
    series = make_series(30, seed=1)
    task = build_task(series)
    region = series.values[:16 * DAY]
    assert task.scale == region.max()
    # reading / scale: spot-check one point
    assert np.isclose(task.support[0].x[0], series.values[0] / task.scale)
    # round trip restores originals
    restored = unscale_task(task)
    assert np.allclose(restored.support[0].x, series.values[:7 * DAY], atol=1e-12)
    assert restored.scale == 1.0


def test_scale_invariance_of_ratio_metrics():
    task = build_task(make_series(30, seed=2))
    raw = unscale_task(task)
    f_scaled = task.query[0].y * 1.07
    f_raw = raw.query[0].y * 1.07
    assert np.isclose(mape(f_scaled, task.query[0].y), mape(f_raw, raw.query[0].y))
    assert np.isclose(malpe(f_scaled, task.query[0].y), malpe(f_raw, raw.query[0].y))


def test_all_zero_support_region_rejected():
    values = np.zeros(30 * DAY)
    values[20 * DAY:] = 1.0  # energy only in the query region
    series = TimeSeries(start=datetime(2021, 1, 1, tzinfo=UTC), values=values,
                        resolution_minutes=60, name="dark")
    with pytest.raises(DataError, match="all-zero support region"):
        build_task(series)


def test_double_scaling_rejected():
    task = build_task(make_series(30))
    with pytest.raises(DataError, match="already scaled"):
        scale_task(task)


# ---------------------------------------------------------------------------
# CSV ingestion.
# ---------------------------------------------------------------------------

def _write_csv(path, rows):
    path.write_text("timestamp,kwh\n" + "\n".join(rows) + "\n")


def _day_rows(day: str, values):
    out = []
    for i, v in enumerate(values):
        h, m = divmod(i * 15, 60)
        out.append(f"{day}T{h:02d}:{m:02d}:00+00:00,{v}")
    return out


def test_ingest_single_day(tmp_path):
    f = tmp_path / "one.csv"
    _write_csv(f, _day_rows("2021-05-01", np.linspace(0.1, 2.0, 96)))
    (series,) = ingest_csv([f])
    assert len(series.values) == 96
    assert series.resolution_minutes == 15
    assert series.start == datetime(2021, 5, 1, tzinfo=UTC)
    assert series.name == "one"


def test_ingest_gap_reports_first_missing_timestamp(tmp_path):
    rows = _day_rows("2021-05-01", np.ones(96))
    del rows[10]  # 02:30 missing
    f = tmp_path / "gap.csv"
    _write_csv(f, rows)
    with pytest.raises(DataError, match="02:30"):
        ingest_csv([f])


def test_ingest_unsorted_equals_sorted(tmp_path):
    rows = _day_rows("2021-05-01", np.arange(96, dtype=float))
    shuffled = list(rows)
    rng = np.random.default_rng(0)
    rng.shuffle(shuffled)
    a, b = tmp_path / "sorted.csv", tmp_path / "shuffled.csv"
    _write_csv(a, rows)
    _write_csv(b, shuffled)
    (sa,), (sb,) = ingest_csv([a]), ingest_csv([b])
    assert np.array_equal(sa.values, sb.values)


def test_ingest_negative_value_rejected(tmp_path):
    f = tmp_path / "neg.csv"
    _write_csv(f, ["2021-05-01T00:00:00+00:00,1.0", "2021-05-01T00:15:00+00:00,-0.5"])
    with pytest.raises(DataError, match="negative"):
        ingest_csv([f])


def test_ingest_malformed_row_reports_line(tmp_path):
    f = tmp_path / "bad.csv"
    _write_csv(f, ["2021-05-01T00:00:00+00:00,1.0", "2021-05-01T00:15:00+00:00,not-a-number"])
    with pytest.raises(DataError, match=r"bad\.csv:3"):
        ingest_csv([f])


def test_manifest_roundtrip(tmp_path):
    entries = [{"id": "a", "role": "train", "support_months": 0,
                "synth": {"role": "train", "index": 0, "start": "2021-01-01",
                          "days": 60, "seed": 1, "n_consumers": 5,
                          "resolution_minutes": 60, "winter_peaking": True}},
               {"id": "b", "role": "test", "support_months": 2, "file": "b.csv"}]
    path = tmp_path / "manifest.json"
    save_manifest(path, entries)
    assert load_manifest(path) == entries


def test_manifest_rejects_bad_entries(tmp_path):
    path = tmp_path / "m.json"
    save_manifest(path, [{"id": "x", "role": "test"}])
    with pytest.raises(DataError, match="exactly one"):
        load_manifest(path)
