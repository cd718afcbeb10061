"""How a raw load series becomes a task.

Support samples tile the history with non-overlapping weekly inputs (stride 7
days); the query set is always 7 samples whose inputs start on consecutive
days over the trailing two weeks, so each query output lands on a different
day of the week.  All values are divided by the support-region maximum.
"""

from datetime import date

import numpy as np

from metacast import SynthConfig, build_task, make_series, unscale_task

cfg = SynthConfig(n_consumers=50, resolution_minutes=60, seed=7)
series = make_series(cfg, "test", 0, start=date(2021, 9, 1), days=90)
print(f"series: {series.name}, {len(series.values)} readings "
      f"({len(series.values) // series.samples_per_day} days) from {series.start:%Y-%m-%d}")

task = build_task(series, task_id="demo-task")
print(f"\ntask {task.id}:")
print(f"  support samples : {len(task.support)} (stride 7 days, inputs non-overlapping)")
print(f"  query samples   : {len(task.query)} (inputs shifted by 1 day)")
print(f"  scale divisor   : {task.scale:.3f} kWh (max over the support region)")
print(f"  query month     : {task.query_month}")

d = task.day_len
print("\nconsecutive query inputs share 6 days:")
a, b = task.query[0], task.query[1]
print("  overlap identical:", np.array_equal(a.x[d:], b.x[:-d]))

print("\nsupport values land in (0, 1]; the query region may peak slightly higher:")
sup = np.concatenate([s.x for s in task.support])
qry = np.concatenate([s.y for s in task.query])
print(f"  support min {sup.min():.4f}  max {sup.max():.4f}   query max {qry.max():.4f}")

raw = unscale_task(task)
print("\nround trip back to kWh:")
print("  scaled[0:3]  :", np.round(task.support[0].x[:3], 4))
print("  raw[0:3]     :", np.round(raw.support[0].x[:3], 2))

# a 30-day series yields exactly 2 support samples (16 support days)
tiny = build_task(make_series(cfg, "test", 1, start=date(2021, 5, 1), days=30),
                  task_id="tiny")
print(f"\n30-day series: {len(tiny.support)} support samples + {len(tiny.query)} query")
