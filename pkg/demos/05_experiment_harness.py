"""Driving experiments through the harness: runs, sweeps, reports.

The same flows are available from the command line:

    metacast synth    --config exp.conf --out data/
    metacast train    --config exp.conf --out run/
    metacast baseline --config exp.conf --out run/
    metacast eval     --config exp.conf --out run/
    metacast sweep    --config sweep.conf --out sweeps/
    metacast report run/ --out report/

Everything here is smoke-scale so the demo finishes quickly; raise the task
counts / epochs to the defaults for a real experiment.
"""

import tempfile
from pathlib import Path

from metacast import harness

work = Path(tempfile.mkdtemp(prefix="metacast-demo-"))
conf_text = """
data.kind = synth
data.resolution_minutes = 60
data.train_tasks = 4
data.test_tasks = 6
arch.hidden_size = 8
meta.epochs = 8
meta.first_order_epochs = 4
baseline.pretrain_epochs = 8
seed = 0
"""
cfg = harness.parse_config(conf_text)
print("config hash:", harness.config_hash(cfg))

print("\n--- full run (data -> train -> baseline -> eval) ---")
arts = harness.run(cfg, work / "run0")
for model, agg in arts.aggregate.items():
    print(f"  {model:10s} mean MSE {agg['mean']['mse']:.4f} "
          f"(over {agg['n_tasks']} tasks)")
print("artifacts:", sorted(p.name for p in (work / "run0").iterdir()))

print("\n--- support-size sweep (reuses the trained models per cell) ---")
sweep_cfg = harness.parse_config(conf_text + "sweep.axis = support_months\nsweep.values = 1,2,3\n")
table = harness.sweep(sweep_cfg, work / "sweep")
for row in table:
    print(f"  support={row['value']}m  ts={row['ts_lstm_mse']:.4f} "
          f"ti={row['ti_lstm_mse']:.4f} proposed={row['proposed_mse']:.4f}")

print("\n--- report (boxplot data + markdown summary) ---")
harness.report([work / "run0"], work / "report")
print((work / "report/summary.md").read_text())
print("boxplot rows written to", work / "report/boxplot_data.csv")
