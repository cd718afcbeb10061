"""Meta-learning vs the two baselines at toy scale (a couple of minutes).

Trains the shared initialization on a handful of synthetic tasks, then
compares three ways of forecasting an unseen series from little data:

  ts_lstm  - train a fresh model per task (one full-batch step),
  ti_lstm  - pretrain one model on everything, fine-tune one step per task,
  proposed - meta-learned initialization + learned inner rates, one step.

The full-scale version of this comparison lives in tests/test_acceptance.py.
"""

import numpy as np

from metacast import (adapt_and_eval, aggregate, finetune_eval_ti, meta_train,
                      pretrain_ti, synth_meta_dataset, train_ts)
from metacast.harness import parse_config

conf = parse_config("""
data.resolution_minutes = 60
data.train_tasks = 10
data.test_tasks = 12
arch.hidden_size = 16
meta.epochs = 40
meta.first_order_epochs = 20
baseline.pretrain_epochs = 40
seed = 0
""")

data = synth_meta_dataset(conf.synth())
print(f"{len(data.train_tasks)} meta-train tasks, {len(data.test_tasks)} meta-test tasks")

print("\nmeta-training (40 epochs, second order after 20)...")
ckpt, _ = meta_train(conf.meta, data, conf.arch)
h = ckpt.history
print(f"  meta-loss {h[0]['meta_loss']:.3f} -> {h[-1]['meta_loss']:.3f}")
print("  learned per-layer step sizes:", np.round(ckpt.rates.value_matrix().ravel(), 4))

print("pretraining the transfer baseline...")
ti = pretrain_ti(data.train_tasks, conf.baseline("task_independent"))

results = {name: [] for name in ("ts_lstm", "ti_lstm", "proposed")}
for task in data.test_tasks:
    results["ts_lstm"].append(train_ts(task, conf.baseline("task_specific")))
    results["ti_lstm"].append(finetune_eval_ti(ti, task, conf.baseline("task_independent")))
    results["proposed"].append(adapt_and_eval(ckpt, task))

print(f"\n{'model':10s} {'MSE':>10s} {'MAPE %':>10s} {'MALPE %':>10s}")
for name, res in results.items():
    rep = aggregate(res)
    print(f"{name:10s} {rep.mean['mse']:10.4f} {rep.mean['mape_pct']:10.2f} "
          f"{rep.mean['malpe_pct']:10.2f}")
