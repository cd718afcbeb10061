"""Probe: one seed of the main benchmark at the hourly acceptance profile."""
import json
import resource
import sys
import time

import numpy as np

from metacast import harness

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
conf = """
data.kind = synth
data.resolution_minutes = 60
data.train_tasks = 40
data.test_tasks = 72
arch.hidden_size = 32
meta.epochs = 150
meta.first_order_epochs = 50
baseline.pretrain_epochs = 150
"""
cfg = harness.with_seed(harness.parse_config(conf), seed)

t0 = time.time()
data = harness.build_dataset(cfg)
print(f"data built in {time.time()-t0:.1f}s; support sizes:",
      sorted({len(t.support) for t in data.train_tasks}), flush=True)

from metacast.meta import meta_train
t0 = time.time()
ckpt, _ = meta_train(cfg.meta, data, cfg.arch)
t_train = time.time() - t0
print(f"meta-train 150 epochs: {t_train/60:.1f} min "
      f"({resource.getrusage(resource.RUSAGE_SELF).ru_maxrss/1e6:.2f} GB peak)", flush=True)
print("loss first/25/50/75/100/150:",
      [round(ckpt.history[i]['meta_loss'], 3) for i in (0, 24, 49, 74, 99, 149)], flush=True)
print("learned rates:", np.round(ckpt.rates.value_matrix().ravel(), 4), flush=True)

from metacast.baselines import pretrain_ti
t0 = time.time()
ti = pretrain_ti(data.train_tasks, cfg.baseline("task_independent"))
print(f"TI pretrain: {(time.time()-t0)/60:.1f} min", flush=True)

t0 = time.time()
rows = harness.evaluate_models(cfg, data.test_tasks, ckpt, ti)
print(f"eval: {time.time()-t0:.1f}s", flush=True)

from metacast.metrics import aggregate
out = {}
for model in ("ts_lstm", "ti_lstm", "proposed"):
    res = [m for name, m in rows if name == model]
    rep = aggregate(res)
    out[model] = rep.mean
    print(model, {k: round(v, 4) for k, v in rep.mean.items()},
          "+/-", round(rep.std["mse"], 4), flush=True)
p, t, s = out["proposed"]["mse"], out["ti_lstm"]["mse"], out["ts_lstm"]["mse"]
print(f"ordering proposed<ti<ts: {p < t < s}; margin vs TI: {100*(t-p)/t:.1f}%")
json.dump(out, open(f"/tmp/probe_seed{seed}.json", "w"))
