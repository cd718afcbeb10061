"""Probe: outer-rate scaling + heterogeneous generator, with intermediate evals."""
import sys
import time
from dataclasses import replace

import numpy as np

from metacast import harness
from metacast.baselines import pretrain_ti
from metacast.meta import adapt_and_eval, meta_train
from metacast.metrics import aggregate

beta_max = float(sys.argv[1]) if len(sys.argv) > 1 else 1e-2
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

cfg = harness.parse_config(f"""
data.kind = synth
data.resolution_minutes = 60
data.train_tasks = 40
data.test_tasks = 24
arch.hidden_size = 32
meta.epochs = 150
meta.first_order_epochs = 50
meta.beta_max = {beta_max}
baseline.pretrain_epochs = 150
""")
cfg = harness.with_seed(cfg, seed)
data = harness.build_dataset(cfg)

def eval_mean(ckpt):
    return aggregate([adapt_and_eval(ckpt, t) for t in data.test_tasks]).mean["mse"]

t0 = time.time()
ckpt, snaps = meta_train(cfg.meta, data, cfg.arch, snapshot_epochs=(50, 100))
print(f"train {time.time()-t0:.0f}s; loss@{{1,50,100,150}}: "
      f"{[round(ckpt.history[i]['meta_loss'],3) for i in (0,49,99,149)]}", flush=True)
print("rates:", np.round(ckpt.rates.value_matrix().ravel(), 4), flush=True)
for e, c in [(50, snaps[50]), (100, snaps[100]), (150, ckpt)]:
    print(f"proposed eval MSE @epoch {e}: {eval_mean(c):.4f}", flush=True)

t0 = time.time()
ti = pretrain_ti(data.train_tasks, cfg.baseline("task_independent"))
from metacast.baselines import finetune_eval_ti, train_ts
ti_mse = aggregate([finetune_eval_ti(ti, t, cfg.baseline("task_independent"))
                    for t in data.test_tasks]).mean["mse"]
ts_mse = aggregate([train_ts(t, cfg.baseline("task_specific"))
                    for t in data.test_tasks]).mean["mse"]
p = eval_mean(ckpt)
print(f"TI {ti_mse:.4f}  TS {ts_mse:.4f}  proposed {p:.4f}  "
      f"margin vs TI {100*(ti_mse-p)/ti_mse:.1f}%  ordering {p < ti_mse < ts_mse}")
