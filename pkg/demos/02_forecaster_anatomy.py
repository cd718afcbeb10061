"""Anatomy of the base forecaster: parameters, forward pass, loss, one
gradient-descent fit on a single task.

The forecaster maps a week of readings to the following day: an LSTM consumes
the input one measurement per step, a linear head maps the final hidden state
to the output day.  Everything is a pure function of an explicit parameter
set, which is what lets the meta-learner evaluate it at adapted parameters.
"""

import numpy as np

from metacast import ArchConfig, Graph, forward, init_params, mse_loss
from metacast import autodiff as ad

# hourly profile to keep the demo fast: 168 readings in, 24 out
arch = ArchConfig(hidden_size=16, input_len=168, output_len=24)
params = init_params(arch, seed=42)

print("parameter tensors:")
for layer, name, t in params.entries():
    print(f"  {layer:7s} {name:5s} {t.data.shape}")
print("total parameters:", arch.param_count())

# a toy "load curve": two daily peaks plus noise
rng = np.random.default_rng(0)
hours = np.arange(192) % 24
curve = 0.4 + 0.5 * np.exp(-0.5 * ((hours - 19) / 2.0) ** 2) \
            + 0.2 * np.exp(-0.5 * ((hours - 8) / 1.5) ** 2)
series = curve * rng.uniform(0.95, 1.05, 192)
x, y = series[:168], series[168:]

out = forward(params, x, arch)
print("\nforecast shape:", out.data.shape, " first 4:", np.round(out.data[:4], 3))

# fit this one sample by plain gradient descent
batch = [(x, y)]
lr = 0.05
for step in range(200):
    with Graph():
        loss = mse_loss(params, batch, arch)
        grads = ad.grad(loss, params.tensors())
    params = params.with_tensors(
        [ad.leaf(p.data - lr * g.data) for p, g in zip(params.tensors(), grads)])
    if step % 50 == 0 or step == 199:
        print(f"step {step:3d}  mse on the sample: {loss.item():.5f}")

final = forward(params, x, arch).data
print("\ntarget   :", np.round(y[:6], 3))
print("forecast :", np.round(final[:6], 3))
