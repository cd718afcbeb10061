"""The forecaster: a single-layer LSTM read one measurement per step, followed
by one or more linear heads, expressed as a pure function of an explicit
parameter set so callers can evaluate it at adapted parameters.

Gate packing along the 4H dimension is fixed: rows [0,H) input gate,
[H,2H) forget gate, [2H,3H) cell candidate, [3H,4H) output gate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    """Shape of the forecaster: hidden width, window lengths, head depth."""

    hidden_size: int = 32
    input_len: int = 672   # one week at 15-minute resolution
    output_len: int = 96   # the following day
    num_linear_layers: int = 1

    def __post_init__(self):
        if self.hidden_size < 1 or self.input_len < 1 or self.output_len < 1:
            raise ValueError("hidden_size, input_len and output_len must be >= 1")
        if self.num_linear_layers not in (1, 2, 3):
            raise ValueError("num_linear_layers must be 1, 2 or 3")

    def layer_shapes(self) -> list[tuple[str, list[tuple[str, tuple]]]]:
        h, t_o = self.hidden_size, self.output_len
        layers = [("lstm", [("W_ih", (4 * h, 1)), ("W_hh", (4 * h, h)), ("b", (4 * h,))]),
                  ("head_1", [("W", (t_o, h)), ("b", (t_o,))])]
        for k in range(2, self.num_linear_layers + 1):
            layers.append((f"head_{k}", [("W", (t_o, t_o)), ("b", (t_o,))]))
        return layers

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, ts in self.layer_shapes() for _, s in ts)


class ParamSet:
    """Ordered, layer-grouped collection of named tensors."""

    def __init__(self, entries: list[tuple[str, str, Tensor]]):
        self._entries = list(entries)

    def entries(self) -> list[tuple[str, str, Tensor]]:
        return list(self._entries)

    def tensors(self) -> list[Tensor]:
        return [t for _, _, t in self._entries]

    def layer_names(self) -> list[str]:
        names: list[str] = []
        for layer, _, _ in self._entries:
            if not names or names[-1] != layer:
                names.append(layer)
        return names

    def get(self, layer: str, name: str) -> Tensor:
        for l, n, t in self._entries:
            if l == layer and n == name:
                return t
        raise KeyError(f"no tensor {layer}/{name}")

    def with_tensors(self, tensors: list[Tensor]) -> "ParamSet":
        if len(tensors) != len(self._entries):
            raise ValueError("tensor count mismatch")
        return ParamSet([(l, n, t) for (l, n, _), t in zip(self._entries, tensors)])

    def with_arrays(self, arrays: list[np.ndarray]) -> "ParamSet":
        return self.with_tensors([ad.leaf(a) for a in arrays])

    def copy_arrays(self) -> list[np.ndarray]:
        return [t.data.copy() for _, _, t in self._entries]

    def congruent_with(self, other: "ParamSet") -> bool:
        mine = [(l, n, t.data.shape) for l, n, t in self._entries]
        theirs = [(l, n, t.data.shape) for l, n, t in other._entries]
        return mine == theirs

    def __len__(self) -> int:
        return len(self._entries)


def init_params(config: ArchConfig, seed: int) -> ParamSet:
    """Uniform weights in [-1/sqrt(H), +1/sqrt(H)], zero biases, seeded."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(config.hidden_size)
    entries = []
    for layer, tensors in config.layer_shapes():
        for name, shape in tensors:
            if name.startswith("b"):
                a = np.zeros(shape)
            else:
                a = rng.uniform(-bound, bound, shape)
            entries.append((layer, name, ad.leaf(a)))
    return ParamSet(entries)


def _recurrence(params: ParamSet, x_rows: list[Tensor], batch: int,
                hidden: int) -> Tensor:
    """Run the LSTM over the step rows and apply the heads: [T_O, batch]."""
    w_ih = params.get("lstm", "W_ih")
    w_hh = params.get("lstm", "W_hh")
    b = params.get("lstm", "b")
    h = ad.const(np.zeros((hidden, batch)))
    c = ad.const(np.zeros((hidden, batch)))
    h2 = 2 * hidden
    h3 = 3 * hidden
    h4 = 4 * hidden
    for xt in x_rows:
        z = ad.add(ad.add(ad.matmul(w_ih, xt), ad.matmul(w_hh, h)), b)
        gi = ad.sigmoid(ad.slice_rows(z, 0, hidden))
        gf = ad.sigmoid(ad.slice_rows(z, hidden, h2))
        gc = ad.tanh(ad.slice_rows(z, h2, h3))
        go = ad.sigmoid(ad.slice_rows(z, h3, h4))
        c = ad.add(ad.mul(gf, c), ad.mul(gi, gc))
        h = ad.mul(go, ad.tanh(c))
    out = h
    for layer in params.layer_names():
        if layer == "lstm":
            continue
        out = ad.add(ad.matmul(params.get(layer, "W"), out), params.get(layer, "b"))
    return out


def forward_batch(params: ParamSet, xs: np.ndarray, config: ArchConfig) -> Tensor:
    """Forecast a batch: xs is [B, T_I], result [T_O, B] (one column per sample)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != config.input_len:
        raise ValueError(f"input batch must be [B, {config.input_len}], got {xs.shape}")
    if not np.isfinite(xs).all():
        raise ad.DomainError("non-finite values in forward input")
    cols = np.ascontiguousarray(xs.T)  # [T_I, B]
    rows = [Tensor(cols[t:t + 1]) for t in range(config.input_len)]
    return _recurrence(params, rows, xs.shape[0], config.hidden_size)


def forward(params: ParamSet, x: np.ndarray, config: ArchConfig) -> Tensor:
    """Forecast one input sequence of length T_I; returns a [T_O] tensor."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (config.input_len,):
        raise ValueError(f"input must have length {config.input_len}, got {x.shape}")
    out = forward_batch(params, x[None, :], config)
    return ad.reshape(out, (config.output_len,))


def mse_loss(params: ParamSet, batch, config: ArchConfig) -> Tensor:
    """Mean over samples and output positions of squared error, as a graph node.

    ``batch`` is a list of (x, y) pairs or a prestacked (xs [B,T_I], ys [B,T_O])
    tuple.
    """
    if isinstance(batch, tuple):
        xs, ys = batch
    else:
        if len(batch) == 0:
            raise ValueError("mse_loss: empty batch")
        xs = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
        ys = np.stack([np.asarray(y, dtype=np.float64) for _, y in batch])
    if len(xs) == 0:
        raise ValueError("mse_loss: empty batch")
    pred = forward_batch(params, xs, config)
    target = ad.const(ys.T)
    return ad.reduce_mean(ad.square(ad.sub(pred, target)))


# ---------------------------------------------------------------------------
# Checkpoint serialization (shared with the meta-learner and baselines).
# ---------------------------------------------------------------------------

def params_to_dict(params: ParamSet, config: ArchConfig) -> dict:
    layers: dict[str, list] = {}
    for layer, name, t in params.entries():
        layers.setdefault(layer, []).append(
            {"name": name, "shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()})
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arch_config": {
            "hidden_size": config.hidden_size,
            "input_len": config.input_len,
            "output_len": config.output_len,
            "num_linear_layers": config.num_linear_layers,
        },
        "layers": [{"layer": l, "tensors": ts} for l, ts in layers.items()],
    }


def params_from_dict(doc: dict) -> tuple[ParamSet, ArchConfig]:
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {doc.get('format_version')}")
    cfg = ArchConfig(**doc["arch_config"])
    entries = []
    for group in doc["layers"]:
        for t in group["tensors"]:
            a = np.asarray(t["data"], dtype=np.float64).reshape(t["shape"])
            entries.append((group["layer"], t["name"], ad.leaf(a)))
    ps = ParamSet(entries)
    want = [(l, n, tuple(s)) for l, ts in cfg.layer_shapes() for n, s in ts]
    have = [(l, n, t.data.shape) for l, n, t in ps.entries()]
    if want != have:
        raise ValueError("checkpoint tensors do not match its arch_config")
    return ps, cfg


def save_params(path, params: ParamSet, config: ArchConfig, extra: dict | None = None) -> None:
    doc = params_to_dict(params, config)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_params(path) -> tuple[ParamSet, ArchConfig, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    ps, cfg = params_from_dict(doc)
    extra = {k: v for k, v in doc.items()
             if k not in ("format_version", "arch_config", "layers")}
    return ps, cfg, extra
