"""Comparison frameworks: a fresh model per task (task-specific) and a single
pretrained model fine-tuned per task (task-independent / transfer learning).

Task-specific training deliberately reuses the meta-engine's inner_adapt with
constant rates, so both code paths share one gradient-step implementation.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Task
from .lstm import ArchConfig, ParamSet, forward_batch, init_params, mse_loss
from .meta import LearnableRates, MetaTrainError, inner_adapt
from .metrics import TaskMetrics, task_metrics


@dataclass(frozen=True)
class BaselineConfig:
    kind: str = "task_specific"   # or "task_independent"
    train_epochs: int = 1
    finetune_epochs: int = 1
    pretrain_epochs: int = 150
    lr: float = 0.01
    batch_size: int = 32
    arch: ArchConfig = field(default_factory=ArchConfig)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("task_specific", "task_independent"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def _task_seed(seed: int, task_id: str) -> int:
    return (seed * 1_000_003 + zlib.crc32(task_id.encode())) % 2**31


def _constant_rates(arch: ArchConfig, n_steps: int, lr: float) -> LearnableRates:
    layers = [layer for layer, _ in arch.layer_shapes()]
    return LearnableRates.constant(layers, max(n_steps, 1), lr)


def _eval_query(theta: ParamSet, task: Task, arch: ArchConfig) -> TaskMetrics:
    qx, _ = task.query_batch()
    with ad.Graph():
        pred = forward_batch(theta, qx, arch).data.T
    return task_metrics(task, pred)


def train_ts(task: Task, cfg: BaselineConfig) -> TaskMetrics:
    """Fresh seeded init, full-batch gradient steps on the support set, then
    query evaluation: the standard one-model-per-series approach."""
    theta = init_params(cfg.arch, _task_seed(cfg.seed, task.id))
    if cfg.train_epochs > 0:
        rates = _constant_rates(cfg.arch, cfg.train_epochs, cfg.lr)
        with ad.Graph():
            thetas = inner_adapt(theta, rates, task.support_batch(),
                                 cfg.train_epochs, create_graph=False, arch=cfg.arch)
        theta = thetas[-1].with_tensors([ad.leaf(t.data.copy()) for t in thetas[-1].tensors()])
    return _eval_query(theta, task, cfg.arch)


def pretrain_ti(meta_train: list[Task], cfg: BaselineConfig) -> ParamSet:
    """Pool every support and query sample of the meta-train tasks and run
    seeded mini-batch gradient descent for the configured number of epochs."""
    if not meta_train:
        raise ValueError("pretrain_ti: empty meta-train set")
    xs, ys = [], []
    for task in meta_train:
        for s in task.support + task.query:
            xs.append(s.x)
            ys.append(s.y)
    xs = np.stack(xs)
    ys = np.stack(ys)

    theta = init_params(cfg.arch, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    n = len(xs)
    for epoch in range(cfg.pretrain_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            with ad.Graph():
                loss = mse_loss(theta, (xs[idx], ys[idx]), cfg.arch)
                grads = ad.grad(loss, theta.tensors(), create_graph=False)
            if not math.isfinite(loss.item()):
                raise MetaTrainError(f"non-finite pretraining loss at epoch {epoch + 1}")
            theta = theta.with_tensors(
                [ad.leaf(p.data - cfg.lr * g.data) for p, g in zip(theta.tensors(), grads)])
    return theta


def finetune_eval_ti(pretrained: ParamSet, task: Task, cfg: BaselineConfig) -> TaskMetrics:
    """Fine-tune the pretrained weights on the task support (full-batch steps),
    evaluate on the query set; the pretrained checkpoint is not mutated."""
    theta = pretrained
    if cfg.finetune_epochs > 0:
        rates = _constant_rates(cfg.arch, cfg.finetune_epochs, cfg.lr)
        with ad.Graph():
            thetas = inner_adapt(pretrained, rates, task.support_batch(),
                                 cfg.finetune_epochs, create_graph=False, arch=cfg.arch)
        theta = thetas[-1]
    return _eval_query(theta, task, cfg.arch)
