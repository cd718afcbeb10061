"""The meta-learning engine.

Training learns an initialization (and per-layer, per-step inner rates) such
that a handful of full-batch gradient steps on a task's support set yields a
good forecaster for that task's query set.  The outer objective is a weighted
sum of query losses at every inner step, with weights annealed toward the
final step over epochs; the outer update is plain gradient descent with a
cosine-annealed rate.  Early epochs use first-order meta-gradients (inner
gradients treated as constants), later epochs differentiate through them.

A "vanilla" mode reduces the engine to the classic two-loop scheme: final-step
query loss only, fixed inner rate, constant outer rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import MetaDataset, Task
from .lstm import ArchConfig, ParamSet, forward_batch, init_params, mse_loss
from .metrics import TaskMetrics, task_metrics


class MetaTrainError(RuntimeError):
    """Non-finite loss or gradient during meta-training."""


@dataclass
class WeightSchedule:
    """Per-epoch, per-step loss weights; every row sums to 1."""

    values: np.ndarray  # [n_epochs, n_steps]
    gamma: float
    n_epochs: int
    n_steps: int

    def row(self, epoch: int) -> np.ndarray:
        """Weights for a 1-indexed epoch."""
        if not 1 <= epoch <= self.n_epochs:
            raise ValueError(f"epoch {epoch} outside 1..{self.n_epochs}")
        return self.values[epoch - 1]


def weight_matrix(n_epochs: int, n_steps: int, gamma: float) -> WeightSchedule:
    """Anneal intermediate-step weights down (floor gamma/N) while the final
    step's weight rises (cap 1 - gamma(N-1)/N); the first epoch is uniform."""
    if n_steps < 1 or n_epochs < 1:
        raise ValueError("n_epochs and n_steps must be >= 1")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0,1), got {gamma}")
    v = np.zeros((n_epochs, n_steps))
    v[0, :] = 1.0 / n_steps
    floor = gamma / n_steps
    cap = 1.0 - gamma * (n_steps - 1) / n_steps
    for e in range(2, n_epochs + 1):
        prev = v[e - 2]
        decay = e / n_steps**2
        v[e - 1, :-1] = np.maximum(prev[:-1] - decay, floor)
        v[e - 1, -1] = min(prev[-1] + e * (n_steps - 1) / n_steps**2, cap)
    return WeightSchedule(values=v, gamma=gamma, n_epochs=n_epochs, n_steps=n_steps)


@dataclass(frozen=True)
class CosineSchedule:
    beta_max: float = 1e-2
    beta_min: float = 1e-5
    n_e_max: int = 150

    def __post_init__(self):
        if not 0 < self.beta_min <= self.beta_max:
            raise ValueError("need 0 < beta_min <= beta_max")
        if self.n_e_max < 1:
            raise ValueError("n_e_max must be >= 1")


def cosine_lr(schedule: CosineSchedule, e: int) -> float:
    """beta_min + (beta_max-beta_min)(1+cos(pi e/n_e_max))/2 for e in [0, n_e_max]."""
    if not 0 <= e <= schedule.n_e_max:
        raise ValueError(f"epoch {e} outside [0, {schedule.n_e_max}]")
    return schedule.beta_min + 0.5 * (schedule.beta_max - schedule.beta_min) * (
        1.0 + math.cos(math.pi * e / schedule.n_e_max))


class LearnableRates:
    """One inner-loop rate per (layer, step), shared by the layer's tensors."""

    def __init__(self, layer_names: list[str], alpha: list[list[Tensor]]):
        self.layer_names = list(layer_names)
        self.alpha = alpha
        self._row = {name: i for i, name in enumerate(self.layer_names)}

    @classmethod
    def constant(cls, layer_names: list[str], n_steps: int, value: float) -> "LearnableRates":
        alpha = [[ad.leaf(np.asarray(value)) for _ in range(n_steps)] for _ in layer_names]
        return cls(layer_names, alpha)

    @classmethod
    def from_matrix(cls, layer_names: list[str], matrix: np.ndarray) -> "LearnableRates":
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (len(layer_names), m.shape[1]) or m.ndim != 2:
            raise ValueError(f"rate matrix must be [{len(layer_names)}, n_steps]")
        alpha = [[ad.leaf(np.asarray(m[i, k])) for k in range(m.shape[1])]
                 for i in range(len(layer_names))]
        return cls(layer_names, alpha)

    @property
    def n_steps(self) -> int:
        return len(self.alpha[0])

    def rate(self, layer: str, step: int) -> Tensor:
        return self.alpha[self._row[layer]][step]

    def tensors(self) -> list[Tensor]:
        return [t for row in self.alpha for t in row]

    def with_tensors(self, tensors: list[Tensor]) -> "LearnableRates":
        n = self.n_steps
        rows = [list(tensors[i * n:(i + 1) * n]) for i in range(len(self.layer_names))]
        return LearnableRates(self.layer_names, rows)

    def value_matrix(self) -> np.ndarray:
        return np.array([[float(t.data) for t in row] for row in self.alpha])


@dataclass(frozen=True)
class MetaTrainConfig:
    n_epochs: int = 150
    inner_steps: int = 1
    first_order_epochs: int = 50
    gamma: float = 0.1
    alpha_init: float = 0.01
    beta_max: float = 1e-2
    beta_min: float = 1e-5
    n_e_max: int | None = None
    mode: str = "maml_pp"   # or "vanilla_maml"
    outer_optimizer: str = "sgd"   # plain descent per the update rule; "adam" opt-in
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("maml_pp", "vanilla_maml"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.outer_optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown outer_optimizer {self.outer_optimizer!r}")
        if self.first_order_epochs > self.n_epochs:
            raise ValueError("first_order_epochs must be <= n_epochs")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")

    def cosine(self) -> CosineSchedule:
        n_e_max = self.n_e_max if self.n_e_max is not None else self.n_epochs
        return CosineSchedule(self.beta_max, self.beta_min, max(n_e_max, 1))


@dataclass
class Checkpoint:
    theta0: ParamSet
    rates: LearnableRates
    arch: ArchConfig
    config: MetaTrainConfig
    history: list[dict] = field(default_factory=list)


def gradient_steps(theta0: ParamSet, rates: LearnableRates, loss_fn,
                   n_steps: int, create_graph: bool) -> list[ParamSet]:
    """theta_k = theta_{k-1} - rate(layer, k) * d loss_fn / d theta_{k-1}.

    With ``create_graph`` the adapted parameters stay differentiable back to
    theta0 and the rates; without it, inner gradients are constants and only
    the identity and rate paths carry derivatives (the first-order scheme).
    Returns every intermediate parameter set, theta_1 .. theta_{n_steps}.
    """
    layer_of = [layer for layer, _, _ in theta0.entries()]
    theta = theta0
    out: list[ParamSet] = []
    for k in range(n_steps):
        loss = loss_fn(theta)
        grads = ad.grad(loss, theta.tensors(), create_graph=create_graph)
        stepped = [ad.sub(p, ad.mul(rates.rate(layer, k), g))
                   for (layer, p, g) in zip(layer_of, theta.tensors(), grads)]
        theta = theta.with_tensors(stepped)
        out.append(theta)
    return out


def inner_adapt(theta0: ParamSet, rates: LearnableRates, support, n_steps: int,
                create_graph: bool, arch: ArchConfig) -> list[ParamSet]:
    """Full-batch gradient steps on the support set; returns every adapted set."""
    if isinstance(support, tuple):
        if len(support[0]) == 0:
            raise ValueError("inner_adapt: empty support set")
    elif not support:
        raise ValueError("inner_adapt: empty support set")
    return gradient_steps(theta0, rates, lambda th: mse_loss(th, support, arch),
                          n_steps, create_graph)


def multi_step_meta_loss(theta0: ParamSet, rates: LearnableRates, tasks: list[Task],
                         v_row, create_graph: bool, arch: ArchConfig) -> Tensor:
    """Sum over tasks of the weighted per-step query losses."""
    v_row = np.asarray(v_row, dtype=np.float64)
    n_steps = len(v_row)
    if abs(v_row.sum() - 1.0) > 1e-9:
        raise ValueError(f"step weights must sum to 1, got {v_row.sum()}")
    total = None
    for task in tasks:
        thetas = inner_adapt(theta0, rates, task.support_batch(), n_steps,
                             create_graph, arch)
        for k, theta_k in enumerate(thetas):
            if v_row[k] == 0.0:
                continue  # a zero weight contributes exactly nothing
            q = mse_loss(theta_k, task.query_batch(), arch)
            term = ad.scalar_mul(float(v_row[k]), q)
            total = term if total is None else ad.add(total, term)
    if total is None:
        raise ValueError("multi_step_meta_loss: no tasks")
    return total


class _AdamState:
    """Adaptive moments for the opt-in outer optimizer."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None
        self.t = 0

    def direction(self, grads: list[np.ndarray]) -> list[np.ndarray]:
        if self.m is None:
            self.m = [np.zeros_like(g) for g in grads]
            self.v = [np.zeros_like(g) for g in grads]
        self.t += 1
        out = []
        for i, g in enumerate(grads):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / (1 - self.beta1**self.t)
            vhat = self.v[i] / (1 - self.beta2**self.t)
            out.append(mhat / (np.sqrt(vhat) + self.eps))
        return out


def _apply_update(theta0: ParamSet, rates: LearnableRates,
                  theta_grads: list[np.ndarray], rate_grads: list[np.ndarray] | None,
                  beta: float, adam: _AdamState | None = None) -> tuple[ParamSet, LearnableRates]:
    if adam is not None:
        n = len(theta_grads)
        dirs = adam.direction(theta_grads + (rate_grads or []))
        theta_grads, rate_grads = dirs[:n], (dirs[n:] if rate_grads is not None else None)
    new_theta = theta0.with_tensors(
        [ad.leaf(p.data - beta * g) for p, g in zip(theta0.tensors(), theta_grads)])
    if rate_grads is None:
        return new_theta, rates
    new_rates = rates.with_tensors(
        [ad.leaf(a.data - beta * g) for a, g in zip(rates.tensors(), rate_grads)])
    return new_theta, new_rates


def outer_step(theta0: ParamSet, rates: LearnableRates, meta_loss: Tensor,
               beta_e: float, update_rates: bool = True) -> tuple[ParamSet, LearnableRates]:
    """One gradient-descent step on theta0 (and the rates) from a meta-loss."""
    wrt = theta0.tensors() + (rates.tensors() if update_rates else [])
    grads = ad.grad(meta_loss, wrt, create_graph=False)
    for g in grads:
        if not np.isfinite(g.data).all():
            norms = [float(np.linalg.norm(x.data)) for x in grads]
            raise MetaTrainError(f"non-finite meta-gradient (norms {norms})")
    n = len(theta0.tensors())
    return _apply_update(theta0, rates,
                         [g.data for g in grads[:n]],
                         [g.data for g in grads[n:]] if update_rates else None,
                         beta_e)


def meta_train(config: MetaTrainConfig, data: MetaDataset, arch: ArchConfig,
               resume: Checkpoint | None = None,
               snapshot_epochs: tuple[int, ...] = ()) -> tuple[Checkpoint, dict[int, Checkpoint]]:
    """Run the full training loop over the meta-train tasks.

    One epoch = one outer update accumulated over every meta-train task.
    ``resume`` continues a run from a previous checkpoint's epoch count
    (epochs already in its history are not repeated; with the opt-in adam
    optimizer the moment estimates restart); ``snapshot_epochs`` returns
    additional frozen copies taken right after those epochs.
    """
    if not data.train_tasks:
        raise ValueError("meta_train: empty meta-train set")
    vanilla = config.mode == "vanilla_maml"
    n_steps = config.inner_steps
    schedule = config.cosine()
    weights = (weight_matrix(config.n_epochs, n_steps, config.gamma)
               if not vanilla and config.n_epochs >= 1 else None)
    vanilla_row = np.array([0.0] * (n_steps - 1) + [1.0])

    if resume is not None:
        theta = resume.theta0
        rates = resume.rates
        history = list(resume.history)
        start_epoch = len(history)
    else:
        theta = init_params(arch, config.seed)
        rates = LearnableRates.constant(
            [layer for layer, _ in arch.layer_shapes()], n_steps, config.alpha_init)
        history = []
        start_epoch = 0

    # Prestack sample arrays once; tasks are immutable.
    batches = [(t, t.support_batch(), t.query_batch()) for t in data.train_tasks]
    snapshots: dict[int, Checkpoint] = {}
    adam = _AdamState() if config.outer_optimizer == "adam" else None

    for epoch in range(start_epoch + 1, config.n_epochs + 1):
        create_graph = epoch > config.first_order_epochs
        v_row = vanilla_row if vanilla else weights.row(epoch)
        beta = schedule.beta_max if vanilla else cosine_lr(schedule, epoch - 1)
        update_rates = not vanilla

        wrt_n = len(theta.tensors())
        acc = [np.zeros(t.data.shape) for t in theta.tensors()]
        acc_rates = [np.zeros(()) for _ in rates.tensors()] if update_rates else None
        epoch_loss = 0.0

        for task, support, query in batches:
            with ad.Graph():
                thetas = inner_adapt(theta, rates, support, n_steps, create_graph, arch)
                total = None
                for k, theta_k in enumerate(thetas):
                    if v_row[k] == 0.0:
                        continue
                    term = ad.scalar_mul(float(v_row[k]), mse_loss(theta_k, query, arch))
                    total = term if total is None else ad.add(total, term)
                wrt = theta.tensors() + (rates.tensors() if update_rates else [])
                grads = ad.grad(total, wrt, create_graph=False)
            for buf, g in zip(acc, grads[:wrt_n]):
                if not np.isfinite(g.data).all():
                    raise MetaTrainError(
                        f"non-finite meta-gradient at epoch {epoch}, task {task.id}, "
                        f"|g|={float(np.linalg.norm(g.data))}")
                buf += g.data
            if update_rates:
                for buf, g in zip(acc_rates, grads[wrt_n:]):
                    buf += g.data
            epoch_loss += total.item()

        if not math.isfinite(epoch_loss):
            raise MetaTrainError(f"non-finite meta-loss at epoch {epoch}")
        theta, rates = _apply_update(theta, rates, acc, acc_rates, beta, adam)
        history.append({"epoch": epoch, "meta_loss": epoch_loss, "beta": beta})
        if epoch in snapshot_epochs:
            snapshots[epoch] = Checkpoint(theta, rates, arch, config, list(history))

    return Checkpoint(theta, rates, arch, config, history), snapshots


def adapt_and_eval(checkpoint: Checkpoint, task: Task,
                   n_steps: int | None = None) -> TaskMetrics:
    """Adapt on the task's support set with the learned rates, then score the
    query set.  Read-only with respect to the checkpoint; n_steps=0 evaluates
    the meta-initialization directly."""
    if n_steps is None:
        n_steps = checkpoint.config.inner_steps
    arch = checkpoint.arch
    rates = checkpoint.rates
    if n_steps > rates.n_steps:
        # reuse the last learned per-layer rate for extra evaluation steps
        m = rates.value_matrix()
        extra = np.repeat(m[:, -1:], n_steps - rates.n_steps, axis=1)
        rates = LearnableRates.from_matrix(rates.layer_names, np.hstack([m, extra]))
    with ad.Graph():
        if n_steps > 0:
            thetas = inner_adapt(checkpoint.theta0, rates, task.support_batch(),
                                 n_steps, create_graph=False, arch=arch)
            final = thetas[-1]
        else:
            final = checkpoint.theta0
        qx, qy = task.query_batch()
        pred = forward_batch(final, qx, arch).data.T
    return task_metrics(task, pred)
