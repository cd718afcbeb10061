"""Few-shot short-term load forecasting with meta-learned LSTM initializations."""

from .autodiff import DomainError, Graph, GraphError, ShapeError, Tensor, const, grad, leaf, tensor_op
from .baselines import BaselineConfig, finetune_eval_ti, pretrain_ti, train_ts
from .data import (DataError, ForecastSample, MetaDataset, Task, TimeSeries,
                   build_task, ingest_csv, scale_task, unscale_task)
from .lstm import ArchConfig, ParamSet, forward, forward_batch, init_params, mse_loss
from .meta import (Checkpoint, CosineSchedule, LearnableRates, MetaTrainConfig,
                   MetaTrainError, WeightSchedule, adapt_and_eval, cosine_lr,
                   gradient_steps, inner_adapt, meta_train, multi_step_meta_loss, outer_step,
                   weight_matrix)
from .metrics import (AggregateReport, TaskMetrics, aggregate, malpe, mape, mse,
                      write_report_csv, write_report_json)
from .synthetic import SynthConfig, make_series, synth_meta_dataset, synth_support_sweep_tasks

__version__ = "0.1.0"

__all__ = [
    "AggregateReport", "ArchConfig", "BaselineConfig", "Checkpoint",
    "CosineSchedule", "DataError", "DomainError", "ForecastSample", "Graph",
    "GraphError", "LearnableRates", "MetaDataset", "MetaTrainConfig",
    "MetaTrainError", "ParamSet", "ShapeError", "SynthConfig", "Task",
    "TaskMetrics", "Tensor", "TimeSeries", "WeightSchedule", "adapt_and_eval",
    "aggregate", "build_task", "const", "cosine_lr", "finetune_eval_ti",
    "forward", "forward_batch", "grad", "gradient_steps", "ingest_csv", "init_params",
    "inner_adapt", "leaf", "make_series", "malpe", "mape", "meta_train",
    "mse", "mse_loss", "multi_step_meta_loss", "outer_step", "pretrain_ti",
    "scale_task", "synth_meta_dataset", "synth_support_sweep_tasks",
    "tensor_op", "train_ts", "unscale_task", "weight_matrix",
    "write_report_csv", "write_report_json",
]
