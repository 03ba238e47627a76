"""Missingness-shift-robust tabular classification."""

from .data import Schema, SplitSpec, TabularDataset, load_csv, load_schema, make_synthetic
from .metrics import accuracy, auc
from .missingness import Ar1Copula, BernoulliMasker, ShiftScenario, compose_masks, sample_shift_masks
from .model import MirramsModel, ModelConfig
from .objective import LossConfig, LossReport, loss_l1, loss_l2, loss_l3, total_loss
from .trainer import ExperimentSpec, TrainConfig, evaluate, grid_search, run_experiment, train

__version__ = "0.1.0"

__all__ = [
    "Schema", "SplitSpec", "TabularDataset", "load_csv", "load_schema", "make_synthetic",
    "accuracy", "auc",
    "Ar1Copula", "BernoulliMasker", "ShiftScenario", "compose_masks", "sample_shift_masks",
    "MirramsModel", "ModelConfig",
    "LossConfig", "LossReport", "loss_l1", "loss_l2", "loss_l3", "total_loss",
    "ExperimentSpec", "TrainConfig", "evaluate", "grid_search", "run_experiment", "train",
]
