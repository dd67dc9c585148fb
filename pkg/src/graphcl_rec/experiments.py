"""Desk-scale experiment protocol on the synthetic block dataset.

One seed fixes the dataset draw, the split and the training run.  Variants
use LightGCN-single (last-layer output), K=2, d=32, and the remaining
hyperparameters at their library defaults.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .data import block_dataset, split_train_test
from .encoders import EncoderConfig
from .losses import LossConfig
from .train import TrainConfig, epochs_to_fraction, fit

VARIANTS = {
    "BPR": dict(main_loss="bpr", use_gcl=False),
    "BPR+DROP": dict(main_loss="bpr", use_gcl=False, message_dropout=0.2),
    "BPR+GCL": dict(main_loss="bpr", use_gcl=True),
    "CL": dict(main_loss="dcl", use_gcl=False, tau_plus=0.0),
    "DCL": dict(main_loss="dcl", use_gcl=False),
    "DCL+GCL": dict(main_loss="dcl", use_gcl=True),
}

TAU_GRID = (0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


@dataclass
class DeskResult:
    variant: str
    seed: int
    best_recall: float
    best_epoch: int
    epoch_to_95: int
    history: list


def desk_split(seed: int):
    return split_train_test(block_dataset(300, 400, 20, 30, seed=seed), 0.8, seed)


def desk_config(variant: str, seed: int, epochs: int = 200, patience: int = 30, **overrides) -> TrainConfig:
    v = dict(VARIANTS[variant])
    v.update(overrides)
    encoder = EncoderConfig("lightgcn", layers=2, combination="last",
                            message_dropout=v.pop("message_dropout", 0.0))
    loss_keys = {f.name for f in dataclasses.fields(LossConfig)}
    loss = LossConfig(**{k: v.pop(k) for k in list(v) if k in loss_keys})
    return TrainConfig(epochs=epochs, batch_size=512, lr=1e-3, seed=seed, dim=32,
                       early_stop_patience=patience, encoder=encoder, loss=loss, **v)


def run_desk(variant: str, seed: int, split=None, **kw) -> DeskResult:
    split = split if split is not None else desk_split(seed)
    res = fit(desk_config(variant, seed, **kw), split)
    return DeskResult(variant, seed, res.best_recall, res.best_epoch,
                      epochs_to_fraction(res.history), res.history)
