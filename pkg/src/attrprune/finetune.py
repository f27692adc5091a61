"""Recovery after pruning: anchored fine-tuning on the clean subset, and the
from-scratch retraining comparator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import UsageError
from .nn import FnnModel, ParamAnchor, TrainResult, train

STRATEGIES = ("layer", "full", "retrain")


@dataclass
class FinetuneConfig:
    strategy: str = "full"
    layer: int | None = None
    lam_reg: float = 1e-3
    epochs: int = 20
    lr: float = 0.05
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise UsageError(f"unknown fine-tuning strategy {self.strategy!r}")
        if self.lam_reg < 0:
            raise UsageError("lam_reg must be non-negative")
        if self.strategy == "layer" and self.layer is None:
            raise UsageError("layer-wise fine-tuning needs a target layer")


def _require_clean(x, y) -> None:
    if len(y) == 0:
        raise UsageError(
            "the clean subset is empty; re-run the partition stage or change its settings"
        )


def finetune_layer(
    model: FnnModel,
    l: int,
    x: np.ndarray,
    y: np.ndarray,
    cfg: FinetuneConfig,
    on_epoch: Callable | None = None,
) -> TrainResult:
    """Update only layer ``l``, anchored at its pruned values."""
    _require_clean(x, y)
    model.layer(l)
    return train(
        model, x, y, cfg.epochs, cfg.lr, cfg.lam_reg, ParamAnchor.of(model),
        trainable=[l], seed=cfg.seed, batch_size=cfg.batch_size, on_epoch=on_epoch,
    )


def finetune_full(
    model: FnnModel,
    x: np.ndarray,
    y: np.ndarray,
    cfg: FinetuneConfig,
    on_epoch: Callable | None = None,
) -> TrainResult:
    """Update every layer, anchored at the whole pruned model."""
    _require_clean(x, y)
    return train(
        model, x, y, cfg.epochs, cfg.lr, cfg.lam_reg, ParamAnchor.of(model),
        trainable=None, seed=cfg.seed, batch_size=cfg.batch_size, on_epoch=on_epoch,
    )


def train_from_scratch(
    widths: Sequence[int],
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
    on_epoch: Callable | None = None,
) -> TrainResult:
    """Fresh initialisation and unregularised training, both driven by ``seed``.

    Used for the initial model and, on the clean subset, for the retraining
    baseline, so the two differ only in their training data.
    """
    return train(
        FnnModel.init(widths, seed), x, y, epochs, lr, seed=seed,
        batch_size=batch_size, on_epoch=on_epoch,
    )


def retrain_baseline(
    widths: Sequence[int],
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
    on_epoch: Callable | None = None,
) -> TrainResult:
    _require_clean(x, y)
    return train_from_scratch(widths, x, y, epochs, lr, seed, batch_size, on_epoch)
