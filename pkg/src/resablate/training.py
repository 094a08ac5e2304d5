"""Seeded SGD training loop and metric evaluation.

Everything downstream of (seed, hyperparameters, config) is deterministic:
the shuffle order, the update sequence, and therefore the final weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .datasets import LabeledDataset
from .errors import ConfigError, DataError
from .model import Model
from .tensor import Tensor

_EVAL_BATCH = 100


@dataclass
class Hyperparams:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    lr_schedule: str = "step-decay"  # constant | step-decay (x0.1 at 2/3 of epochs)

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size < 2:
            raise ConfigError("epochs must be positive and batch_size >= 2")
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("lr, momentum and weight_decay must be non-negative")
        if self.lr_schedule not in ("constant", "step-decay"):
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}")

    def lr_at(self, epoch: int) -> float:
        if self.lr_schedule == "step-decay" and epoch >= (2 * self.epochs) // 3:
            return self.lr * 0.1
        return self.lr

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "lr_schedule": self.lr_schedule,
        }


def _check_kind(model: Model, dataset: LabeledDataset) -> None:
    want = "classification" if model.config.task == "classify" else "segmentation"
    if dataset.kind != want:
        raise ConfigError(
            f"model task {model.config.task!r} needs a {want} dataset, "
            f"got {dataset.kind!r}"
        )


def _loss_and_grad(model: Model, logits: np.ndarray, targets) -> tuple[float, np.ndarray]:
    if model.config.task == "classify":
        return ops.softmax_cross_entropy(logits, targets)
    lt = Tensor(logits)
    probs = ops.sigmoid(lt)
    loss, grad_p = ops.soft_dice_loss(probs.data, targets)
    grad_logits = ops.sigmoid_grad(lt, Tensor(grad_p)).data
    return loss, grad_logits


def train(model: Model, train_set: LabeledDataset, test_set: LabeledDataset,
          hyper: Hyperparams) -> tuple[Model, list[dict]]:
    """Shuffled minibatch SGD with momentum and weight decay.

    BN runs in train mode during updates and eval mode for the test metric.
    Returns the trained model (updated in place) and one history entry per
    epoch. Trailing batches smaller than two samples are dropped (BN needs a
    batch variance).
    """
    _check_kind(model, train_set)
    _check_kind(model, test_set)
    if len(train_set) < 2:
        raise DataError("training set too small")

    names_params = model.named_parameters()
    params = [p for _, p in names_params]
    names = [n for n, _ in names_params]
    velocities = [np.zeros_like(p) for p in params]
    rng = np.random.Generator(np.random.PCG64(hyper.seed))
    history: list[dict] = []

    for epoch in range(hyper.epochs):
        lr = hyper.lr_at(epoch)
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            if len(idx) < 2:
                continue
            batch = Tensor(train_set.images[idx])
            logits, cache = model.forward_train(batch)
            loss, grad_logits = _loss_and_grad(model, logits, train_set.targets[idx])
            grads_by_name = model.backward(cache, grad_logits)
            grads = [grads_by_name[n] for n in names]
            ops.sgd_step(params, grads, velocities, lr,
                         hyper.momentum, hyper.weight_decay)
            losses.append(loss)
        history.append({
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "test_metric": evaluate(model, test_set),
        })
    return model, history


def _per_sample_scores(model: Model, dataset: LabeledDataset) -> np.ndarray:
    scores = np.empty(len(dataset), dtype=np.float64)
    for start in range(0, len(dataset), _EVAL_BATCH):
        stop = min(start + _EVAL_BATCH, len(dataset))
        logits = model.forward(Tensor(dataset.images[start:stop]), mode="eval")
        if model.config.task == "classify":
            pred = logits.argmax(axis=1)
            scores[start:stop] = (pred == dataset.targets[start:stop]).astype(np.float64)
        else:
            probs = ops.sigmoid(Tensor(logits)).data
            pred = (probs >= 0.5).astype(np.float32)
            for i in range(stop - start):
                scores[start + i] = ops.dice_coefficient(
                    pred[i : i + 1], dataset.targets[start + i : start + i + 1]
                )
    return scores


def evaluate(model: Model, dataset: LabeledDataset) -> float:
    """Mean top-1 accuracy (classification) or mean per-image Dice of the
    0.5-thresholded foreground probability (segmentation).

    Per-sample scores are reduced in sorted order, so the result is exactly
    invariant to dataset permutation.
    """
    _check_kind(model, dataset)
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    scores = _per_sample_scores(model, dataset)
    return float(np.sort(scores).mean())
