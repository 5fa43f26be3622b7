"""Adam optimisation loop with step-decay learning rate and best-validation selection."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .data import WindowBatch, iterate_batches
from .model import Forecaster, loss_mae

log = logging.getLogger(__name__)

__all__ = [
    "Adam",
    "TrainRun",
    "EpochRecord",
    "TrainingDiverged",
    "lr_schedule",
    "clip_grad_norm",
    "evaluate_loss",
    "train",
]

LOG_COLUMNS = ("epoch", "lr", "train_mae", "val_mae", "wall_seconds")


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    """Bias-corrected Adam over a name -> Tensor mapping."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        for k, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter {k!r} has no gradient buffer")
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"step": self.step_count, "lr": self.lr, "m": self.m, "v": self.v}


def lr_schedule(base_lr: float, epoch: int, gamma: float = 1.0, step: int = 10) -> float:
    """base_lr * gamma ** floor(epoch / step); gamma = 1 keeps it constant."""
    if epoch < 1:
        raise ContractError("epochs are counted from 1")
    return base_lr * gamma ** (epoch // step)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Rescale gradients in place to global L2 norm <= max_norm; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values()))
    if max_norm > 0 and norm > max_norm:
        f = max_norm / (norm + 1e-12)
        for p in params.values():
            p.grad *= f
    return norm


@dataclass
class TrainRun:
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-3
    lr_gamma: float = 1.0
    lr_step: int = 10
    clip_norm: float = 5.0
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_mae: float
    val_mae: float
    wall_seconds: float

    def row(self) -> list:
        return [self.epoch, repr(self.lr), repr(self.train_mae), repr(self.val_mae),
                f"{self.wall_seconds:.3f}"]


@dataclass
class TrainResult:
    model: Forecaster
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf


def evaluate_loss(model: Forecaster, windows: WindowBatch, batch_size: int = 256) -> float:
    """Mean absolute error over all target cells, evaluation mode."""
    if len(windows) == 0:
        return math.nan
    total, count = 0.0, 0
    with ad.no_grad():
        for b in iterate_batches(windows, batch_size):
            pred = model.forward(b.inputs, training=False).data
            total += float(np.abs(pred - b.targets).sum())
            count += pred.size
    return total / count


def _snapshot(model: Forecaster) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in model.parameters().items()}


def _restore(model: Forecaster, snap: dict[str, np.ndarray]) -> None:
    for k, p in model.parameters().items():
        p.data[...] = snap[k]


def train(model: Forecaster, train_windows: WindowBatch, val_windows: WindowBatch | None,
          run: TrainRun, log_path=None, on_epoch=None) -> TrainResult:
    """Shuffle, forward, MAE, backward, clip, Adam; keep the best-validation weights."""
    params = model.parameters()
    opt = Adam(params, lr=run.lr)
    rng = np.random.default_rng(run.seed)
    result = TrainResult(model)
    best = _snapshot(model)
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
    try:
        for epoch in range(1, run.epochs + 1):
            t0 = time.perf_counter()
            opt.lr = lr_schedule(run.lr, epoch, run.lr_gamma, run.lr_step)
            losses, sizes = [], []
            for step, batch in enumerate(iterate_batches(train_windows, run.batch_size, rng)):
                model.zero_grad()
                loss = loss_mae(model.forward(batch.inputs, training=True), batch.targets)
                value = loss.item()
                if not math.isfinite(value):
                    norms = {k: float(np.linalg.norm(p.grad)) for k, p in params.items()}
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step} (lr={opt.lr}); grad norms {norms}"
                    )
                loss.backward()
                clip_grad_norm(params, run.clip_norm)
                opt.step()
                losses.append(value)
                sizes.append(len(batch))
            train_mae = float(np.average(losses, weights=sizes)) if losses else math.nan
            val_mae = evaluate_loss(model, val_windows) if val_windows is not None else math.nan
            rec = EpochRecord(epoch, opt.lr, train_mae, val_mae, time.perf_counter() - t0)
            result.history.append(rec)
            log.info("epoch %d lr %.3g train %.5f val %.5f", epoch, opt.lr, train_mae, val_mae)
            score = val_mae if math.isfinite(val_mae) else train_mae
            if score < result.best_val:
                result.best_val, result.best_epoch = score, epoch
                best = _snapshot(model)
            if writer is not None:
                writer.writerow(rec.row())
                fh.flush()
            if on_epoch is not None:
                on_epoch(rec)
    finally:
        if fh is not None:
            fh.close()
    if result.history:
        _restore(model, best)
    return result


def read_log(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
