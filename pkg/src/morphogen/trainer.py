"""Minibatch SGD training loop with per-epoch logging and atomic checkpoints."""

from __future__ import annotations

import csv
import io
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network
from .dataset import Dataset
from .errors import DivergedLoss, EmptyDataset, InvalidConfig
from .network import ArchConfig, ModelParams


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    minibatch_size: int = 64
    learning_rate: float = 0.05
    lr_decay: float = 0.95
    shuffle_seed: int = 0
    checkpoint_every: int = 5

    def validate(self) -> None:
        if self.epochs < 1:
            raise InvalidConfig(f"epochs {self.epochs} must be >= 1")
        if self.minibatch_size < 1:
            raise InvalidConfig(f"minibatch_size {self.minibatch_size} must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidConfig(f"learning_rate {self.learning_rate} must be > 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise InvalidConfig(f"lr_decay {self.lr_decay} outside (0,1]")
        if self.checkpoint_every < 1:
            raise InvalidConfig(f"checkpoint_every {self.checkpoint_every} must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    lr: float
    seconds: float


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)

    CSV_HEADER = ("epoch", "train_mse", "val_mse", "lr", "seconds")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(self.CSV_HEADER)
        for r in self.records:
            writer.writerow([r.epoch, repr(r.train_mse), repr(r.val_mse), repr(r.lr), repr(r.seconds)])
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "TrainingLog":
        rows = list(csv.reader(io.StringIO(text)))
        records = [
            EpochRecord(int(e), float(t), float(v), float(lr), float(s))
            for e, t, v, lr, s in rows[1:]
        ]
        return TrainingLog(records)


def write_checkpoint_atomic(params: ModelParams, path: str | Path) -> None:
    """Write-temp-then-rename so an interrupted run never corrupts the file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(network.serialize(params))
    os.replace(tmp, path)


def evaluate(params: ModelParams, data: Dataset, batch_size: int = 256) -> float:
    """Mean reconstruction distortion; spatial WTA on, lifetime off."""
    n = len(data)
    if n == 0:
        raise EmptyDataset("evaluate needs at least one image")
    total = 0.0
    for start in range(0, n, batch_size):
        batch = data.images[start : start + batch_size]
        ctx = network._forward_batch(params, batch, sparsify=True)
        resid = ctx.reconstruction - ctx.x
        total += float((resid * resid).sum())
    return total / n


def train(
    data: Dataset,
    arch: ArchConfig,
    cfg: TrainConfig,
    validation: Dataset | None = None,
    checkpoint_dir: str | Path | None = None,
) -> tuple[ModelParams, TrainingLog]:
    """Run minibatch SGD over shuffled epochs.

    The minibatch gradient is the mean over its samples; lifetime sparsity is
    applied inside each minibatch only. Deterministic given the seeds in `arch`
    and `cfg` (the `seconds` column is wall time and is diagnostic only).
    """
    cfg.validate()
    arch.validate()
    n = len(data)
    if n == 0:
        raise EmptyDataset("training needs at least one image")

    params = network.init_params(arch)
    lifetime = arch.sparsity.lifetime_rate
    log = TrainingLog()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(cfg.epochs):
        t0 = time.monotonic()
        lr = cfg.learning_rate * cfg.lr_decay**epoch
        perm = np.random.default_rng([cfg.shuffle_seed, epoch]).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start : start + cfg.minibatch_size]
            batch = data.images[idx]
            ctx = network._forward_batch(
                params, batch, sparsify=True, lifetime_rate=lifetime
            )
            try:
                grad, mean_loss = network._backward_from_ctx(params, ctx, mean=True)
            except network.NonFiniteLoss as exc:
                raise DivergedLoss(
                    f"non-finite minibatch loss at epoch {epoch}", last_params=params
                ) from exc
            loss_sum += mean_loss * len(idx)
            params = network.sgd_step(params, grad, lr)
        train_mse = loss_sum / n
        val_mse = evaluate(params, validation) if validation is not None else math.nan
        log.records.append(
            EpochRecord(
                epoch=epoch,
                train_mse=train_mse,
                val_mse=val_mse,
                lr=lr,
                seconds=time.monotonic() - t0,
            )
        )
        if ckpt_dir is not None and (
            (epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1
        ):
            write_checkpoint_atomic(params, ckpt_dir / f"epoch_{epoch:04d}.mrph")
    return params, log
