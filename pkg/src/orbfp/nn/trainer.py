"""Training loop with per-epoch validation and best-AUC checkpointing.

Every random draw of a step (augmentation, dropout, shuffling) comes from a
generator seeded with ``(seed, epoch, step)``, and the batch order of an epoch
from ``(seed, epoch)``. A run resumed from a checkpoint therefore continues
exactly as the uninterrupted run would have.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import NumericalError, ParameterError
from ..evaluation.metrics import batched_pairwise_roc
from ..receiver import packet_bits
from ..signal import AugmentRanges, augment_batch
from . import checkpoint as ckpt_mod
from .loss import DegenerateBatchError, triplet_loss_semihard
from .model import EmbeddingModel
from .optim import Adam

_SEED_TAG = 0x7EA1


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_auc: float
    seconds: float = 0.0


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_val_auc: float
    best_epoch: int
    checkpoint_path: Path | None


@dataclass
class TrainData:
    """Packets as ``(N, n, 2)`` float32 with integer labels."""

    x: np.ndarray
    y: np.ndarray
    bits: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32)
        self.y = np.asarray(self.y)
        if self.x.ndim != 3 or self.x.shape[2] != 2 or self.x.shape[0] != self.y.size:
            raise ParameterError("train data must be (N, n, 2) with one label per packet")

    @classmethod
    def from_records(cls, records, with_bits: bool = False) -> "TrainData":
        x = np.stack([r.samples for r in records]).astype(np.float32)
        y = np.array([r.sat_id for r in records])
        data = cls(x, y)
        if with_bits:
            data.bits = packet_bits(x[..., 0] + 1j * x[..., 1])
        return data


@dataclass
class Trainer:
    model: EmbeddingModel
    train: TrainData
    val: TrainData
    augment: AugmentRanges = field(default_factory=AugmentRanges)
    log: Callable[[str], None] | None = None

    def __post_init__(self):
        cfg = self.model.config
        if cfg.shuffle and self.train.bits is None:
            x = self.train.x
            self.train.bits = packet_bits(x[..., 0] + 1j * x[..., 1], cfg.sps)
        if np.unique(self.val.y).size < 2:
            raise ParameterError("validation data needs at least two transmitters")
        self.optimizer = Adam(self.model.params, lr=cfg.learning_rate)
        self.epoch = 0  # completed epochs
        self.step = 0  # completed optimiser steps
        self.best_val_auc = -math.inf
        self.best_epoch = -1
        self.history: list[EpochRecord] = []

    # -- resumable state ----------------------------------------------------------

    def to_checkpoint(self, **meta) -> ckpt_mod.Checkpoint:
        # wall time is left out so reruns write byte-identical checkpoints
        history = [{"epoch": h.epoch, "loss": h.loss, "val_auc": h.val_auc} for h in self.history]
        return ckpt_mod.from_model(
            self.model,
            step=self.step,
            epoch=self.epoch,
            best_val_auc=None if self.best_epoch < 0 else float(self.best_val_auc),
            adam=self.optimizer.state,
            meta={"history": history, "best_epoch": self.best_epoch, **meta},
        )

    def restore(self, ck: ckpt_mod.Checkpoint) -> None:
        # the epoch budget may grow between runs; everything else must match
        if replace(ck.config, epochs=self.model.config.epochs) != self.model.config:
            raise ParameterError("checkpoint config does not match the trainer's model")
        self.model.load_state_dict(ck.params)
        if ck.adam is not None:
            self.optimizer.state = ck.adam
        self.epoch, self.step = ck.epoch, ck.step
        self.best_val_auc = -math.inf if ck.best_val_auc is None else ck.best_val_auc
        self.best_epoch = ck.meta.get("best_epoch", -1)
        self.history = [EpochRecord(**h) for h in ck.meta.get("history", [])]

    # -- steps --------------------------------------------------------------------

    def epoch_batches(self, epoch: int) -> list[np.ndarray]:
        cfg = self.model.config
        order = np.random.default_rng([cfg.seed, _SEED_TAG, epoch]).permutation(self.train.y.size)
        n_full = order.size // cfg.batch_size
        return [order[i * cfg.batch_size : (i + 1) * cfg.batch_size] for i in range(max(n_full, 1))]

    def train_step(self, idx: np.ndarray, epoch: int, step_in_epoch: int) -> float:
        cfg = self.model.config
        rng = np.random.default_rng([cfg.seed, _SEED_TAG, epoch, step_in_epoch])
        x = self.train.x[idx]
        z = augment_batch(x[..., 0] + 1j * x[..., 1], self.augment, rng)
        batch = np.stack([z.real, z.imag], axis=-1).astype(np.float32)
        bits = None if self.train.bits is None else self.train.bits[idx]
        self.model.zero_grad()
        emb = self.model.forward(batch, training=True, rng=rng, bits=bits)
        loss = triplet_loss_semihard(emb, self.train.y[idx], cfg.margin)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss {value} at epoch {epoch}, step {step_in_epoch}")
        loss.backward()
        self.optimizer.step()
        self.step += 1
        return value

    def validate(self) -> float:
        emb = self.model.embed(self.val.x)
        return batched_pairwise_roc(emb, self.val.y).auc

    def run_epoch(self) -> EpochRecord:
        t0 = time.perf_counter()
        losses = []
        for s, idx in enumerate(self.epoch_batches(self.epoch)):
            try:
                losses.append(self.train_step(idx, self.epoch, s))
            except DegenerateBatchError:
                continue
        if not losses:
            raise ParameterError("no batch in this epoch contained a valid triplet")
        auc = self.validate()
        rec = EpochRecord(self.epoch, float(np.mean(losses)), float(auc), time.perf_counter() - t0)
        self.history.append(rec)
        self.epoch += 1
        return rec

    def fit(self, epochs: int, checkpoint_path=None, last_path=None, meta: dict | None = None) -> TrainResult:
        """Train until ``epochs`` epochs are complete.

        After each epoch the model is saved to ``checkpoint_path`` if its
        validation AUC is a new best, and the full trainer state to
        ``last_path`` when given.
        """
        meta = meta or {}
        while self.epoch < epochs:
            rec = self.run_epoch()
            if self.log:
                self.log(f"epoch {rec.epoch}: loss {rec.loss:.4f} val_auc {rec.val_auc:.4f} ({rec.seconds:.0f} s)")
            if rec.val_auc > self.best_val_auc:
                self.best_val_auc, self.best_epoch = rec.val_auc, rec.epoch
                if checkpoint_path is not None:
                    ckpt_mod.save(checkpoint_path, self.to_checkpoint(**meta))
            if last_path is not None:
                ckpt_mod.save(last_path, self.to_checkpoint(**meta))
        return TrainResult(
            self.history,
            float(self.best_val_auc),
            self.best_epoch,
            None if checkpoint_path is None else Path(checkpoint_path),
        )
