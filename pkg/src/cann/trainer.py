"""Compositional optimization: masked-batch construction, in-batch candidate
pools, and plain SGD with a halving learning-rate schedule."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import FeatureStore, OutfitRecord
from .errors import ContractError, DataValidationError, TrainingError
from .model import CannModel
from .recommender import CandidateSet, nll_loss
from .tensor import Parameter

import logging

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 9
    k: int = 8
    lr0: float = 0.2
    decay_factor: float = 2.0
    decay_every_epochs: int = 2
    rng_seed: int = 0
    steps_per_epoch: int | None = None  # default: ceil(len(dataset) / batch_size)
    # early stop: relative improvement below stabilize_tol for stabilize_epochs
    stabilize_tol: float = 1e-3
    stabilize_epochs: int = 3

    def __post_init__(self):
        if self.batch_size < 2:
            raise ContractError("in-batch negatives require batch_size >= 2")
        if self.lr0 <= 0:
            raise ContractError("initial learning rate must be positive")


@dataclass
class TrainingBatch:
    seeds: list[list[str | None]]  # length-k, None marks left padding
    targets: list[str]
    candidate_ids: list[str]

    def target_indices(self) -> list[int]:
        return [self.candidate_ids.index(t) for t in self.targets]


def validate_dataset(dataset: list[OutfitRecord]) -> None:
    for record in dataset:
        if len(record.items) < 2:
            raise DataValidationError(
                f"outfit {record.outfit_id} has fewer than 2 items; cannot mask"
            )


def build_batch(
    dataset: list[OutfitRecord], cfg: TrainConfig, rng: np.random.Generator
) -> TrainingBatch:
    """Sample collections with replacement, mask one item each, left-pad to k,
    and pool every sampled item (masked ones included) as candidates."""
    validate_dataset(dataset)
    seeds: list[list[str | None]] = []
    targets: list[str] = []
    candidate_ids: list[str] = []
    seen: set[str] = set()
    picks = rng.integers(0, len(dataset), size=cfg.batch_size)
    for idx in picks:
        record = dataset[int(idx)]
        ids = record.item_ids()
        masked_pos = int(rng.integers(0, len(ids)))
        target = ids[masked_pos]
        seed = [i for pos, i in enumerate(ids) if pos != masked_pos]
        if len(seed) > cfg.k:
            raise DataValidationError(
                f"outfit {record.outfit_id} longer than k={cfg.k} after masking"
            )
        seeds.append([None] * (cfg.k - len(seed)) + seed)
        targets.append(target)
        for item in ids:
            if item not in seen:
                seen.add(item)
                candidate_ids.append(item)
    return TrainingBatch(seeds=seeds, targets=targets, candidate_ids=candidate_ids)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ContractError(f"epoch must be non-negative, got {epoch}")
    return cfg.lr0 / cfg.decay_factor ** (epoch // cfg.decay_every_epochs)


def sgd_step(params: dict[str, Parameter], lr: float) -> None:
    """w <- w - lr * g for every parameter, then zero the gradients."""
    for name, param in params.items():
        if param.tensor.grad is None:
            raise ContractError(f"parameter {name} has no gradient; run backward first")
    for param in params.values():
        param.tensor.data = param.tensor.data - lr * param.tensor.grad
        param.tensor.zero_grad()


def _batch_inputs(batch: TrainingBatch, features: FeatureStore):
    global_feats = []
    region_feats = []
    for seed in batch.seeds:
        items = [i for i in seed if i is not None]
        global_feats.append([features.get(i) for i in items])
        region_feats.append([features.region_block(i) for i in items])
    cand_raw = np.stack([features.get(i) for i in batch.candidate_ids])
    return global_feats, region_feats, cand_raw


def train_step(
    model: CannModel, batch: TrainingBatch, features: FeatureStore, lr: float
) -> float:
    global_feats, region_feats, cand_raw = _batch_inputs(batch, features)
    predictions = model.forward_batch(global_feats, region_feats, mode="train")
    pool = CandidateSet(items=batch.candidate_ids, embeddings=model.candidate_embeddings(cand_raw))
    loss = nll_loss(predictions, batch.target_indices(), pool)
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingError(
            f"non-finite loss {value} on batch with targets {batch.targets}"
        )
    model.zero_grad()
    loss.backward()
    sgd_step(model.parameters(), lr)
    return value


def evaluate_loss(model: CannModel, dataset: list[OutfitRecord], features: FeatureStore, cfg: TrainConfig, rng: np.random.Generator) -> float:
    """Mean eval-mode loss over one pass of masked batches (no updates)."""
    losses = []
    steps = max(1, len(dataset) // cfg.batch_size)
    for _ in range(steps):
        batch = build_batch(dataset, cfg, rng)
        global_feats, region_feats, cand_raw = _batch_inputs(batch, features)
        predictions = model.forward_batch(global_feats, region_feats, mode="eval")
        pool = CandidateSet(items=batch.candidate_ids, embeddings=model.candidate_embeddings(cand_raw))
        losses.append(nll_loss(predictions, batch.target_indices(), pool).item())
    return float(np.mean(losses))


def train(
    model: CannModel,
    dataset: list[OutfitRecord],
    features: FeatureStore,
    cfg: TrainConfig,
    validation: list[OutfitRecord] | None = None,
    loss_log_path: str | Path | None = None,
) -> list[dict]:
    """Run the masked-batch training loop; returns the per-epoch loss log."""
    validate_dataset(dataset)
    rng = np.random.default_rng(cfg.rng_seed)
    steps = cfg.steps_per_epoch or max(1, math.ceil(len(dataset) / cfg.batch_size))
    history: list[dict] = []
    val_history: list[float] = []
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        epoch_losses = []
        for _ in range(steps):
            batch = build_batch(dataset, cfg, rng)
            epoch_losses.append(train_step(model, batch, features, lr))
        entry = {"epoch": epoch, "mean_loss": float(np.mean(epoch_losses)), "lr": lr}
        if validation is not None:
            val_loss = evaluate_loss(model, validation, features, cfg, np.random.default_rng(cfg.rng_seed + 1))
            entry["val_loss"] = val_loss
            val_history.append(val_loss)
        history.append(entry)
        logger.info("epoch %d: loss %.4f lr %.4g", epoch, entry["mean_loss"], lr)
        if validation is not None and _stabilized(val_history, cfg):
            logger.info("validation loss stabilized; stopping at epoch %d", epoch)
            break
    if loss_log_path is not None:
        _write_loss_log(history, loss_log_path)
    return history


def _stabilized(val_history: list[float], cfg: TrainConfig) -> bool:
    n = cfg.stabilize_epochs
    if len(val_history) <= n:
        return False
    recent = val_history[-(n + 1) :]
    for prev, cur in zip(recent[:-1], recent[1:]):
        if prev - cur > cfg.stabilize_tol * abs(prev):
            return False
    return True


def _write_loss_log(history: list[dict], path: str | Path) -> None:
    fields = ["epoch", "mean_loss", "lr"] + (["val_loss"] if history and "val_loss" in history[0] else [])
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for entry in history:
            writer.writerow({k: entry[k] for k in fields})
