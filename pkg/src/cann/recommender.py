"""Prediction head: fuse global and focal representations, score candidates
by a dot-product softmax, and compute the training loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor


@dataclass
class CandidateSet:
    """An ordered pool of candidate items with their d_f embeddings."""

    items: list[str]
    embeddings: Tensor  # |N| × d_f

    def __post_init__(self):
        if len(set(self.items)) != len(self.items):
            raise ContractError("candidate item ids must be distinct")
        if len(self.items) < 2:
            raise ContractError(f"need at least 2 candidates, got {len(self.items)}")
        if self.embeddings.shape[0] != len(self.items):
            raise ShapeError(
                f"{len(self.items)} candidate ids but embedding matrix {self.embeddings.shape}"
            )


@dataclass
class PredictionHeadParams:
    W_h: Tensor  # (d_f + d_y) × d_f
    b_h: Tensor  # d_f


def init_head_params(d_f: int, d_y: int, rng: np.random.Generator) -> PredictionHeadParams:
    return PredictionHeadParams(
        W_h=T.glorot_uniform(rng, d_f + d_y, d_f, (d_f + d_y, d_f)),
        b_h=T.zeros(d_f),
    )


def predict_embedding(G: Tensor, F: Tensor, head: PredictionHeadParams) -> Tensor:
    """Mean-pool the k×d_f global and k×d_y focal matrices, concatenate, and
    map through the fully connected head. Returns a 1×d_f row."""
    if G.ndim != 2 or F.ndim != 2 or G.shape[0] != F.shape[0]:
        raise ShapeError(f"incompatible representation shapes {G.shape} and {F.shape}")
    fused = T.concat([G.mean(axis=0, keepdims=True), F.mean(axis=0, keepdims=True)], axis=1)
    if fused.shape[1] != head.W_h.shape[0]:
        raise ShapeError(f"fused dim {fused.shape} does not match head {head.W_h.shape}")
    return T.add(fused @ head.W_h, head.b_h)


def candidate_logits(x_hat: Tensor, candidates: CandidateSet) -> Tensor:
    if x_hat.ndim == 1:
        x_hat = x_hat.reshape(1, -1)
    return x_hat @ T.transpose(candidates.embeddings)


def candidate_probability(x_hat: Tensor, candidates: CandidateSet) -> Tensor:
    """Softmax over dot products of the prediction with every candidate."""
    return T.softmax_rows(candidate_logits(x_hat, candidates))


def nll_loss(predictions: Tensor, truth_indices: list[int], candidates: CandidateSet) -> Tensor:
    """Mean negative log-likelihood of the ground-truth candidates.

    `predictions` is an m×d_f matrix, one row per masked collection.
    """
    n = len(candidates.items)
    for idx in truth_indices:
        if not 0 <= idx < n:
            raise ContractError(f"ground-truth index {idx} outside candidate pool of {n}")
    logits = predictions @ T.transpose(candidates.embeddings)
    log_probs = T.log_softmax_rows(logits)
    picked = log_probs[np.arange(len(truth_indices)), np.asarray(truth_indices)]
    return T.mul(picked.mean(), -1.0)


def score_candidates(x_hat: Tensor, candidates: CandidateSet) -> list[tuple[str, float]]:
    """Rank candidates by descending probability; ties keep list order."""
    probs = candidate_probability(x_hat, candidates).data.reshape(-1)
    order = np.argsort(-probs, kind="stable")
    return [(candidates.items[i], float(probs[i])) for i in order]
