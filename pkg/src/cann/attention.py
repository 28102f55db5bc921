"""Scaled dot-product multi-head attention shared by the coherence modules.

Each head carries a value projection (input dim -> head dim) and square
query/key maps over the head space. Scores between positions i and j are
(W_q v_i) . (W_k v_j) / sqrt(d_head), row-softmaxed into a stochastic
matrix; head outputs are concatenated, so S * d_head must equal the input
dimension whenever a residual add follows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class HeadParams:
    """One attention head: value projection plus query/key maps."""

    W_v: Tensor  # d_in × d_head
    b_v: Tensor  # d_head
    W_q: Tensor  # d_head × d_head
    W_k: Tensor  # d_head × d_head


def init_head(rng: np.random.Generator, d_in: int, d_head: int) -> HeadParams:
    return HeadParams(
        W_v=T.glorot_uniform(rng, d_in, d_head, (d_in, d_head)),
        b_v=T.zeros(d_head),
        W_q=T.glorot_uniform(rng, d_head, d_head, (d_head, d_head)),
        W_k=T.glorot_uniform(rng, d_head, d_head, (d_head, d_head)),
    )


def coherence_logits(X_s: Tensor, head: HeadParams) -> Tensor:
    """Scaled pairwise scores (W_q x_i) . (W_k x_j) / sqrt(d_head)."""
    d_head = head.W_q.shape[0]
    q = X_s @ T.transpose(head.W_q)
    k = X_s @ T.transpose(head.W_k)
    return T.mul(q @ T.transpose(k), 1.0 / math.sqrt(d_head))


def coherence_scores(X_s: Tensor, head: HeadParams) -> Tensor:
    """Row-stochastic n×n score matrix over already-projected features X_s."""
    return T.softmax_rows(coherence_logits(X_s, head))


def multi_head(X: Tensor, heads: list[HeadParams]) -> tuple[Tensor, list[Tensor]]:
    """Apply every head to the n×d_in matrix X and concatenate outputs.

    Returns the n×(S·d_head) output and the per-head attention matrices.
    """
    outputs = []
    matrices = []
    for head in heads:
        X_s = T.add(X @ head.W_v, head.b_v)
        A = coherence_scores(X_s, head)
        outputs.append(A @ X_s)
        matrices.append(A)
    return T.concat(outputs, axis=1), matrices
