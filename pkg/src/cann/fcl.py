"""Focal coherence learning over semantic-focal region features.

Region features arrive as a k×|F|×|R|×d_c array (3 semantic modes × 3
regions per mode). They are reduced to d_y, attended within each item over
its 9 region slots (with a residual add), summarized per item by mean
pooling, and attended across the k items to produce the k×d_y focal
representation. Padding items carry zero raw features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import HeadParams, init_head, multi_head
from .errors import ContractError, ShapeError
from .tensor import Tensor

N_MODES = 3
N_REGIONS = 3
SLOTS = N_MODES * N_REGIONS


@dataclass
class FclConfig:
    d_c: int = 2048  # raw region feature dim
    d_y: int = 128   # working region embedding dim
    S_f: int = 2     # heads per attention stage
    k: int = 8       # padded collection length

    @property
    def d_a(self) -> int:
        return self.d_y // self.S_f

    def validate(self) -> None:
        if self.S_f * self.d_a != self.d_y:
            raise ContractError(f"head count {self.S_f} must divide d_y {self.d_y}")


@dataclass
class FclParams:
    W_r: Tensor  # d_c × d_y region reduction
    b_r: Tensor
    within_heads: list[HeadParams]
    across_heads: list[HeadParams]


def init_fcl_params(cfg: FclConfig, rng: np.random.Generator) -> FclParams:
    cfg.validate()
    return FclParams(
        W_r=T.glorot_uniform(rng, cfg.d_c, cfg.d_y, (cfg.d_c, cfg.d_y)),
        b_r=T.zeros(cfg.d_y),
        within_heads=[init_head(rng, cfg.d_y, cfg.d_a) for _ in range(cfg.S_f)],
        across_heads=[init_head(rng, cfg.d_y, cfg.d_a) for _ in range(cfg.S_f)],
    )


def reduce_region_features(raw: np.ndarray, params: FclParams, cfg: FclConfig) -> Tensor:
    """Shared linear map + ReLU on every region vector.

    Input shape (k, 3, 3, d_c); output is the flattened (k*9)×d_y tensor.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 4 or raw.shape[1:] != (N_MODES, N_REGIONS, cfg.d_c):
        raise ShapeError(
            f"region features must have shape (k, {N_MODES}, {N_REGIONS}, {cfg.d_c}), got {raw.shape}"
        )
    flat = Tensor(raw.reshape(-1, cfg.d_c))
    return T.relu(T.add(flat @ params.W_r, params.b_r))


def within_item_attention(
    V: Tensor, params: FclParams, k: int, attn_out: list | None = None
) -> Tensor:
    """Attend over each item's 9 region slots independently, residual added."""
    if V.shape[0] != k * SLOTS:
        raise ShapeError(f"expected {k * SLOTS} slot rows, got {V.shape[0]}")
    outputs = []
    for i in range(k):
        rows = V[i * SLOTS : (i + 1) * SLOTS]
        out, matrices = multi_head(rows, params.within_heads)
        outputs.append(T.add(out, rows))
        if attn_out is not None:
            attn_out.append([A.data.copy() for A in matrices])
    return T.concat(outputs, axis=0)


def item_summaries(V_mid: Tensor, k: int) -> Tensor:
    """Mean of each item's 9 slot vectors: a k×d_y matrix."""
    # constant pooling matrix keeps this a single differentiable matmul
    pool = np.zeros((k, k * SLOTS))
    for i in range(k):
        pool[i, i * SLOTS : (i + 1) * SLOTS] = 1.0 / SLOTS
    return Tensor(pool) @ V_mid


def across_item_attention(
    V_mid: Tensor, params: FclParams, k: int, attn_out: list | None = None
) -> Tensor:
    """Summarize items and attend across the k summaries; returns k×d_y."""
    summaries = item_summaries(V_mid, k)
    out, matrices = multi_head(summaries, params.across_heads)
    if attn_out is not None:
        attn_out.append([A.data.copy() for A in matrices])
    return out


def fcl_forward(
    raw: np.ndarray,
    params: FclParams,
    cfg: FclConfig,
    attn_out: dict | None = None,
) -> Tensor:
    """Full focal pipeline: reduce, within-item, across-item. Returns k×d_y."""
    k = np.asarray(raw).shape[0]
    V = reduce_region_features(raw, params, cfg)
    within_attn: list | None = [] if attn_out is not None else None
    V_mid = within_item_attention(V, params, k, attn_out=within_attn)
    across_attn: list | None = [] if attn_out is not None else None
    out = across_item_attention(V_mid, params, k, attn_out=across_attn)
    if attn_out is not None:
        attn_out["within"] = within_attn
        attn_out["across"] = across_attn
    return out


def pad_region_features(
    item_features: list[np.ndarray | None], cfg: FclConfig, k: int
) -> np.ndarray:
    """Left-pad a list of per-item (3, 3, d_c) arrays with zeros up to k items."""
    if len(item_features) > k:
        raise ContractError(f"collection length {len(item_features)} exceeds k={k}")
    out = np.zeros((k, N_MODES, N_REGIONS, cfg.d_c))
    n_pad = k - len(item_features)
    for j, feats in enumerate(item_features):
        if feats is None:
            continue
        feats = np.asarray(feats, dtype=np.float64)
        if feats.shape != (N_MODES, N_REGIONS, cfg.d_c):
            raise ShapeError(
                f"per-item region features must be ({N_MODES}, {N_REGIONS}, {cfg.d_c}), got {feats.shape}"
            )
        out[n_pad + j] = feats
    return out


def fcl_parameters(params: FclParams) -> dict[str, Tensor]:
    named = {"fcl.W_r": params.W_r, "fcl.b_r": params.b_r}
    for stage, heads in (("within", params.within_heads), ("across", params.across_heads)):
        for s, head in enumerate(heads):
            named[f"fcl.{stage}.head{s}.W_v"] = head.W_v
            named[f"fcl.{stage}.head{s}.b_v"] = head.b_v
            named[f"fcl.{stage}.head{s}.W_q"] = head.W_q
            named[f"fcl.{stage}.head{s}.W_k"] = head.W_k
    return named
