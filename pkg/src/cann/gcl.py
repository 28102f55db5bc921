"""Global coherence learning over whole-image features.

A collection of raw d_c item features is reduced to d_f, left-padded with a
learnable padding embedding up to length k, and pushed through a stack of
residual multi-head attention blocks, each followed by a feedforward layer,
an output projection, and batch normalization over the feature columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import HeadParams, init_head, multi_head
from .errors import ContractError, ShapeError
from .tensor import BatchNormState, Tensor, batch_norm

# re-export: per-head row-stochastic score computation
from .attention import coherence_scores  # noqa: F401


@dataclass
class GclConfig:
    d_c: int = 2048  # raw backbone feature dim
    d_f: int = 512   # reduced embedding dim
    S: int = 4       # attention heads per block
    b_star: int = 4  # block count
    k: int = 8       # padded collection length

    @property
    def d_s(self) -> int:
        return self.d_f // self.S

    def validate(self) -> None:
        if self.S * self.d_s != self.d_f:
            raise ContractError(f"head count {self.S} must divide d_f {self.d_f}")
        if min(self.d_c, self.d_f, self.S, self.b_star) < 1 or self.k < 2:
            raise ContractError("all GCL dimensions must be positive and k >= 2")


@dataclass
class GclBlockParams:
    heads: list[HeadParams]
    W_n1: Tensor
    b_n1: Tensor
    W_n2: Tensor
    b_n2: Tensor
    W_bn: Tensor
    b_bn: Tensor
    bn: BatchNormState


@dataclass
class GclParams:
    W_f1: Tensor
    b_f1: Tensor
    W_f2: Tensor
    b_f2: Tensor
    padding: Tensor  # learnable d_c padding embedding
    blocks: list[GclBlockParams] = field(default_factory=list)


def init_gcl_params(cfg: GclConfig, rng: np.random.Generator) -> GclParams:
    cfg.validate()
    blocks = []
    for _ in range(cfg.b_star):
        blocks.append(
            GclBlockParams(
                heads=[init_head(rng, cfg.d_f, cfg.d_s) for _ in range(cfg.S)],
                W_n1=T.glorot_uniform(rng, cfg.d_f, cfg.d_f, (cfg.d_f, cfg.d_f)),
                b_n1=T.zeros(cfg.d_f),
                W_n2=T.glorot_uniform(rng, cfg.d_f, cfg.d_f, (cfg.d_f, cfg.d_f)),
                b_n2=T.zeros(cfg.d_f),
                W_bn=T.glorot_uniform(rng, cfg.d_f, cfg.d_f, (cfg.d_f, cfg.d_f)),
                b_bn=T.zeros(cfg.d_f),
                bn=BatchNormState.create(cfg.d_f),
            )
        )
    return GclParams(
        W_f1=T.glorot_uniform(rng, cfg.d_c, cfg.d_c, (cfg.d_c, cfg.d_c)),
        b_f1=T.zeros(cfg.d_c),
        W_f2=T.glorot_uniform(rng, cfg.d_c, cfg.d_f, (cfg.d_c, cfg.d_f)),
        b_f2=T.zeros(cfg.d_f),
        padding=T.zeros(cfg.d_c),
        blocks=blocks,
    )


def reduce_visual(x: Tensor, params: GclParams) -> Tensor:
    """Two-layer reduction of raw features: ReLU(x W_f1 + b_f1) W_f2 + b_f2.

    Accepts a single d_c vector or an n×d_c matrix (applied row-wise).
    """
    x = T.as_tensor(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    if x.shape[1] != params.W_f1.shape[0]:
        raise ShapeError(
            f"reduce_visual input dim {x.shape} incompatible with {params.W_f1.shape}"
        )
    hidden = T.relu(T.add(x @ params.W_f1, params.b_f1))
    out = T.add(hidden @ params.W_f2, params.b_f2)
    return out.reshape(-1) if squeeze else out


def gcl_block(
    H: Tensor,
    block: GclBlockParams,
    mode: str = "train",
    groups: list[tuple[int, int]] | None = None,
    attn_out: list | None = None,
) -> Tensor:
    """One residual attention block: attention + residual, feedforward,
    output projection, batch norm over feature columns.

    `groups` lists row ranges to attend over independently (one range per
    collection when batching); default is one group spanning all rows.
    """
    H = T.as_tensor(H)
    if H.ndim != 2:
        raise ShapeError(f"gcl_block expects a 2-d input, got {H.shape}")
    if groups is None:
        groups = [(0, H.shape[0])]
    attended = []
    for start, stop in groups:
        rows = H[start:stop] if (start, stop) != (0, H.shape[0]) else H
        out, matrices = multi_head(rows, block.heads)
        attended.append(out)
        if attn_out is not None:
            attn_out.append([A.data.copy() for A in matrices])
    f_a = attended[0] if len(attended) == 1 else T.concat(attended, axis=0)
    M_a = T.add(f_a, H)
    f_n = T.add(T.relu(T.add(M_a @ block.W_n1, block.b_n1)) @ block.W_n2, block.b_n2)
    projected = T.add(f_n @ block.W_bn, block.b_bn)
    return batch_norm(projected, block.bn, mode=mode)


def _stack_padded(
    collections: list[list[np.ndarray]], params: GclParams, cfg: GclConfig
) -> Tensor:
    """Stack m collections into an (m·k)×d_c tensor, left-padding each with
    the learnable padding embedding."""
    m = len(collections)
    base = np.zeros((m * cfg.k, cfg.d_c))
    pad_mask = np.zeros((m * cfg.k, 1))
    for i, items in enumerate(collections):
        if not 1 <= len(items) <= cfg.k:
            raise ContractError(
                f"collection length must be in [1, {cfg.k}], got {len(items)}"
            )
        n_pad = cfg.k - len(items)
        for j, vec in enumerate(items):
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (cfg.d_c,):
                raise ShapeError(f"raw feature shape {vec.shape} != ({cfg.d_c},)")
            base[i * cfg.k + n_pad + j] = vec
        pad_mask[i * cfg.k : i * cfg.k + n_pad] = 1.0
    return T.add(Tensor(base), Tensor(pad_mask) @ params.padding.reshape(1, cfg.d_c))


def gcl_forward_batch(
    collections: list[list[np.ndarray]],
    params: GclParams,
    cfg: GclConfig,
    mode: str = "train",
    attn_out: dict | None = None,
) -> Tensor:
    """Run m collections through reduction and all blocks jointly.

    Attention stays per-collection; batch norm sees all m·k rows at once.
    Returns an (m·k)×d_f tensor; row block i*k..(i+1)*k is collection i.
    """
    if not collections:
        raise ContractError("gcl_forward_batch needs at least one collection")
    m = len(collections)
    X = _stack_padded(collections, params, cfg)
    H = reduce_visual(X, params)
    groups = [(i * cfg.k, (i + 1) * cfg.k) for i in range(m)]
    for b, block in enumerate(params.blocks):
        per_block: list | None = None
        if attn_out is not None:
            per_block = []
        H = gcl_block(H, block, mode=mode, groups=groups, attn_out=per_block)
        if attn_out is not None:
            attn_out[f"block{b}"] = per_block
    return H


def gcl_forward(
    collection: list[np.ndarray],
    params: GclParams,
    cfg: GclConfig,
    mode: str = "eval",
    attn_out: dict | None = None,
) -> Tensor:
    """Global representation of a single collection: a k×d_f tensor."""
    return gcl_forward_batch([collection], params, cfg, mode=mode, attn_out=attn_out)


def gcl_parameters(params: GclParams) -> dict[str, Tensor]:
    """Flat name -> tensor registry for the GCL parameters."""
    named = {
        "gcl.W_f1": params.W_f1,
        "gcl.b_f1": params.b_f1,
        "gcl.W_f2": params.W_f2,
        "gcl.b_f2": params.b_f2,
        "gcl.padding": params.padding,
    }
    for b, block in enumerate(params.blocks):
        prefix = f"gcl.block{b}"
        for s, head in enumerate(block.heads):
            named[f"{prefix}.head{s}.W_v"] = head.W_v
            named[f"{prefix}.head{s}.b_v"] = head.b_v
            named[f"{prefix}.head{s}.W_q"] = head.W_q
            named[f"{prefix}.head{s}.W_k"] = head.W_k
        named[f"{prefix}.W_n1"] = block.W_n1
        named[f"{prefix}.b_n1"] = block.b_n1
        named[f"{prefix}.W_n2"] = block.W_n2
        named[f"{prefix}.b_n2"] = block.b_n2
        named[f"{prefix}.W_bn"] = block.W_bn
        named[f"{prefix}.b_bn"] = block.b_bn
        named[f"{prefix}.bn.gamma"] = block.bn.gamma
        named[f"{prefix}.bn.beta"] = block.bn.beta
    return named
