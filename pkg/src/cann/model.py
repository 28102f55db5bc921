"""The full model: global and focal coherence plus the prediction head."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError
from .fcl import FclConfig, FclParams, fcl_forward, fcl_parameters, init_fcl_params, pad_region_features
from .gcl import GclConfig, GclParams, gcl_forward_batch, gcl_parameters, init_gcl_params, reduce_visual
from .recommender import (
    CandidateSet,
    PredictionHeadParams,
    init_head_params,
    predict_embedding,
    score_candidates,
)
from .tensor import Parameter, Tensor


@dataclass
class ModelConfig:
    d_c: int = 2048
    d_f: int = 512
    S: int = 4
    b_star: int = 4
    k: int = 8
    d_y: int = 128
    S_f: int = 2

    def gcl(self) -> GclConfig:
        return GclConfig(d_c=self.d_c, d_f=self.d_f, S=self.S, b_star=self.b_star, k=self.k)

    def fcl(self) -> FclConfig:
        return FclConfig(d_c=self.d_c, d_y=self.d_y, S_f=self.S_f, k=self.k)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class CannModel:
    """Parameter container and forward pass for the whole network."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.gcl().validate()
        cfg.fcl().validate()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.gcl_params: GclParams = init_gcl_params(cfg.gcl(), rng)
        self.fcl_params: FclParams = init_fcl_params(cfg.fcl(), rng)
        self.head: PredictionHeadParams = init_head_params(cfg.d_f, cfg.d_y, rng)
        self._registry = self._build_registry()

    def _build_registry(self) -> dict[str, Parameter]:
        named: dict[str, Tensor] = {}
        named.update(gcl_parameters(self.gcl_params))
        named.update(fcl_parameters(self.fcl_params))
        named["head.W_h"] = self.head.W_h
        named["head.b_h"] = self.head.b_h
        registry: dict[str, Parameter] = {}
        for name, tensor in named.items():
            if name in registry:
                raise ContractError(f"duplicate parameter name {name}")
            registry[name] = Parameter(name, tensor)
        return registry

    def parameters(self) -> dict[str, Parameter]:
        return self._registry

    def zero_grad(self) -> None:
        for p in self._registry.values():
            p.tensor.zero_grad()

    def bn_states(self):
        return [block.bn for block in self.gcl_params.blocks]

    # -- forward -------------------------------------------------------------

    def forward_batch(
        self,
        global_features: list[list[np.ndarray]],
        region_features: list[list[np.ndarray | None]],
        mode: str = "train",
        attn_out: dict | None = None,
    ) -> Tensor:
        """Prediction embeddings for m masked collections: an m×d_f tensor.

        `global_features[i]` is collection i's raw d_c vectors (unpadded);
        `region_features[i]` its per-item (3, 3, d_c) arrays, None for items
        without extracted regions.
        """
        if len(global_features) != len(region_features):
            raise ContractError("global and region feature lists disagree in length")
        m = len(global_features)
        k = self.cfg.k
        gcl_attn: dict | None = {} if attn_out is not None else None
        H = gcl_forward_batch(global_features, self.gcl_params, self.cfg.gcl(), mode=mode, attn_out=gcl_attn)
        rows = []
        fcl_attns = []
        for i in range(m):
            raw = pad_region_features(region_features[i], self.cfg.fcl(), k)
            fcl_attn: dict | None = {} if attn_out is not None else None
            F = fcl_forward(raw, self.fcl_params, self.cfg.fcl(), attn_out=fcl_attn)
            G = H[i * k : (i + 1) * k]
            rows.append(predict_embedding(G, F, self.head))
            if fcl_attn is not None:
                fcl_attns.append(fcl_attn)
        if attn_out is not None:
            attn_out["gcl"] = gcl_attn
            attn_out["fcl"] = fcl_attns
        from . import tensor as T

        return rows[0] if m == 1 else T.concat(rows, axis=0)

    def candidate_embeddings(self, raw: np.ndarray) -> Tensor:
        """Eq.-1 reduction of a |N|×d_c raw candidate feature matrix."""
        return reduce_visual(Tensor(np.asarray(raw, dtype=np.float64)), self.gcl_params)

    def rank(
        self,
        seed_globals: list[np.ndarray],
        seed_regions: list[np.ndarray | None],
        candidate_ids: list[str],
        candidate_raw: np.ndarray,
        attn_out: dict | None = None,
    ) -> list[tuple[str, float]]:
        """Score a candidate pool for one seed collection in eval mode."""
        x_hat = self.forward_batch([seed_globals], [seed_regions], mode="eval", attn_out=attn_out)
        pool = CandidateSet(items=list(candidate_ids), embeddings=self.candidate_embeddings(candidate_raw))
        return score_candidates(x_hat, pool)
