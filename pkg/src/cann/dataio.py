"""Dataset, feature-file, and checkpoint persistence.

Outfits are JSON lines: {"outfit_id", "items": [{"item_id", "category",
"image"}]}. Feature files come in two interchangeable forms:

* JSON lines with a header line {"dim": d}, then one record per vector:
  {"item_id", "vector": [...]} plus optional "mode" and "region" keys for
  region features.
* A compact binary form: magic "CANNFV01", little-endian uint32 dim, then
  records of uint16 id length, UTF-8 id, dim float32 values. Region
  records encode their key as "item_id\\tmode\\tregion" in the id field.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DataValidationError
from .fcl import N_MODES, N_REGIONS
from .model import CannModel, ModelConfig
from .regions import SemanticMode

import logging

logger = logging.getLogger(__name__)

BINARY_MAGIC = b"CANNFV01"
CHECKPOINT_VERSION = 1
MAX_OUTFIT_ITEMS = 8
MODES = [m.value for m in SemanticMode]


@dataclass
class OutfitItem:
    item_id: str
    category: str
    image: str = ""


@dataclass
class OutfitRecord:
    outfit_id: str
    items: list[OutfitItem]

    def item_ids(self) -> list[str]:
        return [it.item_id for it in self.items]


def load_outfits(path: str | Path) -> list[OutfitRecord]:
    """Load and validate a JSON-lines outfit file."""
    path = Path(path)
    records: list[OutfitRecord] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataValidationError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            try:
                items = [
                    OutfitItem(item_id=i["item_id"], category=i.get("category", ""), image=i.get("image", ""))
                    for i in obj["items"]
                ]
                record = OutfitRecord(outfit_id=obj["outfit_id"], items=items)
            except (KeyError, TypeError) as exc:
                raise DataValidationError(f"{path}:{lineno}: missing field: {exc}") from exc
            if not 2 <= len(record.items) <= MAX_OUTFIT_ITEMS:
                raise DataValidationError(
                    f"{path}:{lineno}: outfit {record.outfit_id} has {len(record.items)} items; "
                    f"allowed range is 2..{MAX_OUTFIT_ITEMS}"
                )
            ids = record.item_ids()
            if len(set(ids)) != len(ids):
                raise DataValidationError(
                    f"{path}:{lineno}: outfit {record.outfit_id} repeats an item id"
                )
            records.append(record)
    if not records:
        logger.warning("outfit file %s is empty", path)
    return records


def save_outfits(records: list[OutfitRecord], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "outfit_id": r.outfit_id,
                        "items": [
                            {"item_id": i.item_id, "category": i.category, "image": i.image}
                            for i in r.items
                        ],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


# -- feature stores ----------------------------------------------------------


class FeatureStore:
    """In-memory mapping of item ids (and region slots) to feature vectors."""

    def __init__(self, dim: int):
        self.dim = dim
        self.globals: dict[str, np.ndarray] = {}
        self.regions: dict[tuple[str, str, int], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.globals)

    def put(self, item_id: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DataValidationError(
                f"feature for {item_id!r} has dim {vector.shape[0] if vector.ndim == 1 else vector.shape}, "
                f"expected {self.dim}"
            )
        if item_id in self.globals:
            logger.warning("duplicate feature record for %s; keeping the last one", item_id)
        self.globals[item_id] = vector

    def put_region(self, item_id: str, mode: str, region: int, vector: np.ndarray) -> None:
        if mode not in MODES:
            raise DataValidationError(f"unknown semantic mode {mode!r} for item {item_id!r}")
        if not 0 <= region < N_REGIONS:
            raise DataValidationError(f"region index {region} out of range for item {item_id!r}")
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DataValidationError(
                f"region feature for {item_id!r} has dim {vector.shape}, expected ({self.dim},)"
            )
        self.regions[(item_id, mode, region)] = vector

    def get(self, item_id: str) -> np.ndarray:
        try:
            return self.globals[item_id]
        except KeyError:
            raise DataValidationError(f"no features for item {item_id!r}") from None

    def region_block(self, item_id: str) -> np.ndarray | None:
        """(3, 3, dim) region feature block, or None if no regions stored."""
        if not any((item_id, m, r) in self.regions for m in MODES for r in range(N_REGIONS)):
            return None
        block = np.zeros((N_MODES, N_REGIONS, self.dim))
        for mi, mode in enumerate(MODES):
            for r in range(N_REGIONS):
                vec = self.regions.get((item_id, mode, r))
                if vec is not None:
                    block[mi, r] = vec
        return block


def load_features(path: str | Path) -> FeatureStore:
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(len(BINARY_MAGIC))
    if head == BINARY_MAGIC:
        return _load_features_binary(path)
    return _load_features_jsonl(path)


def _record_key(item_id: str) -> tuple[str, str, int] | str:
    if "\t" in item_id:
        item, mode, region = item_id.split("\t")
        return item, mode, int(region)
    return item_id


def _load_features_binary(path: Path) -> FeatureStore:
    data = path.read_bytes()
    offset = len(BINARY_MAGIC)
    (dim,) = struct.unpack_from("<I", data, offset)
    offset += 4
    store = FeatureStore(dim)
    while offset < len(data):
        if offset + 2 > len(data):
            raise DataValidationError(f"{path}: truncated record header at byte {offset}")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        end = offset + id_len + 4 * dim
        if end > len(data):
            raise DataValidationError(f"{path}: truncated record at byte {offset}")
        item_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vector = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset += 4 * dim
        key = _record_key(item_id)
        if isinstance(key, tuple):
            store.put_region(key[0], key[1], key[2], vector)
        else:
            store.put(item_id, vector)
    return store


def _load_features_jsonl(path: Path) -> FeatureStore:
    store: FeatureStore | None = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataValidationError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            if store is None:
                if "dim" not in obj:
                    raise DataValidationError(f"{path}:1: first line must declare {{\"dim\": d}}")
                store = FeatureStore(int(obj["dim"]))
                continue
            vector = np.asarray(obj["vector"], dtype=np.float64)
            if vector.shape != (store.dim,):
                raise DataValidationError(
                    f"{path}:{lineno}: item {obj.get('item_id')!r} has {vector.size} values, expected {store.dim}"
                )
            if "mode" in obj or "region" in obj:
                store.put_region(obj["item_id"], obj["mode"], int(obj["region"]), vector)
            else:
                store.put(obj["item_id"], vector)
    if store is None:
        raise DataValidationError(f"{path}: empty feature file (no dim header)")
    logger.info("loaded %d feature vectors of dim %d from %s", len(store), store.dim, path)
    return store


def save_features(store: FeatureStore, path: str | Path, binary: bool = False) -> None:
    path = Path(path)
    if binary:
        buf = io.BytesIO()
        buf.write(BINARY_MAGIC)
        buf.write(struct.pack("<I", store.dim))
        for item_id in sorted(store.globals):
            _write_binary_record(buf, item_id, store.globals[item_id])
        for (item, mode, region) in sorted(store.regions):
            _write_binary_record(buf, f"{item}\t{mode}\t{region}", store.regions[(item, mode, region)])
        path.write_bytes(buf.getvalue())
        return
    with path.open("w") as fh:
        fh.write(json.dumps({"dim": store.dim}) + "\n")
        for item_id in sorted(store.globals):
            fh.write(
                json.dumps({"item_id": item_id, "vector": store.globals[item_id].tolist()}, sort_keys=True) + "\n"
            )
        for (item, mode, region) in sorted(store.regions):
            fh.write(
                json.dumps(
                    {
                        "item_id": item,
                        "mode": mode,
                        "region": region,
                        "vector": store.regions[(item, mode, region)].tolist(),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def _write_binary_record(buf: io.BytesIO, item_id: str, vector: np.ndarray) -> None:
    encoded = item_id.encode("utf-8")
    buf.write(struct.pack("<H", len(encoded)))
    buf.write(encoded)
    buf.write(vector.astype("<f4").tobytes())


# -- deterministic stub features (test substitute for a CNN backbone) --------


def _seeded_rng(*parts) -> np.random.Generator:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def stub_features(item_ids: list[str], d_c: int, seed: int) -> FeatureStore:
    """Unit-norm pseudo-random vectors, deterministic per (item_id, seed)."""
    if d_c < 1:
        raise DataValidationError(f"feature dim must be positive, got {d_c}")
    store = FeatureStore(d_c)
    for item_id in item_ids:
        vec = _seeded_rng("global", item_id, seed).normal(size=d_c)
        store.put(item_id, vec / np.linalg.norm(vec))
    return store


def add_stub_region_features(store: FeatureStore, item_ids: list[str], seed: int) -> FeatureStore:
    for item_id in item_ids:
        for mode in MODES:
            for r in range(N_REGIONS):
                vec = _seeded_rng("region", item_id, mode, r, seed).normal(size=store.dim)
                store.put_region(item_id, mode, r, vec / np.linalg.norm(vec))
    return store


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: CannModel, path: str | Path) -> None:
    """Bit-exact persistence of parameters, BN running stats, and config."""
    arrays: dict[str, np.ndarray] = {}
    for name, param in model.parameters().items():
        arrays["param/" + name] = param.tensor.data
    for b, state in enumerate(model.bn_states()):
        arrays[f"bnstat/block{b}/running_mean"] = state.running_mean
        arrays[f"bnstat/block{b}/running_var"] = state.running_var
    meta = {"version": CHECKPOINT_VERSION, "config": model.cfg.to_dict()}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    # write through a file object so numpy never appends an .npz suffix
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path, expect_config: ModelConfig | None = None) -> CannModel:
    path = Path(path)
    try:
        with np.load(str(path)) as data:
            arrays = {k: data[k] for k in data.files}
    except (zipfile.BadZipFile, OSError, ValueError, EOFError) as exc:
        raise CheckpointError(f"checkpoint {path} is unreadable or truncated: {exc}") from exc
    if "meta" not in arrays:
        raise CheckpointError(f"checkpoint {path} carries no metadata record")
    meta = json.loads(arrays["meta"].tobytes().decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has version {meta.get('version')}, expected {CHECKPOINT_VERSION}"
        )
    cfg = ModelConfig.from_dict(meta["config"])
    if expect_config is not None and expect_config != cfg:
        raise CheckpointError(
            f"checkpoint config {cfg} conflicts with requested config {expect_config}"
        )
    model = CannModel(cfg, seed=0)
    params = model.parameters()
    for key, value in arrays.items():
        if key.startswith("param/"):
            name = key[len("param/") :]
            if name not in params:
                raise CheckpointError(f"checkpoint {path} carries unknown parameter {name}")
            if params[name].tensor.data.shape != value.shape:
                raise CheckpointError(
                    f"parameter {name} has shape {value.shape}, expected {params[name].tensor.data.shape}"
                )
            params[name].tensor.data = value.astype(np.float64)
    missing = [n for n in params if "param/" + n not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint {path} is missing parameters: {missing[:5]}")
    for b, state in enumerate(model.bn_states()):
        state.running_mean = arrays[f"bnstat/block{b}/running_mean"].astype(np.float64)
        state.running_var = arrays[f"bnstat/block{b}/running_var"].astype(np.float64)
    return model
