"""Semantic-focal content extraction.

Graph-based initial segmentation (Felzenszwalb-Huttenlocher), color and
texture histogram descriptors, histogram-intersection similarity, and a
selective-search style greedy merge that groups regions under a color,
texture, or hybrid criterion until three regions per mode remain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .errors import ContractError, DataValidationError

N_COLOR_BINS = 25
COLOR_HIST_LEN = 75
N_ORIENTATIONS = 8
N_TEXTURE_BINS = 10
TEXTURE_HIST_LEN = 3 * N_ORIENTATIONS * N_TEXTURE_BINS  # 240

# channel value v falls in bin b iff floor(256*b/25) <= v < floor(256*(b+1)/25)
_COLOR_BOUNDS = np.array([(256 * b) // N_COLOR_BINS for b in range(N_COLOR_BINS + 1)])
_TEXTURE_BIN_WIDTH = 256.0 / N_TEXTURE_BINS


class SemanticMode(str, Enum):
    COLOR = "color"
    TEXTURE = "texture"
    HYBRID = "hybrid"


@dataclass
class RgbImage:
    """8-bit RGB raster; pixels stored as an (height, width, 3) uint8 array."""

    width: int
    height: int
    pixels: np.ndarray

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RgbImage":
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DataValidationError(f"expected an (h, w, 3) array, got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataValidationError("image must have at least one pixel")
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr)

    def crop(self, bbox: tuple[int, int, int, int]) -> "RgbImage":
        min_x, min_y, max_x, max_y = bbox
        return RgbImage.from_array(self.pixels[min_y : max_y + 1, min_x : max_x + 1])


@dataclass
class Region:
    """A pixel set with its size, tight bounding box, and descriptors."""

    id: int
    pixel_set: frozenset[tuple[int, int]]  # (x, y) coordinates
    size: int
    bbox: tuple[int, int, int, int]  # (min_x, min_y, max_x, max_y)
    color_hist: np.ndarray
    texture_hist: np.ndarray


@dataclass
class SegmentationConfig:
    felz_k: float = 100.0
    sigma: float = 0.8
    min_size: int = 50
    regions_per_mode: int = 3

    def __post_init__(self):
        if self.felz_k <= 0 or self.sigma < 0 or self.min_size < 1 or self.regions_per_mode < 1:
            raise ContractError(f"invalid segmentation config {self}")

    @classmethod
    def default_for(cls, width: int, height: int) -> "SegmentationConfig":
        """Conventional defaults, scaled down for small images."""
        cfg = cls()
        short = min(width, height)
        if short < 128:
            factor = short / 128.0
            cfg = cls(
                felz_k=max(1.0, cfg.felz_k * factor),
                sigma=cfg.sigma,
                min_size=max(1, int(cfg.min_size * factor * factor)),
            )
        return cfg


# -- descriptors -------------------------------------------------------------


def _coords(region: Region) -> tuple[np.ndarray, np.ndarray]:
    xs = np.fromiter((p[0] for p in region.pixel_set), dtype=np.intp, count=region.size)
    ys = np.fromiter((p[1] for p in region.pixel_set), dtype=np.intp, count=region.size)
    return xs, ys


def color_histogram(region: Region, img: RgbImage) -> np.ndarray:
    """75-d color descriptor: 25 bins per RGB channel, L1-normalized jointly."""
    if region.size < 1:
        raise DataValidationError("cannot build a histogram for an empty region")
    xs, ys = _coords(region)
    hist = np.zeros(COLOR_HIST_LEN)
    for c in range(3):
        values = img.pixels[ys, xs, c]
        bins = np.searchsorted(_COLOR_BOUNDS, values, side="right") - 1
        hist[c * N_COLOR_BINS : (c + 1) * N_COLOR_BINS] = np.bincount(bins, minlength=N_COLOR_BINS)
    return hist / hist.sum()


def texture_responses(img: RgbImage, sigma: float = 1.0) -> np.ndarray:
    """|Gaussian-derivative| responses, shape (3, 8, h, w).

    Orientation o measures the derivative along the direction o * 22.5
    degrees from the x axis.
    """
    out = np.empty((3, N_ORIENTATIONS, img.height, img.width))
    for c in range(3):
        channel = img.pixels[:, :, c].astype(np.float64)
        gx = ndimage.gaussian_filter(channel, sigma, order=(0, 1), mode="nearest")
        gy = ndimage.gaussian_filter(channel, sigma, order=(1, 0), mode="nearest")
        for o in range(N_ORIENTATIONS):
            theta = o * math.pi / N_ORIENTATIONS
            out[c, o] = np.abs(math.cos(theta) * gx + math.sin(theta) * gy)
    return out


def texture_histogram(
    region: Region, img: RgbImage, responses: np.ndarray | None = None
) -> np.ndarray:
    """240-d texture descriptor: 10 bins per (channel, orientation) slot,
    L1-normalized over the whole vector."""
    if region.size < 1:
        raise DataValidationError("cannot build a histogram for an empty region")
    if responses is None:
        responses = texture_responses(img)
    xs, ys = _coords(region)
    hist = np.zeros(TEXTURE_HIST_LEN)
    slot = 0
    for c in range(3):
        for o in range(N_ORIENTATIONS):
            values = responses[c, o, ys, xs]
            bins = np.minimum((values / _TEXTURE_BIN_WIDTH).astype(np.intp), N_TEXTURE_BINS - 1)
            hist[slot * N_TEXTURE_BINS : (slot + 1) * N_TEXTURE_BINS] = np.bincount(
                bins, minlength=N_TEXTURE_BINS
            )
            slot += 1
    return hist / hist.sum()


def similarity(a: Region, b: Region, mode: SemanticMode) -> float:
    """Histogram intersection under the given semantic mode; symmetric."""
    score = 0.0
    if mode in (SemanticMode.COLOR, SemanticMode.HYBRID):
        score += float(np.minimum(a.color_hist, b.color_hist).sum())
    if mode in (SemanticMode.TEXTURE, SemanticMode.HYBRID):
        score += float(np.minimum(a.texture_hist, b.texture_hist).sum())
    return score


def merge(a: Region, b: Region, new_id: int | None = None) -> Region:
    """Merge two disjoint regions, size-weight averaging the histograms."""
    if a.pixel_set & b.pixel_set:
        raise ContractError(f"regions {a.id} and {b.id} overlap; cannot merge")
    total = a.size + b.size
    return Region(
        id=min(a.id, b.id) if new_id is None else new_id,
        pixel_set=a.pixel_set | b.pixel_set,
        size=total,
        bbox=(
            min(a.bbox[0], b.bbox[0]),
            min(a.bbox[1], b.bbox[1]),
            max(a.bbox[2], b.bbox[2]),
            max(a.bbox[3], b.bbox[3]),
        ),
        color_hist=(a.size * a.color_hist + b.size * b.color_hist) / total,
        texture_hist=(a.size * a.texture_hist + b.size * b.texture_hist) / total,
    )


# -- initial segmentation ----------------------------------------------------


class _DisjointSet:
    def __init__(self, n: int):
        self.parent = np.arange(n)
        self.size = np.ones(n, dtype=np.intp)

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return int(root)

    def union(self, a: int, b: int) -> int:
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        return a


def _grid_edges(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """8-connected grid edges as (a_index, b_index) flat-pixel pairs."""
    idx = np.arange(h * w).reshape(h, w)
    pairs = [
        (idx[:, :-1], idx[:, 1:]),     # right
        (idx[:-1, :], idx[1:, :]),     # down
        (idx[:-1, :-1], idx[1:, 1:]),  # down-right
        (idx[:-1, 1:], idx[1:, :-1]),  # down-left
    ]
    a = np.concatenate([p[0].ravel() for p in pairs])
    b = np.concatenate([p[1].ravel() for p in pairs])
    return a, b


def _region_from_pixels(
    region_id: int,
    flat_pixels: np.ndarray,
    w: int,
    img: RgbImage,
    responses: np.ndarray,
) -> Region:
    xs = flat_pixels % w
    ys = flat_pixels // w
    stub = Region(
        id=region_id,
        pixel_set=frozenset(zip(xs.tolist(), ys.tolist())),
        size=int(flat_pixels.size),
        bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
        color_hist=np.zeros(COLOR_HIST_LEN),
        texture_hist=np.zeros(TEXTURE_HIST_LEN),
    )
    stub.color_hist = color_histogram(stub, img)
    stub.texture_hist = texture_histogram(stub, img, responses=responses)
    return stub


def felzenszwalb_segment(img: RgbImage, cfg: SegmentationConfig) -> list[Region]:
    """Graph-based segmentation into a partition of the image.

    Edge weights are Euclidean RGB distances on the (optionally smoothed)
    image; components merge while the edge weight stays below each side's
    internal difference plus felz_k / |component|. Components smaller than
    min_size are absorbed in a final pass. Deterministic for fixed input.
    """
    h, w = img.height, img.width
    if h < 1 or w < 1:
        raise DataValidationError("cannot segment a zero-area image")
    smooth = img.pixels.astype(np.float64)
    if cfg.sigma > 0:
        for c in range(3):
            smooth[:, :, c] = ndimage.gaussian_filter(smooth[:, :, c], cfg.sigma, mode="nearest")
    flat = smooth.reshape(-1, 3)

    a_idx, b_idx = _grid_edges(h, w)
    weights = np.sqrt(((flat[a_idx] - flat[b_idx]) ** 2).sum(axis=1))
    order = np.argsort(weights, kind="stable")

    ds = _DisjointSet(h * w)
    threshold = np.full(h * w, cfg.felz_k)
    for e in order:
        ra, rb = ds.find(int(a_idx[e])), ds.find(int(b_idx[e]))
        if ra == rb:
            continue
        wgt = weights[e]
        if wgt <= threshold[ra] and wgt <= threshold[rb]:
            root = ds.union(ra, rb)
            threshold[root] = wgt + cfg.felz_k / ds.size[root]
    # absorb undersized components along the lightest edges first
    if cfg.min_size > 1:
        for e in order:
            ra, rb = ds.find(int(a_idx[e])), ds.find(int(b_idx[e]))
            if ra != rb and (ds.size[ra] < cfg.min_size or ds.size[rb] < cfg.min_size):
                ds.union(ra, rb)

    roots = np.fromiter((ds.find(i) for i in range(h * w)), dtype=np.intp, count=h * w)
    labels = {root: i for i, root in enumerate(dict.fromkeys(roots.tolist()))}
    responses = texture_responses(img)
    regions = []
    for root, region_id in labels.items():
        flat_pixels = np.nonzero(roots == root)[0]
        regions.append(_region_from_pixels(region_id, flat_pixels, w, img, responses))
    return regions


# -- greedy semantic grouping ------------------------------------------------


def _adjacency(regions: list[Region], w: int, h: int) -> set[tuple[int, int]]:
    """Pairs of region ids sharing a 4-connected pixel boundary."""
    owner = np.empty((h, w), dtype=np.intp)
    for r in regions:
        for x, y in r.pixel_set:
            owner[y, x] = r.id
    pairs: set[tuple[int, int]] = set()
    right = owner[:, :-1] != owner[:, 1:]
    for y, x in zip(*np.nonzero(right)):
        i, j = int(owner[y, x]), int(owner[y, x + 1])
        pairs.add((min(i, j), max(i, j)))
    down = owner[:-1, :] != owner[1:, :]
    for y, x in zip(*np.nonzero(down)):
        i, j = int(owner[y, x]), int(owner[y + 1, x])
        pairs.add((min(i, j), max(i, j)))
    return pairs


def _full_image_region(img: RgbImage, region_id: int) -> Region:
    flat_pixels = np.arange(img.height * img.width)
    return _region_from_pixels(region_id, flat_pixels, img.width, img, texture_responses(img))


def extract_semantic_focal(
    img: RgbImage, mode: SemanticMode, cfg: SegmentationConfig
) -> list[tuple[RgbImage, Region]]:
    """Greedily merge the most-similar adjacent regions under `mode` until
    regions_per_mode remain; return their bounding-box crops, largest first.

    Short segmentations are padded with full-image crops.
    """
    regions = {r.id: r for r in felzenszwalb_segment(img, cfg)}
    target = cfg.regions_per_mode
    adjacency = _adjacency(list(regions.values()), img.width, img.height)
    next_id = max(regions) + 1

    while len(regions) > target and adjacency:
        best_pair = None
        best_sim = -1.0
        for pair in sorted(adjacency):
            sim = similarity(regions[pair[0]], regions[pair[1]], mode)
            if sim > best_sim:
                best_sim, best_pair = sim, pair
        i, j = best_pair
        merged = merge(regions.pop(i), regions.pop(j), new_id=next_id)
        next_id += 1
        regions[merged.id] = merged
        rewired = set()
        for a, b in adjacency:
            if a in (i, j) or b in (i, j):
                other = b if a in (i, j) else a
                if other not in (i, j):
                    rewired.add((min(other, merged.id), max(other, merged.id)))
            else:
                rewired.add((a, b))
        adjacency = rewired

    chosen = sorted(regions.values(), key=lambda r: (-r.size, r.id))[:target]
    result = [(img.crop(r.bbox), r) for r in chosen]
    while len(result) < target:
        full = _full_image_region(img, next_id)
        next_id += 1
        result.append((img.crop(full.bbox), full))
    return result
