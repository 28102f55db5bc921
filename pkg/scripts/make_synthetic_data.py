#!/usr/bin/env python3
"""Generate a synthetic outfit dataset with stub features.

Writes an outfit JSONL file plus global and region feature files, sized for
quick experiments. The stub vectors are deterministic per (item id, seed),
so reruns reproduce the same files.
"""

import argparse
from pathlib import Path

import numpy as np

from cann.dataio import (
    OutfitItem,
    OutfitRecord,
    add_stub_region_features,
    save_features,
    save_outfits,
    stub_features,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--n-outfits", type=int, default=16)
    parser.add_argument("--items-per-outfit", type=int, default=4)
    parser.add_argument("--pool-size", type=int, default=40)
    parser.add_argument("--categories", type=int, default=4)
    parser.add_argument("--d-c", type=int, default=64)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--binary", action="store_true", help="write binary feature files")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    pool = [f"it{n:02d}" for n in range(args.pool_size)]
    outfits = []
    for j in range(args.n_outfits):
        picks = rng.choice(args.pool_size, size=args.items_per_outfit, replace=False)
        outfits.append(
            OutfitRecord(
                f"o{j}",
                [OutfitItem(pool[int(i)], f"c{int(i) % args.categories}") for i in picks],
            )
        )
    items = sorted({i for o in outfits for i in o.item_ids()})
    store = stub_features(items, args.d_c, args.seed)
    add_stub_region_features(store, items, args.seed)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_outfits(outfits, out / "outfits.jsonl")
    suffix = "bin" if args.binary else "jsonl"
    save_features(store, out / f"features.{suffix}", binary=args.binary)
    print(f"wrote {len(outfits)} outfits over {len(items)} items to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
