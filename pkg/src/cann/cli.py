"""Command-line surface tying the pipeline together.

Subcommands: extract-regions, train, build-fitb, evaluate, predict,
inspect-attention. A single --seed flag controls all randomness; every
command exits 0 on success and nonzero with a message on any error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio, evaluation, trainer
from .errors import CannError, CheckpointError
from .model import CannModel, ModelConfig
from .regions import RgbImage, SegmentationConfig, SemanticMode, extract_semantic_focal

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--d-c", type=int, default=None, help="raw feature dim")
    parser.add_argument("--d-f", type=int, default=None, help="reduced embedding dim")
    parser.add_argument("--heads", type=int, default=None, help="attention heads per block")
    parser.add_argument("--blocks", type=int, default=None, help="attention block count")
    parser.add_argument("--k", type=int, default=None, help="padded collection length")
    parser.add_argument("--d-y", type=int, default=None, help="region embedding dim")
    parser.add_argument("--fcl-heads", type=int, default=None, help="heads per focal stage")


_MODEL_FIELDS = {
    "d_c": "d_c", "d_f": "d_f", "heads": "S", "blocks": "b_star",
    "k": "k", "d_y": "d_y", "fcl_heads": "S_f",
}


def _model_config(args) -> ModelConfig:
    cfg = ModelConfig()
    for flag, field in _MODEL_FIELDS.items():
        value = getattr(args, flag)
        if value is not None:
            setattr(cfg, field, value)
    return cfg


def _check_dims(cfg: ModelConfig, args) -> None:
    for flag, field in _MODEL_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None and getattr(cfg, field) != value:
            raise CheckpointError(
                f"checkpoint has {field}={getattr(cfg, field)} but --{flag.replace('_', '-')}={value} was requested"
            )


def cmd_extract_regions(args) -> int:
    from PIL import Image

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    modes = [SemanticMode(m) for m in args.modes.split(",")]
    images = sorted(
        p for p in Path(args.images_dir).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not images:
        raise CannError(f"no images found under {args.images_dir}")
    for path in images:
        arr = np.asarray(Image.open(path).convert("RGB"))
        img = RgbImage.from_array(arr)
        if args.felz_k is None:
            cfg = SegmentationConfig.default_for(img.width, img.height)
        else:
            cfg = SegmentationConfig(
                felz_k=args.felz_k, sigma=args.sigma, min_size=args.min_size
            )
        for mode in modes:
            crops = extract_semantic_focal(img, mode, cfg)
            for r, (crop, _region) in enumerate(crops):
                Image.fromarray(crop.pixels).save(out_dir / f"{path.stem}.{mode.value}.{r}.png")
        logger.info("extracted regions for %s", path.stem)
    return 0


def cmd_train(args) -> int:
    outfits = dataio.load_outfits(args.outfits)
    features = dataio.load_features(args.features)
    if args.region_features:
        region_store = dataio.load_features(args.region_features)
        if region_store.dim != features.dim:
            raise CannError(
                f"region feature dim {region_store.dim} != global feature dim {features.dim}"
            )
        features.regions.update(region_store.regions)
    model_cfg = _model_config(args)
    model_cfg.d_c = features.dim if args.d_c is None else args.d_c
    model = CannModel(model_cfg, seed=args.seed)
    train_cfg = trainer.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        k=model_cfg.k,
        lr0=args.lr0,
        decay_factor=args.decay_factor,
        decay_every_epochs=args.decay_every,
        rng_seed=args.seed,
        steps_per_epoch=args.steps_per_epoch,
    )
    validation = dataio.load_outfits(args.val_outfits) if args.val_outfits else None
    history = trainer.train(
        model, outfits, features, train_cfg, validation=validation, loss_log_path=args.loss_log
    )
    dataio.save_checkpoint(model, args.out)
    print(json.dumps({"epochs_run": len(history), "final_loss": history[-1]["mean_loss"]}))
    return 0


def cmd_build_fitb(args) -> int:
    outfits = dataio.load_outfits(args.outfits)
    rng = np.random.default_rng(args.seed)
    if args.mode == "random":
        questions = evaluation.build_fitb_random(outfits, args.n_candidates, rng)
        skipped = 0
    else:
        questions, skipped = evaluation.build_fitb_category(outfits, args.n_candidates, rng)
    evaluation.save_questions(questions, args.out)
    print(json.dumps({"n_questions": len(questions), "n_skipped": skipped}))
    return 0


def cmd_evaluate(args) -> int:
    model = dataio.load_checkpoint(args.checkpoint)
    _check_dims(model.cfg, args)
    features = dataio.load_features(args.features)
    questions = evaluation.load_questions(args.questions)
    report = evaluation.evaluate(questions, model, features)
    payload = json.dumps(report.to_dict(), sort_keys=True)
    if args.report_out:
        Path(args.report_out).write_text(payload + "\n")
    if args.per_question_csv:
        with Path(args.per_question_csv).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["question_id", "rank"])
            for q, rank in zip(questions, report.ranks):
                writer.writerow([q.question_id, rank])
    print(payload)
    return 0


def cmd_predict(args) -> int:
    model = dataio.load_checkpoint(args.checkpoint)
    _check_dims(model.cfg, args)
    features = dataio.load_features(args.features)
    seed_items = args.seed_items.split(",")
    candidates = args.candidates.split(",")
    ranked = model.rank(
        [features.get(i) for i in seed_items],
        [features.region_block(i) for i in seed_items],
        candidates,
        np.stack([features.get(i) for i in candidates]),
    )
    payload = json.dumps(
        {"seed_items": seed_items, "ranking": [{"item_id": i, "probability": p} for i, p in ranked]}
    )
    if args.out:
        Path(args.out).write_text(payload + "\n")
    print(payload)
    return 0


def cmd_inspect_attention(args) -> int:
    model = dataio.load_checkpoint(args.checkpoint)
    _check_dims(model.cfg, args)
    features = dataio.load_features(args.features)
    seed_items = args.seed_items.split(",")
    attn: dict = {}
    model.forward_batch(
        [[features.get(i) for i in seed_items]],
        [[features.region_block(i) for i in seed_items]],
        mode="eval",
        attn_out=attn,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for block_name, per_collection in attn["gcl"].items():
        for s, matrix in enumerate(per_collection[0]):
            np.savetxt(out_dir / f"gcl_{block_name}_head{s}.csv", matrix, delimiter=",")
    fcl_attn = attn["fcl"][0]
    for i, per_item in enumerate(fcl_attn["within"]):
        for s, matrix in enumerate(per_item):
            np.savetxt(out_dir / f"fcl_within_item{i}_head{s}.csv", matrix, delimiter=",")
    for s, matrix in enumerate(fcl_attn["across"][0]):
        np.savetxt(out_dir / f"fcl_across_head{s}.csv", matrix, delimiter=",")
    print(json.dumps({"out_dir": str(out_dir)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cann", description=__doc__)
    parser.add_argument("--seed", type=int, default=0, help="controls all randomness")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-regions", help="write semantic-focal region crops")
    p.add_argument("--images-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--modes", default="color,texture,hybrid")
    p.add_argument("--felz-k", type=float, default=None)
    p.add_argument("--sigma", type=float, default=0.8)
    p.add_argument("--min-size", type=int, default=50)
    p.set_defaults(func=cmd_extract_regions)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--outfits", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--region-features", default=None)
    p.add_argument("--val-outfits", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-log", default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=9)
    p.add_argument("--lr0", type=float, default=0.2)
    p.add_argument("--decay-factor", type=float, default=2.0)
    p.add_argument("--decay-every", type=int, default=2)
    p.add_argument("--steps-per-epoch", type=int, default=None)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build-fitb", help="construct a fill-in-the-blank question set")
    p.add_argument("--outfits", required=True)
    p.add_argument("--mode", choices=["random", "category"], default="random")
    p.add_argument("--n-candidates", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_fitb)

    p = sub.add_parser("evaluate", help="score a question set and report ACC/MRR")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--report-out", default=None)
    p.add_argument("--per-question-csv", default=None)
    _add_model_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="rank a candidate pool for one seed collection")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--seed-items", required=True, help="comma-separated item ids")
    p.add_argument("--candidates", required=True, help="comma-separated item ids")
    p.add_argument("--out", default=None)
    _add_model_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect-attention", help="export coherence matrices as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--seed-items", required=True, help="comma-separated item ids")
    p.add_argument("--out-dir", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_inspect_attention)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except CannError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
