"""Fill-in-the-blank test construction and metric computation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import FeatureStore, OutfitRecord
from .errors import ContractError, DataValidationError
from .model import CannModel

import logging

logger = logging.getLogger(__name__)


@dataclass
class FITBQuestion:
    question_id: str
    seed_items: list[str]  # the collection with the blank removed
    blank_position: int
    candidates: list[str]
    answer_index: int

    def __post_init__(self):
        if len(set(self.candidates)) != len(self.candidates):
            raise ContractError(f"question {self.question_id} repeats a candidate")
        if not 0 <= self.answer_index < len(self.candidates):
            raise ContractError(f"question {self.question_id} has an invalid answer index")


@dataclass
class EvalReport:
    accuracy: float
    mrr: float
    n_questions: int
    ranks: list[int] = field(default_factory=list)
    n_skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mrr": self.mrr,
            "n_questions": self.n_questions,
            "n_skipped": self.n_skipped,
        }


def _question(
    record: OutfitRecord, pos: int, negatives: list[str], rng: np.random.Generator
) -> FITBQuestion:
    ids = record.item_ids()
    truth = ids[pos]
    candidates = [truth] + negatives
    order = rng.permutation(len(candidates))
    shuffled = [candidates[i] for i in order]
    return FITBQuestion(
        question_id=f"{record.outfit_id}:{pos}",
        seed_items=[i for j, i in enumerate(ids) if j != pos],
        blank_position=pos,
        candidates=shuffled,
        answer_index=shuffled.index(truth),
    )


def build_fitb_random(
    collections: list[OutfitRecord], n_candidates: int, rng: np.random.Generator
) -> list[FITBQuestion]:
    """One question per (collection, position); negatives drawn uniformly from
    all other test items."""
    if n_candidates < 2:
        raise ContractError(f"need at least 2 candidates, got {n_candidates}")
    all_items = sorted({i for rec in collections for i in rec.item_ids()})
    if len(all_items) < n_candidates:
        raise DataValidationError(
            f"test set has only {len(all_items)} distinct items; need {n_candidates}"
        )
    questions = []
    for record in collections:
        for pos, truth in enumerate(record.item_ids()):
            pool = [i for i in all_items if i != truth]
            picks = rng.choice(len(pool), size=n_candidates - 1, replace=False)
            negatives = [pool[int(p)] for p in picks]
            questions.append(_question(record, pos, negatives, rng))
    return questions


def build_fitb_category(
    collections: list[OutfitRecord], n_candidates: int, rng: np.random.Generator
) -> tuple[list[FITBQuestion], int]:
    """Negatives share the ground truth's category. Questions whose category
    pool is too small are skipped; the skip count is returned alongside."""
    if n_candidates < 2:
        raise ContractError(f"need at least 2 candidates, got {n_candidates}")
    category_of: dict[str, str] = {}
    for record in collections:
        for item in record.items:
            category_of[item.item_id] = item.category
    by_category: dict[str, list[str]] = {}
    for item_id in sorted(category_of):
        by_category.setdefault(category_of[item_id], []).append(item_id)
    questions = []
    skipped = 0
    for record in collections:
        for pos, truth in enumerate(record.item_ids()):
            pool = [i for i in by_category.get(category_of[truth], []) if i != truth]
            if len(pool) < n_candidates - 1:
                skipped += 1
                logger.warning(
                    "skipping %s:%d: category %r has only %d other items",
                    record.outfit_id, pos, category_of[truth], len(pool),
                )
                continue
            picks = rng.choice(len(pool), size=n_candidates - 1, replace=False)
            negatives = [pool[int(p)] for p in picks]
            questions.append(_question(record, pos, negatives, rng))
    return questions, skipped


def answer(question: FITBQuestion, model: CannModel, features: FeatureStore) -> int:
    """1-based rank of the ground truth; ties resolve by candidate order."""
    seed_globals = [features.get(i) for i in question.seed_items]
    seed_regions = [features.region_block(i) for i in question.seed_items]
    cand_raw = np.stack([features.get(i) for i in question.candidates])
    ranked = model.rank(seed_globals, seed_regions, question.candidates, cand_raw)
    truth = question.candidates[question.answer_index]
    for rank, (item_id, _prob) in enumerate(ranked, start=1):
        if item_id == truth:
            return rank
    raise ContractError(f"ground truth missing from ranking of {question.question_id}")


def metrics(ranks: list[int], n_skipped: int = 0) -> EvalReport:
    """Accuracy (fraction at rank 1) and mean reciprocal rank."""
    if not ranks:
        raise DataValidationError("metrics need at least one rank")
    ranks = [int(r) for r in ranks]
    accuracy = sum(1 for r in ranks if r == 1) / len(ranks)
    mrr = sum(1.0 / r for r in ranks) / len(ranks)
    return EvalReport(accuracy=accuracy, mrr=mrr, n_questions=len(ranks), ranks=ranks, n_skipped=n_skipped)


def evaluate(
    questions: list[FITBQuestion], model: CannModel, features: FeatureStore, n_skipped: int = 0
) -> EvalReport:
    ranks = [answer(q, model, features) for q in questions]
    return metrics(ranks, n_skipped=n_skipped)


def save_questions(questions: list[FITBQuestion], path) -> None:
    import json
    from pathlib import Path

    with Path(path).open("w") as fh:
        for q in questions:
            fh.write(
                json.dumps(
                    {
                        "question_id": q.question_id,
                        "seed_items": q.seed_items,
                        "blank_position": q.blank_position,
                        "candidates": q.candidates,
                        "answer_index": q.answer_index,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_questions(path) -> list[FITBQuestion]:
    import json
    from pathlib import Path

    questions = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                questions.append(
                    FITBQuestion(
                        question_id=obj["question_id"],
                        seed_items=list(obj["seed_items"]),
                        blank_position=int(obj["blank_position"]),
                        candidates=list(obj["candidates"]),
                        answer_index=int(obj["answer_index"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataValidationError(f"{path}:{lineno}: bad question record: {exc}") from exc
    return questions
