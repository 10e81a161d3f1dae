"""Confidence-filtered pseudo-labels from external-model predictions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .annotations import (
    PSEUDO,
    Category,
    Dataset,
    ImageRecord,
    InstanceAnnotation,
    dataset_from_document,
    dataset_to_document,
    dump_document,
    load_document,
)
from .evaluation import evaluate_submission

STENOSIS = Category(1, "stenosis")
DEFAULT_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))


class PseudoLabelError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionSet:
    images: tuple[ImageRecord, ...]
    predictions: tuple[InstanceAnnotation, ...]
    source_model: str = ""
    created_at: str = ""
    categories: tuple[Category, ...] = (STENOSIS,)

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "predictions", tuple(self.predictions))
        object.__setattr__(self, "categories", tuple(self.categories))
        for p in self.predictions:
            if p.score is None or not 0.0 <= p.score <= 1.0:
                raise PseudoLabelError(f"prediction {p.id} needs a score in [0, 1], got {p.score}")

    @property
    def image_ids(self) -> list[int]:
        return [im.id for im in self.images]


@dataclass(frozen=True)
class ThresholdSweepResult:
    grid: tuple[float, ...]
    scores: tuple[float, ...]
    counts: tuple[int, ...]
    selected: float
    objective: str = "mean_f1"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# objective={self.objective} selected={self.selected!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "mean_f1", "surviving_count"])
        for t, s, c in zip(self.grid, self.scores, self.counts):
            w.writerow([repr(t), repr(s), c])
        return buf.getvalue()


def parse_predictions(raw: bytes | str) -> PredictionSet:
    doc = load_document(raw)
    if not doc.get("categories"):
        doc["categories"] = [{"id": STENOSIS.id, "name": STENOSIS.name}]
    d = dataset_from_document(doc, require_score=True)
    return PredictionSet(
        d.images,
        d.annotations,
        source_model=str(doc.get("source_model", "")),
        created_at=str(doc.get("created_at", "")),
        categories=d.categories,
    )


def serialize_predictions(p: PredictionSet) -> bytes:
    doc = dataset_to_document(Dataset(p.images, p.predictions, p.categories))
    doc["source_model"] = p.source_model
    doc["created_at"] = p.created_at
    return dump_document(doc)


def read_predictions(path) -> PredictionSet:
    with open(path, "rb") as f:
        return parse_predictions(f.read())


def write_predictions(p: PredictionSet, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize_predictions(p))


def filter_predictions(preds: PredictionSet, tau: float) -> list[InstanceAnnotation]:
    if not 0.0 <= tau <= 1.0:
        raise PseudoLabelError(f"threshold {tau} outside [0, 1]")
    return [replace(p, provenance=PSEUDO) for p in preds.predictions if p.score >= tau]


def sweep_threshold(
    preds_on_val: PredictionSet,
    val_gt: Dataset,
    grid: Sequence[float] = DEFAULT_GRID,
    timings: Mapping[int, float] | None = None,
) -> ThresholdSweepResult:
    """Score every threshold on the validation set and keep the best.

    Ties go to the larger threshold, which keeps fewer, surer pseudo-labels.
    """
    grid = tuple(float(t) for t in grid)
    if not grid:
        raise PseudoLabelError("threshold grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise PseudoLabelError("threshold grid must be strictly ascending")
    timings = timings if timings is not None else {im.id: 0.0 for im in val_gt.images}
    scores, counts = [], []
    for tau in grid:
        kept = filter_predictions(preds_on_val, tau)
        scores.append(evaluate_submission(val_gt, kept, timings).mean_f1)
        counts.append(len(kept))
    best = max(scores)
    selected = max(t for t, s in zip(grid, scores) if s == best)
    return ThresholdSweepResult(grid, tuple(scores), tuple(counts), selected)


def build_pseudo_dataset(
    vessel_images: Sequence[ImageRecord],
    kept: Sequence[InstanceAnnotation],
    categories: Sequence[Category] = (STENOSIS,),
) -> Dataset:
    """Images with at least one kept prediction, labelled with hard pseudo-labels."""
    by_id = {im.id: im for im in vessel_images}
    used = set()
    for a in kept:
        if a.image_id not in by_id:
            raise PseudoLabelError(f"prediction {a.id} references unknown vessel image {a.image_id}")
        used.add(a.image_id)
    images = [im for im in vessel_images if im.id in used]
    annotations = [replace(a, score=None, provenance=PSEUDO) for a in kept]
    return Dataset(images, annotations, tuple(categories))

