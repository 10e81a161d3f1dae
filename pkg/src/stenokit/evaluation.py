"""Challenge scoring: instance-matched pixel F1 averaged per image, then per dataset.

Unmatched predictions and unmatched ground-truth instances each contribute
an F1 of 0 to their image's average. An image whose inference exceeded the
time limit scores 0.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .annotations import Dataset, InstanceAnnotation
from .geometry import GeometryError, Mask, rasterize

if TYPE_CHECKING:
    from .pseudo_label import PredictionSet

log = logging.getLogger(__name__)

DEFAULT_TIME_LIMIT = 5.0
TIE_TOLERANCE = 0.001


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class InstanceMatch:
    pred_id: int | None
    gt_id: int | None
    tp: int
    fp: int
    fn: int
    f1: float


@dataclass(frozen=True)
class ImageEval:
    image_id: int
    matches: tuple[InstanceMatch, ...]
    m_i: int
    image_f1: float
    elapsed: float = 0.0
    timed_out: bool = False


@dataclass(frozen=True)
class EvalReport:
    per_image: tuple[ImageEval, ...]
    n: int
    mean_f1: float
    total_inference_time: float
    time_limit: float = DEFAULT_TIME_LIMIT
    notes: dict = field(default_factory=dict)

    def summary_line(self) -> str:
        return f"mean_f1={self.mean_f1!r} n={self.n} total_time={self.total_inference_time!r}"


def instance_f1(tp: int, fp: int, fn: int) -> float:
    """Pixel F1 (Dice) of one instance pair.

    Uses ``2tp / (2tp + fp + fn)``, which equals ``2PR / (P + R)`` with
    ``P = tp/(tp+fp)`` and ``R = tp/(tp+fn)`` whenever ``tp > 0``, and is 0
    otherwise; a single division keeps small-count results correctly rounded.
    """
    if tp < 0 or fp < 0 or fn < 0:
        raise EvaluationError(f"negative pixel count in ({tp}, {fp}, {fn})")
    if tp + fp + fn == 0:
        raise EvaluationError("instance with no pixels on either side cannot be scored")
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def _pair_counts(pred_masks: Sequence[Mask], gt_masks: Sequence[Mask]):
    shape = None
    for m in list(pred_masks) + list(gt_masks):
        if shape is None:
            shape = (m.width, m.height)
        elif (m.width, m.height) != shape:
            raise GeometryError(f"mask size mismatch: {(m.width, m.height)} vs {shape}")
    npix = shape[0] * shape[1] if shape else 0
    p = np.array([m.bits.reshape(-1) for m in pred_masks], dtype=np.int64).reshape(len(pred_masks), npix)
    g = np.array([m.bits.reshape(-1) for m in gt_masks], dtype=np.int64).reshape(len(gt_masks), npix)
    inter = p @ g.T
    return inter, p.sum(axis=1), g.sum(axis=1)


def match_instances(
    pred_masks: Sequence[Mask],
    gt_masks: Sequence[Mask],
    pred_ids: Sequence[int] | None = None,
    gt_ids: Sequence[int] | None = None,
) -> list[InstanceMatch]:
    """Greedy one-to-one matching by descending pair F1.

    Pairs with no shared pixel are never matched. Equal F1 values are broken
    toward the lower ``(pred_id, gt_id)``. Matched pairs come first (in
    matching order), then unmatched predictions, then unmatched ground truth.
    """
    pred_ids = list(range(len(pred_masks))) if pred_ids is None else list(pred_ids)
    gt_ids = list(range(len(gt_masks))) if gt_ids is None else list(gt_ids)
    if len(pred_ids) != len(pred_masks) or len(gt_ids) != len(gt_masks):
        raise EvaluationError("id lists must match mask lists in length")
    inter, psize, gsize = _pair_counts(pred_masks, gt_masks)

    candidates = []
    for i in range(len(pred_masks)):
        for j in range(len(gt_masks)):
            tp = int(inter[i, j])
            if tp > 0:
                fp, fn = int(psize[i]) - tp, int(gsize[j]) - tp
                candidates.append((-instance_f1(tp, fp, fn), pred_ids[i], gt_ids[j], i, j, tp, fp, fn))
    candidates.sort()

    used_p, used_g = set(), set()
    out = []
    for neg_f1, pid, gid, i, j, tp, fp, fn in candidates:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        out.append(InstanceMatch(pid, gid, tp, fp, fn, -neg_f1))
    for i, pid in enumerate(pred_ids):
        if i not in used_p:
            out.append(InstanceMatch(pid, None, 0, int(psize[i]), 0, 0.0))
    for j, gid in enumerate(gt_ids):
        if j not in used_g:
            out.append(InstanceMatch(None, gid, 0, 0, int(gsize[j]), 0.0))
    return out


def mask_of(annotation: InstanceAnnotation, width: int, height: int) -> Mask:
    return rasterize(annotation.polygons, width, height)


def evaluate_image(
    preds: Sequence[InstanceAnnotation],
    gts: Sequence[InstanceAnnotation],
    width: int,
    height: int,
    elapsed: float = 0.0,
    limit: float = DEFAULT_TIME_LIMIT,
    image_id: int | None = None,
) -> ImageEval:
    if image_id is None:
        ids = {a.image_id for a in list(preds) + list(gts)}
        if len(ids) > 1:
            raise EvaluationError(f"annotations span several images: {sorted(ids)}")
        image_id = ids.pop() if ids else 0
    matches = match_instances(
        [mask_of(a, width, height) for a in preds],
        [mask_of(a, width, height) for a in gts],
        [a.id for a in preds],
        [a.id for a in gts],
    )
    timed_out = elapsed > limit
    if timed_out:
        image_f1 = 0.0
    elif matches:
        image_f1 = sum(m.f1 for m in matches) / len(matches)
    else:
        # nothing to find and nothing predicted
        image_f1 = 1.0
    return ImageEval(image_id, tuple(matches), len(matches), image_f1, float(elapsed), timed_out)


def evaluate_submission(
    gt: Dataset,
    preds: "PredictionSet | Sequence[InstanceAnnotation]",
    timings: Mapping[int, float] | None = None,
    limit: float = DEFAULT_TIME_LIMIT,
) -> EvalReport:
    predictions = getattr(preds, "predictions", preds)
    images = gt.image_by_id()
    pred_by_image: dict[int, list[InstanceAnnotation]] = {i: [] for i in images}
    for p in predictions:
        if p.image_id not in images:
            raise EvaluationError(f"prediction {p.id} references unknown image {p.image_id}")
        pred_by_image[p.image_id].append(p)
    gt_by_image = gt.annotations_by_image()

    timings = {} if timings is None else dict(timings)
    missing = [i for i in images if i not in timings]
    if missing and timings:
        log.warning("no timing for %d image(s), treating as 0 s: %s", len(missing), missing[:10])

    per_image = []
    for im in gt.images:
        per_image.append(
            evaluate_image(
                pred_by_image[im.id],
                gt_by_image.get(im.id, []),
                im.width,
                im.height,
                elapsed=float(timings.get(im.id, 0.0)),
                limit=limit,
                image_id=im.id,
            )
        )
    n = len(per_image)
    mean_f1 = sum(e.image_f1 for e in per_image) / n if n else 0.0
    total = float(sum(e.elapsed for e in per_image))
    return EvalReport(tuple(per_image), n, mean_f1, total, float(limit))


def compare_leaderboard(a: EvalReport, b: EvalReport, tolerance: float = TIE_TOLERANCE) -> int:
    """Leaderboard comparator: -1 if ``a`` ranks above ``b``, 1 if below, 0 if tied.

    Scores within ``tolerance`` relative to the larger one are decided by
    total inference time. Usable with ``functools.cmp_to_key``.
    """
    hi = max(a.mean_f1, b.mean_f1)
    if abs(a.mean_f1 - b.mean_f1) > tolerance * hi:
        return -1 if a.mean_f1 > b.mean_f1 else 1
    if a.total_inference_time != b.total_inference_time:
        return -1 if a.total_inference_time < b.total_inference_time else 1
    return 0


# --------------------------------------------------------------------------
# report files


def report_to_dict(r: EvalReport) -> dict:
    return {
        "mean_f1": r.mean_f1,
        "n": r.n,
        "total_inference_time": r.total_inference_time,
        "time_limit": r.time_limit,
        "summary": r.summary_line(),
        "notes": r.notes,
        "per_image": [
            {
                "image_id": e.image_id,
                "m_i": e.m_i,
                "image_f1": e.image_f1,
                "elapsed": e.elapsed,
                "timed_out": e.timed_out,
                "matches": [asdict(m) for m in e.matches],
            }
            for e in r.per_image
        ],
    }


def report_from_dict(doc: dict) -> EvalReport:
    per_image = tuple(
        ImageEval(
            image_id=e["image_id"],
            matches=tuple(InstanceMatch(**m) for m in e.get("matches", [])),
            m_i=e["m_i"],
            image_f1=e["image_f1"],
            elapsed=e["elapsed"],
            timed_out=e["timed_out"],
        )
        for e in doc["per_image"]
    )
    return EvalReport(
        per_image,
        doc["n"],
        doc["mean_f1"],
        doc["total_inference_time"],
        doc.get("time_limit", DEFAULT_TIME_LIMIT),
        doc.get("notes", {}),
    )


def write_report(r: EvalReport, path) -> None:
    with open(path, "w") as f:
        json.dump(report_to_dict(r), f, indent=1)
        f.write("\n")


def read_report(path) -> EvalReport:
    with open(path) as f:
        return report_from_dict(json.load(f))
