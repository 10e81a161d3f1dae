"""COCO-style dataset model: parsing, validation, serialization and merging.

Schema (JSON)::

    {
      "images":      [{"id", "file_name", "width", "height"}, ...],
      "annotations": [{"id", "image_id", "category_id",
                       "segmentation": [[x1, y1, x2, y2, ...], ...],
                       "bbox": [x, y, w, h], "area": float,
                       "score": float (optional),
                       "provenance": "human" | "pseudo" (optional)}, ...],
      "categories":  [{"id", "name"}, ...]
    }

Unknown keys are ignored on parse and not written back. ``bbox`` and
``area`` are derived from the polygons on serialize and never read.
RLE segmentations are rejected.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

import numpy as np

from .geometry import as_vertices, polygon_area

HUMAN = "human"
PSEUDO = "pseudo"
PROVENANCES = (HUMAN, PSEUDO)


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class ValidationError(DatasetError):
    def __init__(self, violations: list["Violation"] | str):
        if isinstance(violations, str):
            violations = [Violation("dataset", None, violations)]
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class MergeError(DatasetError):
    pass


@dataclass(frozen=True)
class Violation:
    entity: str
    id: Any
    rule: str

    def __str__(self):
        return f"{self.entity} {self.id}: {self.rule}"


@dataclass(frozen=True)
class ImageRecord:
    id: int
    file_name: str
    width: int
    height: int


@dataclass(frozen=True)
class Category:
    id: int
    name: str


@dataclass(frozen=True)
class InstanceAnnotation:
    """One stenosis instance; ``segmentation`` holds one or more flat polygons."""

    id: int
    image_id: int
    category_id: int
    segmentation: tuple[tuple[float, ...], ...]
    score: float | None = None
    provenance: str = HUMAN

    @property
    def polygons(self) -> list[np.ndarray]:
        return [as_vertices(p) for p in self.segmentation]

    @property
    def area(self) -> float:
        return float(sum(polygon_area(p) for p in self.segmentation))

    @property
    def bbox(self) -> list[float]:
        pts = np.concatenate([as_vertices(p) for p in self.segmentation])
        x0, y0 = pts.min(axis=0)
        x1, y1 = pts.max(axis=0)
        return [float(x0), float(y0), float(x1 - x0), float(y1 - y0)]


@dataclass(frozen=True)
class Dataset:
    images: tuple[ImageRecord, ...] = ()
    annotations: tuple[InstanceAnnotation, ...] = ()
    categories: tuple[Category, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "categories", tuple(self.categories))

    def image_by_id(self) -> dict[int, ImageRecord]:
        return {im.id: im for im in self.images}

    def annotations_by_image(self) -> dict[int, list[InstanceAnnotation]]:
        out: dict[int, list[InstanceAnnotation]] = {im.id: [] for im in self.images}
        for a in self.annotations:
            out.setdefault(a.image_id, []).append(a)
        return out


def make_segmentation(polygons: Iterable) -> tuple[tuple[float, ...], ...]:
    """Normalize polygons given as arrays or flat lists into the stored form."""
    return tuple(
        tuple(float(c) for c in np.asarray(p, dtype=np.float64).reshape(-1)) for p in polygons
    )


# --------------------------------------------------------------------------
# validation


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def validate_dataset(d: Dataset) -> list[Violation]:
    out: list[Violation] = []

    for entity, items in (("image", d.images), ("annotation", d.annotations), ("category", d.categories)):
        for ident, n in Counter(x.id for x in items).items():
            if n > 1:
                out.append(Violation(entity, ident, f"id must be unique ({n} {entity}s share it)"))

    for im in d.images:
        if not _is_int(im.id):
            out.append(Violation("image", im.id, "id must be an integer"))
        if not isinstance(im.file_name, str) or not im.file_name:
            out.append(Violation("image", im.id, "file_name must be a non-empty string"))
        if not _is_int(im.width) or im.width <= 0:
            out.append(Violation("image", im.id, "width must be > 0"))
        if not _is_int(im.height) or im.height <= 0:
            out.append(Violation("image", im.id, "height must be > 0"))

    image_ids = {im.id for im in d.images}
    category_ids = {c.id for c in d.categories}
    for a in d.annotations:
        if not _is_int(a.id):
            out.append(Violation("annotation", a.id, "id must be an integer"))
        if a.image_id not in image_ids:
            out.append(Violation("annotation", a.id, f"image_id {a.image_id} does not resolve"))
        if a.category_id not in category_ids:
            out.append(Violation("annotation", a.id, f"category_id {a.category_id} does not resolve"))
        if not a.segmentation:
            out.append(Violation("annotation", a.id, "segmentation has no polygon"))
        for k, poly in enumerate(a.segmentation):
            if len(poly) % 2:
                out.append(Violation("annotation", a.id, f"polygon {k} flat list has odd length"))
            elif len(poly) < 6:
                out.append(Violation("annotation", a.id, f"polygon {k}: polygon must have >= 3 vertices"))
            if not all(np.isfinite(c) for c in poly):
                out.append(Violation("annotation", a.id, f"polygon {k} has non-finite coordinates"))
        if a.score is not None and not (0.0 <= a.score <= 1.0):
            out.append(Violation("annotation", a.id, f"score {a.score} outside [0, 1]"))
        if a.provenance not in PROVENANCES:
            out.append(Violation("annotation", a.id, f"provenance {a.provenance!r} not in {PROVENANCES}"))

    for c in d.categories:
        if not isinstance(c.name, str) or not c.name:
            out.append(Violation("category", c.id, "name must be a non-empty string"))
    return out


# --------------------------------------------------------------------------
# parsing


def _decode(raw: bytes | str) -> Any:
    if isinstance(raw, bytes):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"invalid UTF-8: {e.reason}", e.start) from None
    else:
        text = raw
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8"))
        raise ParseError(f"malformed JSON: {e.msg}", offset) from None


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ValidationError(f"{where}: missing required key {key!r}")
    return obj[key]


def _as_int(v, where: str) -> int:
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if not _is_int(v):
        raise ValidationError(f"{where}: expected integer, got {v!r}")
    return int(v)


def parse_image(obj: dict) -> ImageRecord:
    where = f"image {obj.get('id')}"
    return ImageRecord(
        id=_as_int(_require(obj, "id", where), where),
        file_name=str(_require(obj, "file_name", where)),
        width=_as_int(_require(obj, "width", where), where),
        height=_as_int(_require(obj, "height", where), where),
    )


def parse_annotation(obj: dict, *, require_score: bool = False, default_provenance: str = HUMAN) -> InstanceAnnotation:
    """Build an annotation from one COCO ``annotations`` entry."""
    where = f"annotation {obj.get('id')}"
    seg = _require(obj, "segmentation", where)
    if isinstance(seg, dict):
        raise ValidationError(f"{where}: RLE segmentations are not supported, convert to polygons")
    if not isinstance(seg, list):
        raise ValidationError(f"{where}: segmentation must be a list of polygons")
    if seg and all(isinstance(c, (int, float)) for c in seg):
        seg = [seg]  # single flat polygon
    polys = []
    for p in seg:
        if not isinstance(p, list) or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p):
            raise ValidationError(f"{where}: polygon must be a flat list of numbers")
        polys.append(tuple(float(c) for c in p))

    score = obj.get("score")
    if score is None and require_score:
        raise ValidationError(f"{where}: score is required")
    if score is not None:
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise ValidationError(f"{where}: score must be a number")
        score = float(score)
    return InstanceAnnotation(
        id=_as_int(_require(obj, "id", where), where),
        image_id=_as_int(_require(obj, "image_id", where), where),
        category_id=_as_int(_require(obj, "category_id", where), where),
        segmentation=tuple(polys),
        score=score,
        provenance=obj.get("provenance", default_provenance),
    )


def parse_category(obj: dict) -> Category:
    where = f"category {obj.get('id')}"
    return Category(id=_as_int(_require(obj, "id", where), where), name=str(_require(obj, "name", where)))


def load_document(raw: bytes | str) -> dict:
    doc = _decode(raw)
    if not isinstance(doc, dict):
        raise ValidationError("top level must be an object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key, []), list):
            raise ValidationError(f"top-level {key!r} must be a list")
    return doc


def dataset_from_document(doc: dict, *, require_score: bool = False) -> Dataset:
    d = Dataset(
        images=[parse_image(o) for o in doc.get("images", [])],
        annotations=[parse_annotation(o, require_score=require_score) for o in doc.get("annotations", [])],
        categories=[parse_category(o) for o in doc.get("categories", [])],
    )
    violations = validate_dataset(d)
    if violations:
        raise ValidationError(violations)
    return d


def parse_dataset(raw: bytes | str) -> Dataset:
    return dataset_from_document(load_document(raw))


def annotation_to_dict(a: InstanceAnnotation) -> dict:
    out = {
        "id": a.id,
        "image_id": a.image_id,
        "category_id": a.category_id,
        "segmentation": [list(p) for p in a.segmentation],
        "bbox": a.bbox,
        "area": a.area,
        "iscrowd": 0,
        "provenance": a.provenance,
    }
    if a.score is not None:
        out["score"] = a.score
    return out


def dataset_to_document(d: Dataset) -> dict:
    return {
        "images": [
            {"id": im.id, "file_name": im.file_name, "width": im.width, "height": im.height}
            for im in d.images
        ],
        "annotations": [annotation_to_dict(a) for a in d.annotations],
        "categories": [{"id": c.id, "name": c.name} for c in d.categories],
    }


def dump_document(doc: dict) -> bytes:
    return (json.dumps(doc, indent=1, allow_nan=False) + "\n").encode("utf-8")


def serialize_dataset(d: Dataset) -> bytes:
    return dump_document(dataset_to_document(d))


def read_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        return parse_dataset(f.read())


def write_dataset(d: Dataset, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize_dataset(d))


# --------------------------------------------------------------------------
# merging


@dataclass
class IdMap:
    """old id -> new id for each input of a merge, keyed ``labeled``/``pseudo``."""

    images: dict[str, dict[int, int]] = field(default_factory=dict)
    annotations: dict[str, dict[int, int]] = field(default_factory=dict)
    categories: dict[str, dict[int, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def conv(m):
            return {src: {str(k): v for k, v in ids.items()} for src, ids in m.items()}

        return {
            "images": conv(self.images),
            "annotations": conv(self.annotations),
            "categories": conv(self.categories),
        }


def merge_with_id_map(labeled: Dataset, pseudo: Dataset) -> tuple[Dataset, IdMap]:
    """Concatenate two datasets, reindexing image and annotation ids from 1.

    Category tables are unified by name; categories of ``labeled`` keep
    their ids and new names from ``pseudo`` get fresh ids after the max.
    """
    names = Counter(im.file_name for im in labeled.images)
    clashes = sorted({im.file_name for im in pseudo.images if names[im.file_name]})
    if clashes:
        raise MergeError(f"file_name present in both inputs: {', '.join(clashes[:5])}")

    idmap = IdMap()
    categories = list(labeled.categories)
    by_name = {c.name: c.id for c in categories}
    idmap.categories["labeled"] = {c.id: c.id for c in labeled.categories}
    idmap.categories["pseudo"] = {}
    next_cat = max((c.id for c in categories), default=0) + 1
    for c in pseudo.categories:
        if c.name not in by_name:
            by_name[c.name] = next_cat
            categories.append(Category(next_cat, c.name))
            next_cat += 1
        idmap.categories["pseudo"][c.id] = by_name[c.name]

    images, annotations = [], []
    for src, ds in (("labeled", labeled), ("pseudo", pseudo)):
        imap = {}
        for im in ds.images:
            imap[im.id] = len(images) + 1
            images.append(replace(im, id=imap[im.id]))
        idmap.images[src] = imap
    for src, ds in (("labeled", labeled), ("pseudo", pseudo)):
        amap = {}
        cmap = idmap.categories[src]
        for a in ds.annotations:
            amap[a.id] = len(annotations) + 1
            annotations.append(
                replace(
                    a,
                    id=amap[a.id],
                    image_id=idmap.images[src][a.image_id],
                    category_id=cmap.get(a.category_id, a.category_id),
                )
            )
        idmap.annotations[src] = amap
    return Dataset(images, annotations, categories), idmap


def merge_datasets(labeled: Dataset, pseudo: Dataset) -> Dataset:
    return merge_with_id_map(labeled, pseudo)[0]
