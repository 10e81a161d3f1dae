import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset
from stenokit.annotations import (
    HUMAN,
    PSEUDO,
    Category,
    Dataset,
    ImageRecord,
    InstanceAnnotation,
    MergeError,
    ParseError,
    ValidationError,
    merge_datasets,
    merge_with_id_map,
    parse_dataset,
    serialize_dataset,
    validate_dataset,
)

MINIMAL = {
    "images": [{"id": 1, "file_name": "1.png", "width": 512, "height": 512}],
    "annotations": [
        {"id": 1, "image_id": 1, "category_id": 1, "segmentation": [[10, 10, 20, 10, 15, 20]]}
    ],
    "categories": [{"id": 1, "name": "stenosis"}],
}

# shaped like a challenge file: extra keys everywhere, integer coordinates
ARCADE_LIKE = b"""{
  "info": {"description": "stenosis"},
  "licenses": [],
  "images": [{"id": 7, "file_name": "7.png", "width": 512, "height": 512,
              "license": 0, "date_captured": ""}],
  "categories": [{"id": 26, "name": "stenosis", "supercategory": "artery"}],
  "annotations": [{"id": 3, "image_id": 7, "category_id": 26, "iscrowd": 0,
                   "attributes": {"occluded": false},
                   "segmentation": [[100, 200, 110, 200, 110, 215, 100, 215]],
                   "bbox": [100, 200, 10, 15], "area": 150}]
}"""


def doc(**overrides):
    d = json.loads(json.dumps(MINIMAL))
    d.update(overrides)
    return json.dumps(d).encode()


class TestParse:
    def test_minimal(self):
        d = parse_dataset(doc())
        assert len(d.images) == 1 and len(d.annotations) == 1
        assert d.images[0] == ImageRecord(1, "1.png", 512, 512)

    def test_dangling_image_reference_names_annotation(self):
        raw = doc(annotations=[{"id": 5, "image_id": 99, "category_id": 1, "segmentation": [[0, 0, 1, 0, 1, 1]]}])
        with pytest.raises(ValidationError) as e:
            parse_dataset(raw)
        assert e.value.violations[0].id == 5
        assert "image_id 99" in str(e.value)

    def test_arcade_like_fields(self):
        d = parse_dataset(ARCADE_LIKE)
        a = d.annotations[0]
        assert a == InstanceAnnotation(
            id=3,
            image_id=7,
            category_id=26,
            segmentation=((100.0, 200.0, 110.0, 200.0, 110.0, 215.0, 100.0, 215.0),),
            score=None,
            provenance=HUMAN,
        )
        assert len(a.polygons[0]) == 4
        assert d.categories == (Category(26, "stenosis"),)

    def test_malformed_offset(self):
        raw = b'{"images": [}'
        with pytest.raises(ParseError) as e:
            parse_dataset(raw)
        assert e.value.offset == 12

    def test_offset_counts_bytes(self):
        raw = '{"images": [], "x": "éé", ]'.encode()
        with pytest.raises(ParseError) as e:
            parse_dataset(raw)
        assert raw[e.value.offset:e.value.offset + 1] == b"]"

    def test_rle_rejected(self):
        raw = doc(annotations=[{"id": 1, "image_id": 1, "category_id": 1, "segmentation": {"counts": [1, 2], "size": [2, 2]}}])
        with pytest.raises(ValidationError, match="RLE"):
            parse_dataset(raw)

    def test_multi_polygon(self):
        seg = [[0, 0, 4, 0, 4, 4], [10, 10, 14, 10, 14, 14]]
        d = parse_dataset(doc(annotations=[{"id": 1, "image_id": 1, "category_id": 1, "segmentation": seg}]))
        assert len(d.annotations[0].segmentation) == 2
        assert d.annotations[0].area == 16.0

    def test_score_and_provenance(self):
        ann = {"id": 1, "image_id": 1, "category_id": 1, "segmentation": [[0, 0, 1, 0, 1, 1]], "score": 0.25, "provenance": "pseudo"}
        a = parse_dataset(doc(annotations=[ann])).annotations[0]
        assert a.score == 0.25 and a.provenance == PSEUDO

    def test_missing_key(self):
        with pytest.raises(ValidationError, match="file_name"):
            parse_dataset(doc(images=[{"id": 1, "width": 3, "height": 3}], annotations=[]))


class TestSerialize:
    def test_empty_round_trip(self):
        assert parse_dataset(serialize_dataset(Dataset())) == Dataset()

    def test_single_round_trip(self):
        d = parse_dataset(doc())
        assert parse_dataset(serialize_dataset(d)) == d

    def test_bbox_and_area_recomputed(self):
        raw = doc(annotations=[{"id": 1, "image_id": 1, "category_id": 1, "segmentation": [[0, 0, 4, 0, 4, 2, 0, 2]],
                                "bbox": [9, 9, 9, 9], "area": 1234}])
        out = json.loads(serialize_dataset(parse_dataset(raw)))
        assert out["annotations"][0]["bbox"] == [0.0, 0.0, 4.0, 2.0]
        assert out["annotations"][0]["area"] == 8.0

    def test_unknown_keys_dropped(self):
        out = json.loads(serialize_dataset(parse_dataset(ARCADE_LIKE)))
        assert "info" not in out and "license" not in out["images"][0]

    def test_random_100_images(self, rng):
        d = random_dataset(rng, n_images=100)
        assert parse_dataset(serialize_dataset(d)) == d

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_round_trip_property(self, seed):
        d = random_dataset(np.random.default_rng(seed), scores=seed % 2 == 0)
        assert parse_dataset(serialize_dataset(d)) == d


def _valid():
    return Dataset(
        [ImageRecord(1, "a.png", 10, 10), ImageRecord(2, "b.png", 10, 10)],
        [InstanceAnnotation(1, 1, 1, ((0.0, 0.0, 1.0, 0.0, 1.0, 1.0),))],
        [Category(1, "stenosis")],
    )


class TestValidate:
    def test_valid(self):
        assert validate_dataset(_valid()) == []

    def test_two_vertex_polygon(self):
        d = _valid()
        d = replace(d, annotations=[replace(d.annotations[0], segmentation=((0.0, 0.0, 1.0, 1.0),))])
        v = validate_dataset(d)
        assert len(v) == 1 and "3 vertices" in v[0].rule and v[0].id == 1

    def test_duplicate_image_id(self):
        d = replace(_valid(), images=[ImageRecord(7, "a.png", 10, 10), ImageRecord(7, "b.png", 10, 10)], annotations=[])
        v = validate_dataset(d)
        assert len(v) == 1 and "unique" in v[0].rule and v[0].id == 7

    # one fault per case; each must produce exactly one violation
    FAULTS = {
        "width": lambda d: replace(d, images=[replace(d.images[0], width=0), d.images[1]]),
        "height": lambda d: replace(d, images=[replace(d.images[0], height=-1), d.images[1]]),
        "image_ref": lambda d: replace(d, annotations=[replace(d.annotations[0], image_id=9)]),
        "category_ref": lambda d: replace(d, annotations=[replace(d.annotations[0], category_id=9)]),
        "odd_flat": lambda d: replace(d, annotations=[replace(d.annotations[0], segmentation=((0.0, 0.0, 1.0, 0.0, 1.0),))]),
        "score_range": lambda d: replace(d, annotations=[replace(d.annotations[0], score=1.5)]),
        "provenance": lambda d: replace(d, annotations=[replace(d.annotations[0], provenance="robot")]),
        "dup_annotation": lambda d: replace(d, annotations=[d.annotations[0], d.annotations[0]]),
        "dup_category": lambda d: replace(d, categories=[Category(1, "stenosis"), Category(1, "other")]),
        "no_polygon": lambda d: replace(d, annotations=[replace(d.annotations[0], segmentation=())]),
    }

    @pytest.mark.parametrize("fault", sorted(FAULTS))
    def test_single_fault(self, fault):
        assert len(validate_dataset(self.FAULTS[fault](_valid()))) == 1


def _pseudo(rng, n):
    return random_dataset(rng, n_images=n, provenance=PSEUDO, prefix="vessel")


class TestMerge:
    def test_counts(self, rng):
        a = random_dataset(rng, n_images=2)
        b = _pseudo(rng, 3)
        m = merge_datasets(a, b)
        assert len(m.images) == 5
        assert len({im.id for im in m.images}) == 5
        assert [im.id for im in m.images] == [1, 2, 3, 4, 5]
        assert len(m.annotations) == len(a.annotations) + len(b.annotations)

    def test_empty_pseudo_is_identity_up_to_ids(self, rng):
        a = random_dataset(rng, n_images=4)
        m = merge_datasets(a, Dataset())
        assert [im.file_name for im in m.images] == [im.file_name for im in a.images]
        assert [x.segmentation for x in m.annotations] == [x.segmentation for x in a.annotations]
        assert validate_dataset(m) == []

    def test_duplicate_file_name(self, rng):
        a = random_dataset(rng, n_images=2)
        with pytest.raises(MergeError):
            merge_datasets(a, a)

    def test_categories_unified_by_name(self):
        a = Dataset([ImageRecord(1, "a.png", 5, 5)], [], [Category(26, "stenosis")])
        b = Dataset(
            [ImageRecord(4, "b.png", 5, 5)],
            [InstanceAnnotation(9, 4, 1, ((0.0, 0.0, 2.0, 0.0, 2.0, 2.0),), provenance=PSEUDO),
             InstanceAnnotation(10, 4, 2, ((0.0, 0.0, 2.0, 0.0, 2.0, 2.0),), provenance=PSEUDO)],
            [Category(1, "stenosis"), Category(2, "calcium")],
        )
        m, idmap = merge_with_id_map(a, b)
        assert m.categories == (Category(26, "stenosis"), Category(27, "calcium"))
        assert [x.category_id for x in m.annotations] == [26, 27]
        assert idmap.images["pseudo"] == {4: 2}
        assert idmap.annotations["pseudo"] == {9: 1, 10: 2}
        assert validate_dataset(m) == []

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_provenance_filter_recovers_pseudo(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_dataset(rng), _pseudo(rng, int(rng.integers(0, 5)))
        m = merge_datasets(a, b)
        assert validate_dataset(m) == []
        got = [(x.segmentation, x.category_id) for x in m.annotations if x.provenance == PSEUDO]
        assert got == [(x.segmentation, x.category_id) for x in b.annotations]
        assert len({x.id for x in m.annotations}) == len(m.annotations)
