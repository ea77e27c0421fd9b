import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from thermorank.errors import (
    AnnotationParseError,
    DomainError,
    ImageFormatError,
    MissingFileError,
)
from thermorank.ingest import (
    FLAG_BACKGROUND_FROM_FULL_IMAGE,
    BoundingBox,
    GrayImage,
    ImageRelation,
    class_mean_gray,
    extract_relations,
    image_relation,
    load_dataset,
    read_gray_image,
    region_mask,
    write_gray_image,
)


def test_empty_annotation_file(make_dataset):
    ann, img_dir = make_dataset({}, [])
    ds = load_dataset(ann, img_dir)
    assert ds.images == [] and ds.annotations == {}
    assert extract_relations(ds) == []


def test_single_image_single_box(make_dataset):
    ann, img_dir = make_dataset({1: np.zeros((4, 4))}, [(1, 1, [1, 1, 2, 2])])
    ds = load_dataset(ann, img_dir)
    assert len(ds.images) == 1
    assert ds.boxes(1) == [BoundingBox(1, 1, 2, 2, 1)]


def test_box_clipped_at_right_edge(make_dataset):
    ann, img_dir = make_dataset({1: np.zeros((8, 8))}, [(1, 1, [5, 2, 5, 3])])
    (box,) = load_dataset(ann, img_dir).boxes(1)
    assert box == BoundingBox(5, 2, 3, 3, 1)
    mask = region_mask(8, 8, [box])
    # brute-force scan against the unclipped box rectangle
    inside = sum(1 for y in range(8) for x in range(8) if 5 <= x < 10 and 2 <= y < 5)
    assert int(mask.sum()) == inside == 9


def test_box_outside_image_dropped_with_warning(make_dataset):
    ann, img_dir = make_dataset({1: np.zeros((4, 4))}, [(1, 1, [10, 10, 2, 2]), (1, 2, [0, 0, 2, 2])])
    ds = load_dataset(ann, img_dir)
    assert [b.class_id for b in ds.boxes(1)] == [2]
    assert any("dropped" in w for w in ds.warnings)


def test_fractional_bbox_snaps_outward(make_dataset):
    ann, img_dir = make_dataset({1: np.zeros((8, 8))}, [(1, 1, [0.5, 1.2, 2.0, 2.5])])
    (box,) = load_dataset(ann, img_dir).boxes(1)
    assert (box.x, box.y, box.x + box.w, box.y + box.h) == (0, 1, 3, 4)


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d["annotations"].append({"id": 9, "image_id": 42, "category_id": 1, "bbox": [0, 0, 1, 1]}), "unknown image_id"),
        (lambda d: d["annotations"].append({"id": 9, "image_id": 1, "category_id": 7, "bbox": [0, 0, 1, 1]}), "unknown category_id"),
        (lambda d: d["categories"].append({"id": 0, "name": "bg"}), "reserved"),
        (lambda d: d["images"].append(dict(d["images"][0])), "duplicate image id"),
        (lambda d: d["images"][0].update(width=5), "declared width"),
        (lambda d: d["annotations"].append({"id": 9, "image_id": 1, "category_id": 1}), "bbox"),
    ],
)
def test_malformed_records(make_dataset, mutate, fragment):
    ann, img_dir = make_dataset({1: np.zeros((4, 4))}, [(1, 1, [0, 0, 2, 2])])
    doc = json.loads(ann.read_text())
    mutate(doc)
    ann.write_text(json.dumps(doc))
    with pytest.raises(AnnotationParseError, match=fragment):
        load_dataset(ann, img_dir)


def test_invalid_json_and_missing_paths(make_dataset, tmp_path):
    ann, img_dir = make_dataset({}, [])
    ann.write_text("{not json")
    with pytest.raises(AnnotationParseError):
        load_dataset(ann, img_dir)
    with pytest.raises(MissingFileError):
        load_dataset(tmp_path / "nope.json", img_dir)
    with pytest.raises(MissingFileError):
        read_gray_image(tmp_path / "nope.png")


def test_image_io_roundtrip_and_format_checks(tmp_path):
    data = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    for suffix in (".png", ".pgm"):
        path = tmp_path / f"x{suffix}"
        write_gray_image(GrayImage.from_uint8(data), path)
        back = read_gray_image(path)
        assert np.array_equal(back.to_uint8(), data)
    from PIL import Image

    Image.new("RGB", (2, 2)).save(tmp_path / "rgb.png")
    with pytest.raises(ImageFormatError, match="grayscale"):
        read_gray_image(tmp_path / "rgb.png")
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(ImageFormatError):
        read_gray_image(tmp_path / "junk.png")


def test_gray_image_validation():
    with pytest.raises(ImageFormatError):
        GrayImage(np.full((2, 2), 1.5))
    with pytest.raises(ImageFormatError):
        GrayImage(np.zeros(4))


# region_mask


def test_region_mask_cases():
    assert not region_mask(4, 4, []).any()
    b = BoundingBox(1, 1, 2, 2, 1)
    assert np.array_equal(region_mask(4, 4, [b, b]), region_mask(4, 4, [b]))
    # two 2x2 boxes sharing one column
    m = region_mask(4, 4, [BoundingBox(0, 0, 2, 2, 1), BoundingBox(1, 0, 2, 2, 1)])
    assert int(m.sum()) == 6


boxes_4x6 = st.lists(
    st.builds(
        lambda x, y, w, h: BoundingBox(x, y, min(w, 6 - x), min(h, 4 - y), 1),
        st.integers(0, 5),
        st.integers(0, 3),
        st.integers(1, 6),
        st.integers(1, 4),
    ),
    max_size=5,
)


@given(boxes_4x6)
def test_union_count_bounded_by_area_sum(boxes):
    count = int(region_mask(6, 4, boxes).sum())
    total = sum(b.area for b in boxes)
    disjoint = all(
        not region_mask(6, 4, [a])[region_mask(6, 4, [b])].any()
        for i, a in enumerate(boxes)
        for b in boxes[i + 1 :]
    )
    assert count <= total
    assert (count == total) == disjoint


# class_mean_gray


def test_class_mean_gray_cases():
    img = GrayImage(np.full((3, 5), 0.5))
    mask = np.zeros((3, 5), dtype=bool)
    mask[1, 2:4] = True
    assert class_mean_gray(img, mask) == 0.5
    checker = GrayImage((np.indices((4, 6)).sum(axis=0) % 2).astype(float))
    assert class_mean_gray(checker, np.ones((4, 6), dtype=bool)) == 0.5
    small = GrayImage(np.array([[0.1, 0.2], [0.3, 0.4]]))
    left = np.array([[True, False], [True, False]])
    assert class_mean_gray(small, left) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(DomainError, match="empty region"):
        class_mean_gray(small, np.zeros((2, 2), dtype=bool))


# image_relation


def test_image_relation_constant_and_two_level():
    rel = image_relation(1, GrayImage(np.full((4, 4), 0.8)), [BoundingBox(0, 0, 2, 4, 1)])
    assert rel.class_grays == {1: 0.8} and rel.background_gray == 0.8
    px = np.zeros((4, 4))
    px[:, :2] = 1.0
    rel = image_relation(1, GrayImage(px), [BoundingBox(0, 0, 2, 4, 1)])
    assert rel.class_grays == {1: 1.0} and rel.background_gray == 0.0


def test_image_relation_matches_pixel_accumulation():
    rng = np.random.default_rng(3)
    px = rng.random((4, 4))
    boxes = [BoundingBox(0, 0, 2, 2, 1), BoundingBox(2, 2, 2, 1, 2), BoundingBox(0, 3, 1, 1, 2)]
    rel = image_relation(7, GrayImage(px), boxes)
    sums, counts = {0: 0.0, 1: 0.0, 2: 0.0}, {0: 0, 1: 0, 2: 0}
    for y in range(4):
        for x in range(4):
            owner = 0
            for b in boxes:
                if b.x <= x < b.x + b.w and b.y <= y < b.y + b.h:
                    owner = b.class_id
            sums[owner] += px[y, x]
            counts[owner] += 1
    assert rel.background_gray == pytest.approx(sums[0] / counts[0], abs=1e-15)
    for c in (1, 2):
        assert rel.class_grays[c] == pytest.approx(sums[c] / counts[c], abs=1e-15)


def test_background_falls_back_to_full_image():
    px = np.array([[0.2, 0.4], [0.6, 0.8]])
    rel = image_relation(1, GrayImage(px), [BoundingBox(0, 0, 2, 2, 1)])
    assert FLAG_BACKGROUND_FROM_FULL_IMAGE in rel.flags
    assert rel.background_gray == pytest.approx(0.5)


def test_image_relation_order_independent():
    rng = np.random.default_rng(5)
    img = GrayImage(rng.random((6, 6)))
    boxes = [BoundingBox(0, 0, 3, 3, 2), BoundingBox(2, 2, 3, 3, 1), BoundingBox(4, 0, 2, 2, 2)]
    a = image_relation(1, img, boxes)
    b = image_relation(1, img, boxes[::-1])
    assert a == b


@given(
    st.floats(0.0, 0.45),
    st.floats(0.55, 1.0),
    st.sampled_from([np.sqrt, np.square, lambda v: np.exp(v) / np.e, lambda v: v**3]),
)
def test_monotone_pixel_transform_preserves_order(lo, hi, g):
    px = np.full((4, 4), lo)
    px[:, 2:] = hi
    boxes = [BoundingBox(0, 0, 2, 4, 1), BoundingBox(2, 0, 2, 4, 2)]
    before = image_relation(1, GrayImage(px), boxes)
    after = image_relation(1, GrayImage(g(px)), boxes)
    assert (before.class_grays[1] < before.class_grays[2]) == (after.class_grays[1] < after.class_grays[2])


def test_extract_relations_skips_unannotated_and_threads_agree(make_dataset):
    rng = np.random.default_rng(0)
    images = {i: rng.integers(0, 256, (5, 5)) for i in range(1, 6)}
    ann = [(i, 1 + i % 2, [0, 0, 2, 3]) for i in range(1, 5)] + [(1, 3, [3, 3, 2, 2])]
    ann_path, img_dir = make_dataset(images, ann)
    ds = load_dataset(ann_path, img_dir)
    seq = extract_relations(ds)
    assert [r.image_id for r in seq] == [1, 2, 3, 4]
    assert any("image 5" in w for w in ds.warnings)
    assert extract_relations(load_dataset(ann_path, img_dir), threads=3) == seq


def test_relation_rejects_background_key():
    with pytest.raises(DomainError):
        ImageRelation(1, 0.1, {0: 0.2})
