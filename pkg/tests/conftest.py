import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from thermorank.ingest import GrayImage, write_gray_image

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def make_dataset(tmp_path):
    """Write images plus a COCO document; returns (annotation_path, image_dir)."""

    def build(images: dict, annotations: list, categories=((1, "a"), (2, "b"), (3, "c"))):
        img_dir = tmp_path / "images"
        img_dir.mkdir(exist_ok=True)
        doc = {"images": [], "annotations": [], "categories": [{"id": i, "name": n} for i, n in categories]}
        for image_id, pixels in images.items():
            name = f"im{image_id}.png"
            write_gray_image(GrayImage.from_uint8(np.asarray(pixels, dtype=np.uint8)), img_dir / name)
            h, w = np.asarray(pixels).shape
            doc["images"].append({"id": image_id, "file_name": name, "width": w, "height": h})
        for n, (image_id, cid, bbox) in enumerate(annotations, start=1):
            doc["annotations"].append({"id": n, "image_id": image_id, "category_id": cid, "bbox": bbox})
        ann = tmp_path / "annotations.json"
        ann.write_text(json.dumps(doc))
        return ann, img_dir

    return build


def relation(image_id, g0, grays, flags=()):
    from thermorank.ingest import ImageRelation

    return ImageRelation(image_id, g0, grays, flags)


FIXTURES = Path(__file__).resolve().parents[1] / "src" / "thermorank" / "fixtures"


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
