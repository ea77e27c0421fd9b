"""Annotated grayscale datasets and per-image class gray profiles.

Pixels are normalized to [0, 1] at load time.  Boxes are half-open integer
rectangles ``[x, x + w) x [y, y + h)``; overlapping boxes of one class are
merged (each pixel counted once).
"""

from __future__ import annotations

import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import (
    AnnotationParseError,
    DomainError,
    ImageFormatError,
    MissingFileError,
)

logger = logging.getLogger(__name__)

BACKGROUND_ID = 0

# flag set on an ImageRelation when boxes cover every pixel
FLAG_BACKGROUND_FROM_FULL_IMAGE = "background_from_full_image"


@dataclass(frozen=True)
class GrayImage:
    """Gray intensities in [0, 1], stored as a (height, width) float array."""

    pixels: np.ndarray
    source_bit_depth: int = 8

    def __post_init__(self) -> None:
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ImageFormatError(f"expected a non-empty 2-D gray image, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ImageFormatError("gray intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_uint8(cls, data: np.ndarray) -> GrayImage:
        return cls(np.asarray(data, dtype=np.float64) / 255.0, source_bit_depth=8)

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.pixels * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int
    class_id: int

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise DomainError(f"box extents must be positive, got w={self.w}, h={self.h}")
        if self.class_id < 1:
            raise DomainError(f"class_id must be >= 1 (0 is background), got {self.class_id}")

    @property
    def area(self) -> int:
        return self.w * self.h

    def clip(self, width: int, height: int) -> BoundingBox | None:
        """Intersect with the image rectangle; ``None`` if nothing is left."""
        x0, y0 = max(self.x, 0), max(self.y, 0)
        x1, y1 = min(self.x + self.w, width), min(self.y + self.h, height)
        if x1 <= x0 or y1 <= y0:
            return None
        return BoundingBox(x0, y0, x1 - x0, y1 - y0, self.class_id)


@dataclass
class Dataset:
    images: list[tuple[int, GrayImage]] = field(default_factory=list)
    annotations: dict[int, list[BoundingBox]] = field(default_factory=dict)
    class_names: dict[int, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def boxes(self, image_id: int) -> list[BoundingBox]:
        return self.annotations.get(image_id, [])


@dataclass(frozen=True)
class ImageRelation:
    """Class-wise mean gray values of one image, with the background kept apart."""

    image_id: int
    background_gray: float
    class_grays: Mapping[int, float]
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        grays = {int(k): float(v) for k, v in dict(self.class_grays).items()}
        if BACKGROUND_ID in grays:
            raise DomainError("background must be stored in background_gray, not class_grays")
        object.__setattr__(self, "class_grays", dict(sorted(grays.items())))
        object.__setattr__(self, "background_gray", float(self.background_gray))
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def class_count(self) -> int:
        return len(self.class_grays)

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(self.class_grays)

    def values(self, include_background: bool = True) -> list[tuple[int, float]]:
        """``(class_id, gray)`` pairs; the background appears as class 0."""
        items = list(self.class_grays.items())
        if include_background:
            items.insert(0, (BACKGROUND_ID, self.background_gray))
        return items


# --------------------------------------------------------------------------
# image I/O


def read_gray_image(path: str | Path) -> GrayImage:
    """Read an 8-bit grayscale PGM (P5) or PNG file."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path)
    try:
        with Image.open(path) as im:
            fmt, mode = im.format, im.mode
            if fmt not in ("PNG", "PPM"):
                raise ImageFormatError(f"{path}: unsupported image format {fmt!r}")
            if mode != "L":
                raise ImageFormatError(
                    f"{path}: expected 8-bit grayscale, got mode {mode!r}"
                )
            data = np.asarray(im, dtype=np.uint8)
    except ImageFormatError:
        raise
    except OSError as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    return GrayImage.from_uint8(data)


def encode_gray_image(image: GrayImage, suffix: str) -> bytes:
    """8-bit PGM or PNG bytes; ``suffix`` is ``.pgm`` or ``.png``."""
    fmt = {".pgm": "PPM", ".png": "PNG"}.get(suffix.lower())
    if fmt is None:
        raise ImageFormatError(f"suffix must be .pgm or .png, got {suffix!r}")
    buf = io.BytesIO()
    Image.fromarray(image.to_uint8()).save(buf, format=fmt)
    return buf.getvalue()


def write_gray_image(image: GrayImage, path: str | Path) -> None:
    """Write as 8-bit; the format follows the suffix (``.pgm`` or ``.png``)."""
    path = Path(path)
    path.write_bytes(encode_gray_image(image, path.suffix))


# --------------------------------------------------------------------------
# annotation loading


def _require(record: Mapping, key: str, index: int, section: str):
    if not isinstance(record, Mapping) or key not in record:
        raise AnnotationParseError(f"{section} entry is missing {key!r}", index)
    return record[key]


def _as_int(value, what: str, index: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise AnnotationParseError(f"{what} must be a number, got {value!r}", index)
    if float(value) != int(value):
        raise AnnotationParseError(f"{what} must be an integer, got {value!r}", index)
    return int(value)


def _parse_bbox(raw, index: int) -> tuple[int, int, int, int]:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise AnnotationParseError("bbox must be [x, y, w, h]", index)
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise AnnotationParseError(f"bbox entries must be finite numbers, got {raw!r}", index)
    x, y, w, h = (float(v) for v in raw)
    if w <= 0 or h <= 0:
        raise AnnotationParseError(f"bbox extents must be positive, got {raw!r}", index)
    # fractional COCO boxes snap outward to the pixel grid
    x0, y0 = math.floor(x), math.floor(y)
    x1, y1 = math.ceil(x + w), math.ceil(y + h)
    return x0, y0, x1 - x0, y1 - y0


def load_dataset(annotation_path: str | Path, image_dir: str | Path) -> Dataset:
    """Load a COCO-style annotation file and its grayscale images.

    Boxes are clipped to the image; boxes with nothing left after clipping are
    dropped and recorded in ``Dataset.warnings``.
    """
    annotation_path, image_dir = Path(annotation_path), Path(image_dir)
    if not annotation_path.is_file():
        raise MissingFileError(annotation_path)
    if not image_dir.is_dir():
        raise MissingFileError(image_dir)
    try:
        doc = json.loads(annotation_path.read_text())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise AnnotationParseError(f"{annotation_path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, Mapping):
        raise AnnotationParseError(f"{annotation_path}: top level must be an object")

    sections = {}
    for key in ("images", "annotations", "categories"):
        value = doc.get(key, [])
        if not isinstance(value, list):
            raise AnnotationParseError(f"{key!r} must be a list")
        sections[key] = value

    class_names: dict[int, str] = {}
    for i, cat in enumerate(sections["categories"]):
        cid = _as_int(_require(cat, "id", i, "categories"), "category id", i)
        if cid < 1:
            raise AnnotationParseError(f"category id {cid} is reserved (0 is background)", i)
        if cid in class_names:
            raise AnnotationParseError(f"duplicate category id {cid}", i)
        class_names[cid] = str(cat.get("name", cid))

    dataset = Dataset(class_names=class_names)
    sizes: dict[int, tuple[int, int]] = {}
    for i, rec in enumerate(sections["images"]):
        image_id = _as_int(_require(rec, "id", i, "images"), "image id", i)
        file_name = _require(rec, "file_name", i, "images")
        if image_id in sizes:
            raise AnnotationParseError(f"duplicate image id {image_id}", i)
        image = read_gray_image(image_dir / str(file_name))
        for key, actual in (("width", image.width), ("height", image.height)):
            if key in rec and _as_int(rec[key], key, i) != actual:
                raise AnnotationParseError(
                    f"image {image_id}: declared {key} {rec[key]} != file {key} {actual}", i
                )
        sizes[image_id] = (image.width, image.height)
        dataset.images.append((image_id, image))
        dataset.annotations[image_id] = []

    for i, rec in enumerate(sections["annotations"]):
        image_id = _as_int(_require(rec, "image_id", i, "annotations"), "image_id", i)
        cid = _as_int(_require(rec, "category_id", i, "annotations"), "category_id", i)
        x, y, w, h = _parse_bbox(_require(rec, "bbox", i, "annotations"), i)
        if image_id not in sizes:
            raise AnnotationParseError(f"unknown image_id {image_id}", i)
        if cid not in class_names:
            raise AnnotationParseError(f"unknown category_id {cid}", i)
        clipped = BoundingBox(x, y, w, h, cid).clip(*sizes[image_id])
        if clipped is None:
            msg = f"annotation {i}: box {[x, y, w, h]} lies outside image {image_id}; dropped"
            logger.warning(msg)
            dataset.warnings.append(msg)
            continue
        dataset.annotations[image_id].append(clipped)
    return dataset


# --------------------------------------------------------------------------
# gray statistics


def region_mask(width: int, height: int, boxes: Iterable[BoundingBox]) -> np.ndarray:
    """Boolean (height, width) mask of the union of the (pre-clipped) boxes."""
    mask = np.zeros((height, width), dtype=bool)
    for b in boxes:
        mask[b.y : b.y + b.h, b.x : b.x + b.w] = True
    return mask


def class_mean_gray(image: GrayImage, mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.pixels.shape:
        raise DomainError(f"mask shape {mask.shape} does not match image {image.pixels.shape}")
    n = int(mask.sum())
    if n == 0:
        raise DomainError("empty region")
    return float(math.fsum(image.pixels[mask]) / n)


def image_relation(image_id: int, image: GrayImage, boxes: Sequence[BoundingBox]) -> ImageRelation:
    """Reduce an image to its background gray and per-class mean grays."""
    if not boxes:
        raise DomainError("no foreground classes")
    by_class: dict[int, list[BoundingBox]] = {}
    for b in boxes:
        by_class.setdefault(b.class_id, []).append(b)
    grays = {}
    foreground = np.zeros(image.pixels.shape, dtype=bool)
    for cid in sorted(by_class):
        mask = region_mask(image.width, image.height, by_class[cid])
        grays[cid] = class_mean_gray(image, mask)
        foreground |= mask
    flags: tuple[str, ...] = ()
    if foreground.all():
        background = class_mean_gray(image, np.ones_like(foreground))
        flags = (FLAG_BACKGROUND_FROM_FULL_IMAGE,)
    else:
        background = class_mean_gray(image, ~foreground)
    return ImageRelation(image_id, background, grays, flags)


def extract_relations(dataset: Dataset, threads: int = 1) -> list[ImageRelation]:
    """Relations for every image that carries at least one box, in dataset order."""
    jobs = [(iid, img, dataset.boxes(iid)) for iid, img in dataset.images]
    skipped = [iid for iid, _, boxes in jobs if not boxes]
    for iid in skipped:
        msg = f"image {iid} has no boxes; skipped"
        logger.warning(msg)
        dataset.warnings.append(msg)
    jobs = [j for j in jobs if j[2]]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda j: image_relation(*j), jobs))
    return [image_relation(*j) for j in jobs]
