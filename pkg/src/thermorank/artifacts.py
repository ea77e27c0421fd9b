"""JSON artifacts: deterministic emission, atomic writes, schema checks.

Every artifact is an object carrying ``schema_version`` and ``kind``.  Keys
are sorted and floats are written with 17 significant digits, so identical
inputs always produce identical bytes.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .errors import MissingFileError, SchemaError
from .ingest import ImageRelation
from .stability import StabilityMatrix

SCHEMA_VERSION = 1


def _emit(value: Any, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if value is None or value is True or value is False:
        return json.dumps(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            return "null"
        text = format(value, ".17g")
        return text if any(ch in text for ch in ".en") else text + ".0"
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, Mapping):
        if not value:
            return "{}"
        items = sorted((str(k), v) for k, v in value.items())
        body = ",".join(f"{pad}{json.dumps(k)}: {_emit(v, indent, level + 1)}" for k, v in items)
        return "{" + body + end + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        return "[" + ",".join(pad + _emit(v, indent, level + 1) for v in value) + end + "]"
    if hasattr(value, "item"):  # numpy scalar
        return _emit(value.item(), indent, level)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(doc: Any, indent: int = 2) -> str:
    return _emit(doc, indent, 0) + "\n"


def write_atomic(path: str | Path, data: str | bytes) -> None:
    """Write through a temp file in the target directory, then rename over."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_artifact(path: str | Path, kind: str, doc: Mapping) -> dict:
    full = {"schema_version": SCHEMA_VERSION, "kind": kind, **doc}
    validate(full, kind)
    write_atomic(path, dumps(full))
    return full


# --------------------------------------------------------------------------
# schemas

_NUM = {"type": ["number", "null"]}
_HEADER = {
    "schema_version": {"const": SCHEMA_VERSION},
    "kind": {"type": "string"},
}


def _obj(required: list[str], props: dict, **extra) -> dict:
    return {"type": "object", "required": required, "properties": props, **extra}


_RELATION = _obj(
    ["image_id", "background_gray", "class_grays", "flags"],
    {
        "image_id": {"type": "integer"},
        "background_gray": {"type": "number"},
        "class_grays": {
            "type": "object",
            "patternProperties": {"^[1-9][0-9]*$": {"type": "number"}},
            "additionalProperties": False,
        },
        "flags": {"type": "array", "items": {"type": "string"}},
    },
)

_LOGITS = {
    "type": "object",
    "patternProperties": {
        "^[1-9][0-9]*$": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
    },
    "additionalProperties": False,
}

_WEIGHT_CONFIG = _obj(
    [],
    {k: {"type": "number"} for k in ("beta", "upsilon", "eta", "gamma")},
    additionalProperties=False,
)

_OFFSET = _obj(
    ["class_id", "mu", "sigma"],
    {"class_id": {"type": "integer"}, "mu": {"type": "number"}, "sigma": {"type": "number"}},
)
_QUALITY = {
    "type": "object",
    "patternProperties": {"^[0-9]+$": {"type": "number"}},
    "additionalProperties": False,
}

SCHEMAS: dict[str, dict] = {
    "run_config": _obj(
        ["schema_version", "kind"],
        {
            **_HEADER,
            "seed": {"type": "integer"},
            "threads": {"type": "integer", "minimum": 1},
            "out": {"type": "string"},
            "verbosity": {"type": "integer", "minimum": 0},
            "weights": _WEIGHT_CONFIG,
        },
        additionalProperties=False,
    ),
    "extraction": _obj(
        ["schema_version", "kind", "relations"],
        {
            **_HEADER,
            "relations": {"type": "array", "items": _RELATION},
            "class_names": {"type": "object"},
            "warnings": {"type": "array", "items": {"type": "string"}},
        },
    ),
    "stability": _obj(
        ["schema_version", "kind", "class_ids", "entries"],
        {
            **_HEADER,
            "class_ids": {"type": "array", "items": {"type": "integer"}},
            "entries": {
                "type": "array",
                "items": _obj(
                    ["k", "kt", "varphi", "count"],
                    {
                        "k": {"type": "integer"},
                        "kt": {"type": "integer"},
                        "varphi": {"type": "number", "minimum": 0, "maximum": 1},
                        "count": {"type": "integer", "minimum": 1},
                        "sign_sum": {"type": "integer"},
                    },
                ),
            },
        },
    ),
    "weights": _obj(
        ["schema_version", "kind", "config", "records"],
        {
            **_HEADER,
            "config": _WEIGHT_CONFIG,
            "records": {
                "type": "array",
                "items": _obj(
                    ["image_id", "rho", "w_rho", "s_x", "w_s", "combined"],
                    {
                        "image_id": {"type": "integer"},
                        **{k: {"type": "number"} for k in ("rho", "w_rho", "s_x", "w_s", "combined")},
                    },
                ),
            },
        },
    ),
    "scene_spec": _obj(
        ["schema_version", "kind", "scenes"],
        {
            **_HEADER,
            "class_names": {"type": "object"},
            "scenes": {
                "type": "array",
                "items": _obj(
                    ["width", "height", "background", "classes", "imaging"],
                    {
                        "image_id": {"type": "integer"},
                        "file_name": {"type": "string"},
                        "width": {"type": "integer", "minimum": 1},
                        "height": {"type": "integer", "minimum": 1},
                        "background": _obj(["temperature"], {"temperature": {"type": "number"}}),
                        "classes": {"type": "array"},
                        "imaging": _obj(["low", "high"], {"low": {"type": "number"}, "high": {"type": "number"}}),
                    },
                ),
            },
        },
    ),
    "render_manifest": _obj(
        ["schema_version", "kind", "annotations", "images"],
        {
            **_HEADER,
            "annotations": {"type": "string"},
            "images": {"type": "string"},
            "temperatures": {"type": "object"},
        },
    ),
    "theorem_spec": _obj(
        ["schema_version", "kind", "pairs"],
        {
            **_HEADER,
            "factors": {"enum": ["chain", "marginal"]},
            "mc_samples": {"type": "integer", "minimum": 0},
            "pairs": {
                "type": "array",
                "minItems": 1,
                "items": _obj(
                    ["offsets", "quality_1", "quality_2"],
                    {
                        "name": {"type": "string"},
                        "offsets": {"type": "array", "items": _OFFSET, "minItems": 2},
                        "quality_1": _QUALITY,
                        "quality_2": _QUALITY,
                    },
                ),
            },
        },
    ),
    "theorem_report": _obj(
        ["schema_version", "kind", "factors", "results"],
        {
            **_HEADER,
            "factors": {"enum": ["chain", "marginal"]},
            "results": {
                "type": "array",
                "items": _obj(
                    ["name", "e_rho_1", "e_rho_2", "e_knowledge_loss_1", "e_knowledge_loss_2", "improved"],
                    {
                        "name": {"type": "string"},
                        "e_rho_1": {"type": "number"},
                        "e_rho_2": {"type": "number"},
                        "e_knowledge_loss_1": {"type": "number"},
                        "e_knowledge_loss_2": {"type": "number"},
                        "improved": {"type": "boolean"},
                    },
                ),
            },
        },
    ),
    "train_config": _obj(
        ["schema_version", "kind", "extraction"],
        {
            **_HEADER,
            "extraction": {"type": "string"},
            "stability": {"type": "string"},
            "epochs": {"type": "integer", "minimum": 0},
            "batch_size": {"type": "integer", "minimum": 1},
            "learning_rate": {"type": "number"},
            "mode": {"enum": ["kgat", "plain"]},
            "seed": {"type": "integer"},
            "weights": _WEIGHT_CONFIG,
            "perturbation": _obj(
                [],
                {"eps": {"type": "number", "minimum": 0}, "worst_of_m": {"type": "integer", "minimum": 1}},
                additionalProperties=False,
            ),
            "rank_background": {"type": "boolean"},
            "single_class_stability": {"type": "number"},
            "init_logits": _LOGITS,
        },
        additionalProperties=False,
    ),
    "train_report": _obj(
        ["schema_version", "kind", "mode", "epochs", "final_logits"],
        {
            **_HEADER,
            "mode": {"enum": ["kgat", "plain"]},
            "epochs": {
                "type": "array",
                "items": _obj(
                    ["epoch", "l_det", "l_knowledge", "mean_w_rho", "mean_w_s"],
                    {
                        "epoch": {"type": "integer"},
                        "l_det": {"type": "number"},
                        "l_knowledge": _NUM,
                        "mean_w_rho": _NUM,
                        "mean_w_s": _NUM,
                    },
                ),
            },
            "final_logits": _LOGITS,
            "final_quality": {"type": "object"},
        },
    ),
}


def validate(doc: Any, kind: str | None = None) -> None:
    """Raise :class:`SchemaError` unless ``doc`` is a valid artifact (of ``kind``)."""
    if not isinstance(doc, Mapping):
        raise SchemaError("artifact must be a JSON object")
    if "schema_version" not in doc:
        raise SchemaError("artifact has no schema_version field")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {doc['schema_version']!r}")
    actual = doc.get("kind")
    if kind is not None and actual != kind:
        raise SchemaError(f"expected a {kind!r} artifact, got {actual!r}")
    if actual not in SCHEMAS:
        raise SchemaError(f"unknown artifact kind {actual!r}")
    try:
        jsonschema.validate(doc, SCHEMAS[actual])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{actual} artifact invalid at {where}: {exc.message}") from None


def read_artifact(path: str | Path, kind: str | None = None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    validate(doc, kind)
    return doc


# --------------------------------------------------------------------------
# domain <-> document


def relation_to_dict(rel: ImageRelation) -> dict:
    return {
        "image_id": rel.image_id,
        "background_gray": rel.background_gray,
        "class_grays": {str(c): g for c, g in rel.class_grays.items()},
        "flags": list(rel.flags),
    }


def relation_from_dict(doc: Mapping) -> ImageRelation:
    return ImageRelation(
        int(doc["image_id"]),
        float(doc["background_gray"]),
        {int(c): float(g) for c, g in doc["class_grays"].items()},
        tuple(doc.get("flags", ())),
    )


def relations_from_extraction(doc: Mapping) -> list[ImageRelation]:
    return [relation_from_dict(r) for r in doc["relations"]]


def stability_from_doc(doc: Mapping) -> StabilityMatrix:
    return StabilityMatrix.from_dict(doc)
