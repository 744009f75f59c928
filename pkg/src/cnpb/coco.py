"""COCO-style annotation document parsing and writing."""

from __future__ import annotations

import json
from typing import Any

from .datasets import Annotation, Category, Dataset, ImageRecord
from .errors import GeometryError, ParseError, ValidationError
from .geometry import Box


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise ParseError(f"missing {key!r} in {where}")
    return obj[key]


def parse_coco(document: str) -> Dataset:
    """Parse a COCO annotation document into a Dataset.

    Bboxes are [x, y, w, h] and converted to corner form. Boxes exceeding the
    image bounds raise a validation error naming the image.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON at line {e.lineno} col {e.colno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise ParseError("COCO document must be a JSON object")

    categories = []
    for i, cat in enumerate(doc.get("categories", [])):
        split = cat.get("split")
        categories.append(
            Category(
                id=int(_require(cat, "id", f"categories[{i}]")),
                name=str(_require(cat, "name", f"categories[{i}]")),
                split=split,
            )
        )
    cat_by_id = {c.id: c for c in categories}

    anns_by_image: dict[Any, list[Annotation]] = {}
    for i, ann in enumerate(doc.get("annotations", [])):
        where = f"annotations[{i}]"
        image_id = _require(ann, "image_id", where)
        cat_id = int(_require(ann, "category_id", where))
        bbox = _require(ann, "bbox", where)
        if cat_id not in cat_by_id:
            raise ParseError(f"{where}: unknown category_id {cat_id}")
        if not (isinstance(bbox, list) and len(bbox) == 4):
            raise ParseError(f"{where}: bbox must be [x, y, w, h]")
        try:
            box = Box.from_xywh(*(float(v) for v in bbox))
        except GeometryError as e:
            raise ValidationError(f"{where}: {e}") from e
        anns_by_image.setdefault(image_id, []).append(
            Annotation(category_name=cat_by_id[cat_id].name, box=box)
        )

    images = []
    seen_ids = set()
    for i, img in enumerate(doc.get("images", [])):
        where = f"images[{i}]"
        image_id = str(_require(img, "id", where))
        if image_id in seen_ids:
            raise ParseError(f"{where}: duplicate image id {image_id!r}")
        seen_ids.add(image_id)
        width = int(_require(img, "width", where))
        height = int(_require(img, "height", where))
        raw_anns = anns_by_image.pop(_require(img, "id", where), [])
        try:
            rec = ImageRecord(
                image_id=image_id,
                width=width,
                height=height,
                pixel_source=img.get("file_name"),
                annotations=tuple(raw_anns),
            )
        except ValidationError as e:
            raise ValidationError(f"image {image_id!r}: {e}") from e
        images.append(rec)

    if anns_by_image:
        raise ParseError(
            f"annotations reference unknown image ids: {sorted(map(str, anns_by_image))[:5]}"
        )

    info = doc.get("info", {})
    shot_count = info.get("shot_count") if isinstance(info, dict) else None
    return Dataset(
        images=tuple(images), categories=tuple(categories), shot_count=shot_count
    )


def write_coco(d: Dataset) -> str:
    """Serialize a Dataset to a COCO annotation document (round-trips with parse_coco)."""
    cat_id_by_name = {c.name: c.id for c in d.categories}
    images = []
    annotations = []
    ann_id = 1
    for img in d.images:
        entry: dict[str, Any] = {
            "id": img.image_id,
            "width": img.width,
            "height": img.height,
        }
        if img.pixel_source is not None:
            entry["file_name"] = img.pixel_source
        images.append(entry)
        for ann in img.annotations:
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": img.image_id,
                    "category_id": cat_id_by_name[ann.category_name],
                    "bbox": ann.box.as_xywh(),
                    "area": ann.box.area,
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    categories = []
    for c in d.categories:
        entry = {"id": c.id, "name": c.name}
        if c.split is not None:
            entry["split"] = c.split
        categories.append(entry)
    doc: dict[str, Any] = {
        "images": images,
        "annotations": annotations,
        "categories": categories,
    }
    if d.shot_count is not None:
        doc["info"] = {"shot_count": d.shot_count}
    return json.dumps(doc, indent=2, sort_keys=True)
