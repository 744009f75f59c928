"""VOC-style per-image XML annotation parsing and writing.

VOC coordinates are 1-based inclusive pixel indices; they are converted to
continuous corner form on ingest (x_min = xmin - 1, x_max = xmax) and back
on write.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Collection, Optional

from .datasets import Annotation, ImageRecord
from .errors import GeometryError, ParseError, ValidationError
from .geometry import Box


def _text(root: ET.Element, path: str) -> str:
    value = root.findtext(path)
    if value is None:
        raise ParseError(f"missing <{path}> element")
    return value


def _num(s: str) -> float:
    v = float(s)
    return v


def parse_voc(document: str, known_categories: Optional[Collection[str]] = None) -> ImageRecord:
    """Parse a single-image VOC XML document.

    When known_categories is given, an object naming a category outside it is
    an unknown-category error.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as e:
        raise ParseError(f"invalid XML: {e}") from e

    image_id = root.findtext("filename") or ""
    if not image_id:
        raise ParseError("missing <filename>")
    width = int(_num(_text(root, "size/width")))
    height = int(_num(_text(root, "size/height")))

    annotations = []
    for i, obj in enumerate(root.findall("object")):
        name = (obj.findtext("name") or "").strip()
        if not name:
            raise ParseError(f"object[{i}]: missing <name>")
        if known_categories is not None and name not in known_categories:
            raise ValidationError(f"object[{i}]: unknown category {name!r}")
        bnd = obj.find("bndbox")
        if bnd is None:
            raise ParseError(f"object[{i}]: missing <bndbox>")
        try:
            box = Box(
                x_min=_num(_text(bnd, "xmin")) - 1,
                y_min=_num(_text(bnd, "ymin")) - 1,
                x_max=_num(_text(bnd, "xmax")),
                y_max=_num(_text(bnd, "ymax")),
            )
        except GeometryError as e:
            raise ValidationError(f"object[{i}] ({name!r}): {e}") from e
        annotations.append(Annotation(category_name=name, box=box))

    try:
        return ImageRecord(
            image_id=image_id,
            width=width,
            height=height,
            pixel_source=image_id,
            annotations=tuple(annotations),
        )
    except ValidationError as e:
        raise ValidationError(f"{image_id!r}: {e}") from e


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(v)


def write_voc(r: ImageRecord) -> str:
    """Serialize an ImageRecord to VOC XML (round-trips with parse_voc)."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = r.image_id
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(r.width)
    ET.SubElement(size, "height").text = str(r.height)
    ET.SubElement(size, "depth").text = "3"
    for ann in r.annotations:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = ann.category_name
        bnd = ET.SubElement(obj, "bndbox")
        ET.SubElement(bnd, "xmin").text = _fmt(ann.box.x_min + 1)
        ET.SubElement(bnd, "ymin").text = _fmt(ann.box.y_min + 1)
        ET.SubElement(bnd, "xmax").text = _fmt(ann.box.x_max)
        ET.SubElement(bnd, "ymax").text = _fmt(ann.box.y_max)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode")
