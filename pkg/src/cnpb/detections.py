"""Ingest external detector results and mine novel-category false positives.

Base images carry no novel ground truth, so every novel-category detection on
a base image is a false positive by construction; no IoU test against ground
truth is needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .datasets import NOVEL, Category, Dataset
from .errors import GeometryError, ParseError, ValidationError
from .geometry import Box


@dataclass(frozen=True)
class Detection:
    image_id: str
    category: Category
    score: float
    box: Box

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class FpHit:
    image_id: str
    novel_category: Category
    fp_box: Box
    score: float


@dataclass(frozen=True)
class FpIndex:
    hits: tuple[FpHit, ...]
    base_image_total: int

    def by_category(self) -> dict[str, list[FpHit]]:
        groups: dict[str, list[FpHit]] = {}
        for h in self.hits:
            groups.setdefault(h.novel_category.name, []).append(h)
        return groups

    def by_image(self) -> dict[str, list[FpHit]]:
        groups: dict[str, list[FpHit]] = {}
        for h in self.hits:
            groups.setdefault(h.image_id, []).append(h)
        return groups

    def fp_image_ids(self, category_name: str | None = None) -> list[str]:
        """Distinct image ids with a hit, sorted; optionally for one category."""
        ids = {
            h.image_id
            for h in self.hits
            if category_name is None or h.novel_category.name == category_name
        }
        return sorted(ids)


def parse_detections(
    document: str, base: Dataset, categories: Sequence[Category]
) -> list[Detection]:
    """Parse a COCO-results array of {image_id, category_id, bbox, score}.

    Detections referencing images outside the base set or unknown categories
    are rejected.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON at line {e.lineno} col {e.colno}: {e.msg}") from e
    if not isinstance(doc, list):
        raise ParseError("detection results must be a JSON array")

    cat_by_id = {c.id: c for c in categories}
    known_images = {img.image_id for img in base.images}
    out = []
    for i, entry in enumerate(doc):
        where = f"results[{i}]"
        if not isinstance(entry, dict):
            raise ParseError(f"{where}: entry is not an object")
        try:
            image_id = str(entry["image_id"])
            cat_id = int(entry["category_id"])
            bbox = entry["bbox"]
            score = float(entry["score"])
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{where}: {e}") from e
        if image_id not in known_images:
            raise ValidationError(f"{where}: unknown image id {image_id!r}")
        if cat_id not in cat_by_id:
            raise ValidationError(f"{where}: unknown category id {cat_id}")
        if not (isinstance(bbox, list) and len(bbox) == 4):
            raise ParseError(f"{where}: bbox must be [x, y, w, h]")
        try:
            box = Box.from_xywh(*(float(v) for v in bbox))
        except GeometryError as e:
            raise ValidationError(f"{where}: {e}") from e
        out.append(Detection(image_id=image_id, category=cat_by_id[cat_id], score=score, box=box))
    return out


def find_fp_images(
    base: Dataset,
    dets: Sequence[Detection],
    threshold: float,
    threshold_hi: float | None = None,
) -> FpIndex:
    """Collect novel-category detections on base images scoring strictly above threshold.

    threshold_hi switches to interval mining: threshold < score <= threshold_hi.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ValidationError(f"threshold {threshold} outside [0, 1]")
    if threshold_hi is not None and not (threshold < threshold_hi <= 1.0):
        raise ValidationError(f"threshold_hi {threshold_hi} outside ({threshold}, 1]")
    known_images = {img.image_id for img in base.images}
    hits = []
    for det in dets:
        if det.image_id not in known_images:
            raise ValidationError(f"detection references image {det.image_id!r} not in base set")
        if det.category.split != NOVEL:
            continue
        if det.score > threshold and (threshold_hi is None or det.score <= threshold_hi):
            hits.append(
                FpHit(
                    image_id=det.image_id,
                    novel_category=det.category,
                    fp_box=det.box,
                    score=det.score,
                )
            )
    return FpIndex(hits=tuple(hits), base_image_total=len(base.images))


def fp_ratio(index: FpIndex) -> float:
    """Fraction of base images containing at least one hit."""
    if index.base_image_total <= 0:
        raise ValidationError("fp_ratio undefined for an empty base set")
    return len(index.fp_image_ids()) / index.base_image_total


def fp_report(
    base: Dataset, dets: Sequence[Detection], thresholds: Sequence[float]
) -> list[dict]:
    """Per-threshold FP-ratio sweep with per-category distinct-image hit counts."""
    if not thresholds:
        raise ValidationError("thresholds must be non-empty")
    rows = []
    for t in sorted(thresholds):
        index = find_fp_images(base, dets, t)
        per_category = {
            name: len({h.image_id for h in hits})
            for name, hits in sorted(index.by_category().items())
        }
        rows.append(
            {
                "threshold": t,
                "fp_ratio": fp_ratio(index),
                "fp_image_count": len(index.fp_image_ids()),
                "per_category_hits": per_category,
            }
        )
    return rows
