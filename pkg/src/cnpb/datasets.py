"""Annotated image collections and the base/novel category partition."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from .errors import ConfigError, ValidationError
from .geometry import Box

BASE = "base"
NOVEL = "novel"


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    split: Optional[str] = None  # "base" | "novel" | None before partitioning

    def __post_init__(self):
        if self.split not in (None, BASE, NOVEL):
            raise ValidationError(f"bad split {self.split!r} for category {self.name!r}")


@dataclass(frozen=True)
class Annotation:
    category_name: str
    box: Box


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    pixel_source: Optional[str] = None
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self):
        for ann in self.annotations:
            if not ann.box.contains_within(self.width, self.height):
                raise ValidationError(
                    f"annotation box {ann.box.as_corners()} outside image "
                    f"{self.image_id!r} bounds {self.width}x{self.height}"
                )


@dataclass(frozen=True)
class Dataset:
    images: tuple[ImageRecord, ...] = ()
    categories: tuple[Category, ...] = ()
    shot_count: Optional[int] = None

    def __post_init__(self):
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate category names in dataset")
        known = set(names)
        for img in self.images:
            for ann in img.annotations:
                if ann.category_name not in known:
                    raise ValidationError(
                        f"image {img.image_id!r} references unknown category "
                        f"{ann.category_name!r}"
                    )
        if self.shot_count is not None:
            counts = self.instance_counts()
            for cat in self.categories:
                if cat.split == NOVEL and counts.get(cat.name, 0) != self.shot_count:
                    raise ValidationError(
                        f"novel category {cat.name!r} has {counts.get(cat.name, 0)} "
                        f"instances, expected {self.shot_count}-shot"
                    )

    def category_by_name(self) -> dict[str, Category]:
        return {c.name: c for c in self.categories}

    def category_by_id(self) -> dict[int, Category]:
        return {c.id: c for c in self.categories}

    def image_by_id(self) -> dict[str, ImageRecord]:
        return {img.image_id: img for img in self.images}

    def instance_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for img in self.images:
            for ann in img.annotations:
                counts[ann.category_name] = counts.get(ann.category_name, 0) + 1
        return counts


def load_split_spec(text: str) -> dict[str, str]:
    """Parse a split-spec document: JSON object mapping category name -> base|novel."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"split spec is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("split spec must be a JSON object of name -> base|novel")
    spec: dict[str, str] = {}
    for name, split in raw.items():
        if split not in (BASE, NOVEL):
            raise ConfigError(f"split spec entry {name!r}: {split!r} is not base|novel")
        spec[name] = split
    return spec


def split_base_novel(d: Dataset, split_spec: Mapping[str, str]) -> tuple[Dataset, Dataset]:
    """Partition a dataset into a base set and a novel few-shot set.

    Base keeps every image with annotations restricted to base categories
    (novel labels on base images are dropped); novel keeps images carrying at
    least one novel annotation, restricted to novel categories.
    """
    for cat in d.categories:
        if cat.name not in split_spec:
            raise ConfigError(f"category {cat.name!r} missing from split spec")
    unknown = set(split_spec) - {c.name for c in d.categories}
    if unknown:
        raise ConfigError(f"split spec lists unknown categories: {sorted(unknown)}")

    base_cats = tuple(
        replace(c, split=BASE) for c in d.categories if split_spec[c.name] == BASE
    )
    novel_cats = tuple(
        replace(c, split=NOVEL) for c in d.categories if split_spec[c.name] == NOVEL
    )
    base_names = {c.name for c in base_cats}
    novel_names = {c.name for c in novel_cats}

    base_images = []
    novel_images = []
    for img in d.images:
        base_anns = tuple(a for a in img.annotations if a.category_name in base_names)
        novel_anns = tuple(a for a in img.annotations if a.category_name in novel_names)
        base_images.append(replace(img, annotations=base_anns))
        if novel_anns:
            novel_images.append(replace(img, annotations=novel_anns))

    base = Dataset(images=tuple(base_images), categories=base_cats)
    novel = Dataset(
        images=tuple(novel_images), categories=novel_cats, shot_count=d.shot_count
    )
    return base, novel
