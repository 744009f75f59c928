"""Axis-aligned box geometry with half-open area semantics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import GeometryError


@dataclass(frozen=True)
class Box:
    """Corner-form box; area covers [x_min, x_max) x [y_min, y_max)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise GeometryError(f"non-finite coordinates: {coords}")
        if any(c < 0 for c in coords):
            raise GeometryError(f"negative coordinates: {coords}")
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise GeometryError(f"degenerate box (zero or negative area): {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains_within(self, width: float, height: float) -> bool:
        """True when the box lies fully inside a [0,width]x[0,height] image."""
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height

    def as_xywh(self) -> list[float]:
        return [self.x_min, self.y_min, self.width, self.height]

    def as_corners(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        return cls(x, y, x + w, y + h)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes. Symmetric; 0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def summed_iou(candidate: Box, considered: Iterable[Box]) -> float:
    """Sum of pairwise IoU against every considered box; empty input gives 0."""
    return sum(iou(candidate, b) for b in considered)


def argmin_summed_iou(candidates: Sequence[Box], considered: Sequence[Box]) -> tuple[int, float]:
    """Index of the candidate minimizing summed IoU; ties go to the lowest index."""
    if not candidates:
        raise GeometryError("no candidates to select from")
    best_idx = 0
    best_val = summed_iou(candidates[0], considered)
    for i, c in enumerate(candidates[1:], start=1):
        v = summed_iou(c, considered)
        if v < best_val:
            best_idx, best_val = i, v
    return best_idx, best_val
