"""Crop, downsize, min-overlap placement, and pixel pasting for one pair.

Placement minimizes the summed IoU between a candidate location and the
considered boxes (base ground truth plus FP regions); it minimizes overlap,
it does not forbid it. Pastes are opaque rectangles with no blending.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .datasets import Annotation, ImageRecord
from .errors import ConfigError, ContractError, GeometryError, PipelineError
from .geometry import Box, argmin_summed_iou, summed_iou
from .selection import PastePair


@dataclass(frozen=True)
class ComposeParams:
    resize_lo: float = 0.2
    resize_hi: float = 0.5
    candidate_count: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.resize_lo <= self.resize_hi <= 1.0):
            raise ConfigError(
                f"resize bounds must satisfy 0 < lo <= hi <= 1, got "
                f"[{self.resize_lo}, {self.resize_hi}]"
            )
        if self.candidate_count < 1:
            raise ConfigError("candidate_count must be >= 1")


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray  # H x W x 3 uint8
    source_image_id: str
    source_box: Box
    category_name: str

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class CompositeRecord:
    composite_of: PastePair
    pixels: np.ndarray
    width: int
    height: int
    annotations: tuple[Annotation, ...]
    provenance: dict


def load_pixels(path: str | Path) -> np.ndarray:
    """Load an image file as an RGB uint8 array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except OSError as e:
        raise PipelineError("compose", f"unreadable pixel source {path}: {e}") from e


def save_pixels(pixels: np.ndarray, path: str | Path) -> None:
    Image.fromarray(pixels).save(path, format="PNG")


def _pixel_rect(box: Box, width: int, height: int) -> tuple[int, int, int, int]:
    x0, y0 = math.floor(box.x_min), math.floor(box.y_min)
    x1, y1 = math.ceil(box.x_max), math.ceil(box.y_max)
    if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
        raise GeometryError(
            f"box {box.as_corners()} outside image bounds {width}x{height}"
        )
    return x0, y0, x1, y1


def crop_instance(pixels: np.ndarray, box: Box, *, image_id: str = "", category: str = "") -> Patch:
    """Extract the pixel rectangle covering box, exactly."""
    h, w = pixels.shape[:2]
    x0, y0, x1, y1 = _pixel_rect(box, w, h)
    return Patch(
        pixels=pixels[y0:y1, x0:x1].copy(),
        source_image_id=image_id,
        source_box=box,
        category_name=category,
    )


def downsize(p: Patch, scale: float) -> Patch:
    """Area-average downscale; output dims are max(1, round(dim * scale))."""
    if not (0.0 < scale <= 1.0):
        raise ContractError(f"scale {scale} outside (0, 1]")
    tw = max(1, round(p.width * scale))
    th = max(1, round(p.height * scale))
    if (tw, th) == (p.width, p.height):
        return p
    im = Image.fromarray(p.pixels).resize((tw, th), Image.Resampling.BOX)
    return Patch(
        pixels=np.asarray(im),
        source_image_id=p.source_image_id,
        source_box=p.source_box,
        category_name=p.category_name,
    )


def gen_candidates(
    base_dims: tuple[int, int],
    patch_dims: tuple[int, int],
    count: int,
    rng: random.Random,
) -> list[Box]:
    """Uniform random patch-sized placement boxes fully inside the base image."""
    bw, bh = base_dims
    pw, ph = patch_dims
    if count < 1:
        raise ContractError("candidate count must be >= 1")
    if pw > bw or ph > bh:
        raise GeometryError(
            f"patch {pw}x{ph} does not fit in image {bw}x{bh}: no valid placement"
        )
    out = []
    for _ in range(count):
        x = rng.randint(0, bw - pw)
        y = rng.randint(0, bh - ph)
        out.append(Box(float(x), float(y), float(x + pw), float(y + ph)))
    return out


def select_location(
    candidates: Sequence[Box], considered: Sequence[Box]
) -> tuple[Box, dict]:
    """Candidate with minimal summed IoU against considered boxes; ties to lowest index."""
    if not candidates:
        raise ContractError("candidates must be non-empty")
    idx, overlap = argmin_summed_iou(candidates, considered)
    diagnostics = {
        "chosen_index": idx,
        "winning_overlap": overlap,
        "candidate_count": len(candidates),
        "considered_count": len(considered),
    }
    return candidates[idx], diagnostics


def paste(base_pixels: np.ndarray, patch: Patch, location: Box) -> np.ndarray:
    """Opaque rectangular overwrite of the patch at location; rest untouched."""
    h, w = base_pixels.shape[:2]
    x0, y0, x1, y1 = _pixel_rect(location, w, h)
    if (x1 - x0, y1 - y0) != (patch.width, patch.height):
        raise ContractError(
            f"location {x1 - x0}x{y1 - y0} does not match patch "
            f"{patch.width}x{patch.height}"
        )
    out = base_pixels.copy()
    out[y0:y1, x0:x1] = patch.pixels
    return out


def _pair_rng(params: ComposeParams, pair: PastePair) -> random.Random:
    # Independent per-pair stream so parallel and serial runs agree.
    return random.Random(f"{params.rng_seed}:pair:{pair.pairing_rank}")


def _fit_scale(sampled: float, patch: Patch, base_w: int, base_h: int) -> tuple[float, bool]:
    max_fit = min(base_w / patch.width, base_h / patch.height, 1.0)
    if sampled <= max_fit:
        return sampled, False
    return max_fit, True


def compose_cnpb(
    pair: PastePair,
    params: ComposeParams,
    base_record: ImageRecord,
    base_pixels: np.ndarray,
    novel_record: ImageRecord,
    novel_pixels: np.ndarray,
) -> CompositeRecord:
    """Crop the novel instance, downsize it, and paste it at the min-overlap spot."""
    rng = _pair_rng(params, pair)
    ann = novel_record.annotations[pair.novel_ann_index]
    patch = crop_instance(
        novel_pixels, ann.box, image_id=novel_record.image_id, category=ann.category_name
    )
    sampled = rng.uniform(params.resize_lo, params.resize_hi)
    scale, rescued = _fit_scale(sampled, patch, base_record.width, base_record.height)
    patch = downsize(patch, scale)

    candidates = gen_candidates(
        (base_record.width, base_record.height),
        (patch.width, patch.height),
        params.candidate_count,
        rng,
    )
    considered = [a.box for a in base_record.annotations] + list(pair.fp_boxes)
    location, diagnostics = select_location(candidates, considered)
    pixels = paste(base_pixels, patch, location)

    annotations = base_record.annotations + (
        Annotation(category_name=pair.category_name, box=location),
    )
    provenance = {
        "mode": "cnpb",
        "pairing_rank": pair.pairing_rank,
        "base_image_id": base_record.image_id,
        "novel_image_id": novel_record.image_id,
        "novel_ann_index": pair.novel_ann_index,
        "category": pair.category_name,
        "sampled_scale": sampled,
        "scale": scale,
        "rescued": rescued,
        "location": location.as_corners(),
        "fp_boxes": [b.as_corners() for b in pair.fp_boxes],
        **diagnostics,
    }
    return CompositeRecord(
        composite_of=pair,
        pixels=pixels,
        width=base_record.width,
        height=base_record.height,
        annotations=annotations,
        provenance=provenance,
    )


def compose_cbpn(
    pair: PastePair,
    params: ComposeParams,
    base_record: ImageRecord,
    base_pixels: np.ndarray,
    novel_record: ImageRecord,
    novel_pixels: np.ndarray,
) -> CompositeRecord:
    """Ablation: paste the FP crop from the base image onto the novel image.

    The pasted region is a negative-context patch and carries no annotation.
    """
    rng = _pair_rng(params, pair)
    fp_boxes = sorted(pair.fp_boxes, key=lambda b: b.as_corners())
    if not fp_boxes:
        raise ContractError(f"pair {pair.pairing_rank} has no FP boxes for CBPN")
    patch = crop_instance(
        base_pixels, fp_boxes[0], image_id=base_record.image_id, category=pair.category_name
    )
    sampled = rng.uniform(params.resize_lo, params.resize_hi)
    scale, rescued = _fit_scale(sampled, patch, novel_record.width, novel_record.height)
    patch = downsize(patch, scale)

    candidates = gen_candidates(
        (novel_record.width, novel_record.height),
        (patch.width, patch.height),
        params.candidate_count,
        rng,
    )
    considered = [a.box for a in novel_record.annotations]
    location, diagnostics = select_location(candidates, considered)
    pixels = paste(novel_pixels, patch, location)

    provenance = {
        "mode": "cbpn",
        "pairing_rank": pair.pairing_rank,
        "base_image_id": base_record.image_id,
        "novel_image_id": novel_record.image_id,
        "category": pair.category_name,
        "sampled_scale": sampled,
        "scale": scale,
        "rescued": rescued,
        "location": location.as_corners(),
        "fp_source_box": fp_boxes[0].as_corners(),
        **diagnostics,
    }
    return CompositeRecord(
        composite_of=pair,
        pixels=pixels,
        width=novel_record.width,
        height=novel_record.height,
        annotations=novel_record.annotations,
        provenance=provenance,
    )


def compose_addition(selected: Sequence[ImageRecord]) -> list[ImageRecord]:
    """Ablation: pass selected base images through unmodified."""
    return list(selected)
