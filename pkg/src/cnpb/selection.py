"""Multi-step base-image selection and novel/base pairing.

Step order: threshold mining -> per-category cap -> bad-case removal ->
same-category pairing with minority or majority combination. Removal may
shrink a category below the cap; no replacements are drawn.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .datasets import Dataset, ImageRecord
from .detections import FpIndex
from .errors import ConfigError, ValidationError
from .geometry import Box
from .scoring import ScoreRecord, is_bad_case

# Candidate lists per novel category name, each a list of base image ids.
Candidates = dict[str, list[str]]


@dataclass(frozen=True)
class SelectionConfig:
    fp_threshold: float = 0.8
    per_category_cap: int = 3
    removal_cutoff: float = 0.5
    combination: str = "minority"  # minority | majority
    no_fp: bool = False
    no_sc: bool = False
    no_remove: bool = False
    cap_axis: str = "novel"  # novel | base (literal reading, experimentation only)
    rng_seed: int = 0

    def __post_init__(self):
        if self.per_category_cap < 1:
            raise ConfigError("per_category_cap must be >= 1")
        for name in ("fp_threshold", "removal_cutoff"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} {v} outside [0, 1]")
        if self.combination not in ("minority", "majority"):
            raise ConfigError(f"unknown combination mode {self.combination!r}")
        if self.cap_axis not in ("novel", "base"):
            raise ConfigError(f"unknown cap_axis {self.cap_axis!r}")


@dataclass(frozen=True)
class PastePair:
    novel_image_id: str
    novel_ann_index: int
    category_name: str
    base_image_id: str
    fp_boxes: tuple[Box, ...]
    pairing_rank: int


@dataclass(frozen=True)
class SelectionPlan:
    pairs: tuple[PastePair, ...]
    audit: dict

    def pair_count(self) -> int:
        return len(self.pairs)


def cap_per_category(
    index: FpIndex, cap: int, rng: random.Random
) -> Candidates:
    """Randomly keep at most `cap` distinct FP images per novel category."""
    if cap < 1:
        raise ConfigError("cap must be >= 1")
    out: Candidates = {}
    for name in sorted(index.by_category()):
        ids = index.fp_image_ids(name)
        if len(ids) <= cap:
            out[name] = list(ids)
        else:
            out[name] = sorted(rng.sample(ids, cap))
    return out


def apply_removal(
    candidates: Candidates,
    index: FpIndex,
    scores: Sequence[ScoreRecord],
    cutoff: float,
) -> Candidates:
    """Drop base images with any bad-case FP crop from every category's list."""
    by_key = {r.key(): r for r in scores}
    hits_by_image = index.by_image()
    bad_images: set[str] = set()
    candidate_images = {img for ids in candidates.values() for img in ids}
    for image_id in sorted(candidate_images):
        for hit in hits_by_image.get(image_id, []):
            b = hit.fp_box
            key = (image_id, (b.x_min, b.y_min, b.x_max, b.y_max))
            record = by_key.get(key)
            if record is None:
                raise ValidationError(
                    f"no score record for FP crop {b.as_corners()} on image {image_id!r}"
                )
            if is_bad_case(record, cutoff):
                bad_images.add(image_id)
                break
    return {
        name: [i for i in ids if i not in bad_images] for name, ids in candidates.items()
    }


def _novel_instances(novel: Dataset) -> dict[str, list[tuple[ImageRecord, int]]]:
    """Novel instances grouped by category, in (image_id, annotation index) order."""
    groups: dict[str, list[tuple[ImageRecord, int]]] = {}
    for img in sorted(novel.images, key=lambda r: r.image_id):
        for idx, ann in enumerate(img.annotations):
            groups.setdefault(ann.category_name, []).append((img, idx))
    return groups


def build_candidates(
    config: SelectionConfig,
    index: FpIndex,
    base: Dataset,
    novel: Dataset,
    scores: Sequence[ScoreRecord] = (),
) -> tuple[Candidates, dict]:
    """Run cap and removal, or the no_fp ablation, yielding per-category candidates."""
    rng = random.Random(f"{config.rng_seed}:cap")
    audit: dict = {}
    novel_names = sorted(c.name for c in novel.categories)

    if config.no_fp:
        # Ablation: ignore the FP index, draw uniformly from the whole base set.
        all_ids = sorted(img.image_id for img in base.images)
        candidates: Candidates = {}
        for name in novel_names:
            k = min(config.per_category_cap, len(all_ids))
            candidates[name] = sorted(rng.sample(all_ids, k))
            audit[name] = {
                "mined": len(all_ids),
                "capped": len(candidates[name]),
                "removed": 0,
            }
        return candidates, audit

    if config.cap_axis == "base":
        # Literal reading: cap FP images per base category occurring in them;
        # each novel category then keeps the selected images carrying its FP.
        by_image = base.image_by_id()
        by_base_cat: dict[str, set[str]] = {}
        for img_id in index.fp_image_ids():
            for cat in {a.category_name for a in by_image[img_id].annotations}:
                by_base_cat.setdefault(cat, set()).add(img_id)
        selected: set[str] = set()
        for cat in sorted(by_base_cat):
            ids = sorted(by_base_cat[cat])
            selected.update(rng.sample(ids, min(config.per_category_cap, len(ids))))
        candidates = {
            name: [i for i in index.fp_image_ids(name) if i in selected]
            for name in novel_names
        }
    else:
        capped = cap_per_category(index, config.per_category_cap, rng)
        candidates = {name: capped.get(name, []) for name in novel_names}
    mined = {name: len(index.fp_image_ids(name)) for name in novel_names}

    if config.no_remove:
        removed_counts = {name: 0 for name in novel_names}
    else:
        filtered = apply_removal(candidates, index, scores, config.removal_cutoff)
        removed_counts = {
            name: len(candidates[name]) - len(filtered[name]) for name in novel_names
        }
        candidates = filtered

    for name in novel_names:
        audit[name] = {
            "mined": mined[name],
            "capped": len(candidates[name]) + removed_counts[name],
            "removed": removed_counts[name],
        }
    return candidates, audit


def match_pairs(
    novel: Dataset,
    candidates: Candidates,
    config: SelectionConfig,
    index: Optional[FpIndex] = None,
) -> SelectionPlan:
    """Pair novel instances with candidate base images.

    Minority mode keeps min(K, n_b) pairs per category (each base image used
    once, surplus novel instances dropped in seeded order); majority mode
    yields max(K, n_b) pairs with the smaller side repeated cyclically.
    """
    rng = random.Random(f"{config.rng_seed}:match")
    hits_by_image = index.by_image() if index is not None else {}
    instances = _novel_instances(novel)

    if config.no_sc:
        pooled = sorted({img for ids in candidates.values() for img in ids})

    pairs: list[PastePair] = []
    audit: dict = {"per_category": {}, "combination": config.combination}
    rank = 0
    for name in sorted(c.name for c in novel.categories):
        cat_instances = instances.get(name, [])
        cat_candidates = pooled if config.no_sc else candidates.get(name, [])
        k = len(cat_instances)
        n_b = len(cat_candidates)
        entry = {"novel_instances": k, "base_candidates": n_b}
        if k == 0 or n_b == 0:
            entry["matched"] = 0
            entry["pairs"] = 0
            audit["per_category"][name] = entry
            continue

        order = list(range(k))
        rng.shuffle(order)
        if config.combination == "minority":
            m = min(k, n_b)
            kept = sorted(order[:m])  # drop the shuffled tail, keep stable order
            chosen = [(cat_instances[i], cat_candidates[j]) for j, i in enumerate(kept)]
        else:
            m = max(k, n_b)
            chosen = [
                (cat_instances[i % k], cat_candidates[i % n_b]) for i in range(m)
            ]

        for (img, ann_idx), base_id in chosen:
            fp_boxes = tuple(h.fp_box for h in hits_by_image.get(base_id, []))
            if not config.no_sc and not config.no_fp:
                cat_hits = [
                    h for h in hits_by_image.get(base_id, []) if h.novel_category.name == name
                ]
                if not cat_hits:
                    raise ValidationError(
                        f"SC violated: base image {base_id!r} has no FP of {name!r}"
                    )
            pairs.append(
                PastePair(
                    novel_image_id=img.image_id,
                    novel_ann_index=ann_idx,
                    category_name=name,
                    base_image_id=base_id,
                    fp_boxes=fp_boxes,
                    pairing_rank=rank,
                )
            )
            rank += 1
        entry["matched"] = len({b for _, b in chosen})
        entry["pairs"] = len(chosen)
        audit["per_category"][name] = entry

    audit["total_pairs"] = len(pairs)
    return SelectionPlan(pairs=tuple(pairs), audit=audit)


def plan_to_json(plan: SelectionPlan) -> str:
    doc = {
        "pairs": [
            {
                "novel_image_id": p.novel_image_id,
                "novel_ann_index": p.novel_ann_index,
                "category_name": p.category_name,
                "base_image_id": p.base_image_id,
                "fp_boxes": [b.as_corners() for b in p.fp_boxes],
                "pairing_rank": p.pairing_rank,
            }
            for p in plan.pairs
        ],
        "audit": plan.audit,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def plan_from_json(text: str) -> SelectionPlan:
    doc = json.loads(text)
    pairs = tuple(
        PastePair(
            novel_image_id=p["novel_image_id"],
            novel_ann_index=p["novel_ann_index"],
            category_name=p["category_name"],
            base_image_id=p["base_image_id"],
            fp_boxes=tuple(Box(*c) for c in p["fp_boxes"]),
            pairing_rank=p["pairing_rank"],
        )
        for p in doc["pairs"]
    )
    return SelectionPlan(pairs=pairs, audit=doc["audit"])
