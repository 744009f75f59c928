"""End-to-end run: mine -> select -> score/remove -> match -> compose -> merge.

Inputs are never mutated; outputs land in a fresh directory, staged under a
temp directory first so a failed run never leaves a torn dataset. The run
manifest records the config snapshot, audits, and file digests.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw

from . import coco
from .compositor import (
    ComposeParams,
    CompositeRecord,
    compose_addition,
    compose_cbpn,
    compose_cnpb,
    crop_instance,
    load_pixels,
    save_pixels,
)
from .datasets import BASE, NOVEL, Annotation, Category, Dataset, ImageRecord
from .detections import FpIndex, find_fp_images, fp_report, parse_detections
from .errors import CnpbError, ConfigError, PipelineError, ValidationError
from .geometry import Box
from .scoring import ScoreRecord, load_scores, request_scores
from .selection import (
    SelectionConfig,
    SelectionPlan,
    build_candidates,
    match_pairs,
    plan_from_json,
    plan_to_json,
)

MODES = ("cnpb", "cbpn", "addition")
DEFAULT_REPORT_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class PipelineConfig:
    base_annotations: str
    base_images: str
    novel_annotations: str
    novel_images: str
    detections: str
    output: str
    scores: Optional[str] = None
    scoring_endpoint: Optional[str] = None
    mode: str = "cnpb"
    seed: int = 0
    report_thresholds: tuple[float, ...] = DEFAULT_REPORT_THRESHOLDS
    selection: SelectionConfig = SelectionConfig()
    compose: ComposeParams = ComposeParams()
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.report_thresholds:
            raise ConfigError("report_thresholds must be non-empty")


def default_config_dict() -> dict:
    """Default configuration with the pipeline's standard constants."""
    return {
        "paths": {
            "base_annotations": "",
            "base_images": "",
            "novel_annotations": "",
            "novel_images": "",
            "detections": "",
            "scores": "",
            "output": "",
        },
        "scoring_endpoint": None,
        "mode": "cnpb",
        "seed": 0,
        "report_thresholds": [0.5, 0.6, 0.7, 0.8, 0.9],
        "selection": {
            "fp_threshold": 0.8,
            "per_category_cap": 3,
            "removal_cutoff": 0.5,
            "combination": "minority",
            "no_fp": False,
            "no_sc": False,
            "no_remove": False,
            "cap_axis": "novel",
        },
        "compose": {
            "resize_lo": 0.2,
            "resize_hi": 0.5,
            "candidate_count": 1000,
        },
        "workers": 1,
    }


def config_from_dict(doc: dict) -> PipelineConfig:
    try:
        paths = doc["paths"]
        sel = doc.get("selection", {})
        comp = doc.get("compose", {})
        seed = int(doc.get("seed", 0))
        return PipelineConfig(
            base_annotations=paths["base_annotations"],
            base_images=paths["base_images"],
            novel_annotations=paths["novel_annotations"],
            novel_images=paths["novel_images"],
            detections=paths["detections"],
            output=paths["output"],
            scores=paths.get("scores") or None,
            scoring_endpoint=doc.get("scoring_endpoint"),
            mode=doc.get("mode", "cnpb"),
            seed=seed,
            report_thresholds=tuple(doc.get("report_thresholds", DEFAULT_REPORT_THRESHOLDS)),
            selection=SelectionConfig(
                fp_threshold=sel.get("fp_threshold", 0.8),
                per_category_cap=sel.get("per_category_cap", 3),
                removal_cutoff=sel.get("removal_cutoff", 0.5),
                combination=sel.get("combination", "minority"),
                no_fp=sel.get("no_fp", False),
                no_sc=sel.get("no_sc", False),
                no_remove=sel.get("no_remove", False),
                cap_axis=sel.get("cap_axis", "novel"),
                rng_seed=seed,
            ),
            compose=ComposeParams(
                resize_lo=comp.get("resize_lo", 0.2),
                resize_hi=comp.get("resize_hi", 0.5),
                candidate_count=comp.get("candidate_count", 1000),
                rng_seed=seed,
            ),
            workers=int(doc.get("workers", 1)),
        )
    except (KeyError, TypeError) as e:
        raise ConfigError(f"bad config document: {e}") from e


def config_to_dict(config: PipelineConfig) -> dict:
    return {
        "paths": {
            "base_annotations": config.base_annotations,
            "base_images": config.base_images,
            "novel_annotations": config.novel_annotations,
            "novel_images": config.novel_images,
            "detections": config.detections,
            "scores": config.scores or "",
            "output": config.output,
        },
        "scoring_endpoint": config.scoring_endpoint,
        "mode": config.mode,
        "seed": config.seed,
        "report_thresholds": list(config.report_thresholds),
        "selection": {
            "fp_threshold": config.selection.fp_threshold,
            "per_category_cap": config.selection.per_category_cap,
            "removal_cutoff": config.selection.removal_cutoff,
            "combination": config.selection.combination,
            "no_fp": config.selection.no_fp,
            "no_sc": config.selection.no_sc,
            "no_remove": config.selection.no_remove,
            "cap_axis": config.selection.cap_axis,
        },
        "compose": {
            "resize_lo": config.compose.resize_lo,
            "resize_hi": config.compose.resize_hi,
            "candidate_count": config.compose.candidate_count,
        },
        "workers": config.workers,
    }


def _read_text(path: str, stage: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise PipelineError(stage, f"cannot read {path}: {e}") from e


def load_inputs(config: PipelineConfig) -> tuple[Dataset, Dataset, list, list[Category]]:
    """Load base/novel datasets and detections; categories get their splits here."""
    try:
        base_raw = coco.parse_coco(_read_text(config.base_annotations, "load"))
        novel_raw = coco.parse_coco(_read_text(config.novel_annotations, "load"))
    except CnpbError as e:
        if isinstance(e, PipelineError):
            raise
        raise PipelineError("load", str(e)) from e

    base_cats = tuple(replace(c, split=BASE) for c in base_raw.categories)
    novel_cats = tuple(replace(c, split=NOVEL) for c in novel_raw.categories)
    overlap = {c.name for c in base_cats} & {c.name for c in novel_cats}
    if overlap:
        raise PipelineError("load", f"categories in both base and novel sets: {sorted(overlap)}")
    id_overlap = {c.id for c in base_cats} & {c.id for c in novel_cats}
    if id_overlap:
        raise PipelineError("load", f"category ids shared across splits: {sorted(id_overlap)}")

    base = Dataset(images=base_raw.images, categories=base_cats)
    novel = Dataset(
        images=novel_raw.images, categories=novel_cats, shot_count=novel_raw.shot_count
    )
    categories = list(base_cats) + list(novel_cats)
    try:
        dets = parse_detections(_read_text(config.detections, "load"), base, categories)
    except CnpbError as e:
        if isinstance(e, PipelineError):
            raise
        raise PipelineError("load", str(e)) from e
    return base, novel, dets, categories


def obtain_scores(
    config: PipelineConfig, base: Dataset, novel: Dataset, index: FpIndex
) -> list[ScoreRecord]:
    """Scores for FP crops: sidecar file when given, else the scoring service."""
    if config.selection.no_remove:
        return []
    if config.scores:
        return load_scores(_read_text(config.scores, "score"), novel.categories)
    if not config.scoring_endpoint:
        raise PipelineError(
            "score", "removal needs a score sidecar file or a scoring endpoint"
        )
    by_image = base.image_by_id()
    crops = []
    for hit in index.hits:
        rec = by_image[hit.image_id]
        pixels = load_pixels(Path(config.base_images) / (rec.pixel_source or ""))
        patch = crop_instance(pixels, hit.fp_box, image_id=hit.image_id)
        crops.append((hit.image_id, hit.fp_box, patch.pixels))
    if not crops:
        return []
    return request_scores(config.scoring_endpoint, crops, novel.categories)


def composite_id(pair, seed: int) -> str:
    """Stable composite image id derived from the pair and the run seed."""
    payload = json.dumps(
        {
            "novel_image_id": pair.novel_image_id,
            "novel_ann_index": pair.novel_ann_index,
            "category": pair.category_name,
            "base_image_id": pair.base_image_id,
            "pairing_rank": pair.pairing_rank,
            "seed": seed,
        },
        sort_keys=True,
    )
    return "comp-" + hashlib.sha256(payload.encode()).hexdigest()[:12]


def compose_plan(
    plan: SelectionPlan,
    config: PipelineConfig,
    base: Dataset,
    novel: Dataset,
) -> list[CompositeRecord]:
    """Run the configured composition mode over every pair in the plan."""
    base_by_id = base.image_by_id()
    novel_by_id = novel.image_by_id()
    compose_fn = compose_cnpb if config.mode == "cnpb" else compose_cbpn

    def one(pair) -> CompositeRecord:
        base_rec = base_by_id[pair.base_image_id]
        novel_rec = novel_by_id[pair.novel_image_id]
        base_px = load_pixels(Path(config.base_images) / (base_rec.pixel_source or ""))
        novel_px = load_pixels(Path(config.novel_images) / (novel_rec.pixel_source or ""))
        return compose_fn(pair, config.compose, base_rec, base_px, novel_rec, novel_px)

    if config.workers == 1:
        return [one(p) for p in plan.pairs]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(one, plan.pairs))


def merge_datasets(
    fewshot: Dataset,
    composites: Sequence[CompositeRecord],
    categories: Sequence[Category],
    seed: int = 0,
) -> Dataset:
    """Append composite images to the few-shot set with derived unique ids."""
    images = list(fewshot.images)
    seen = {img.image_id for img in images}
    for comp in composites:
        cid = composite_id(comp.composite_of, seed)
        if cid in seen:
            raise PipelineError("merge", f"composite id collision: {cid}")
        seen.add(cid)
        images.append(
            ImageRecord(
                image_id=cid,
                width=comp.width,
                height=comp.height,
                pixel_source=f"{cid}.png",
                annotations=comp.annotations,
            )
        )
    return Dataset(images=tuple(images), categories=tuple(categories))


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_pipeline(config: PipelineConfig, plan: Optional[SelectionPlan] = None) -> dict:
    """Execute the full pipeline and write the output dataset; returns the manifest."""
    out_dir = Path(config.output)
    if out_dir.exists():
        raise PipelineError("output", f"output directory {out_dir} already exists")
    out_dir.parent.mkdir(parents=True, exist_ok=True)

    base, novel, dets, categories = load_inputs(config)

    try:
        report = fp_report(base, dets, list(config.report_thresholds))
    except CnpbError as e:
        raise PipelineError("report", str(e)) from e

    try:
        index = find_fp_images(base, dets, config.selection.fp_threshold)
    except CnpbError as e:
        raise PipelineError("mine", str(e)) from e

    if plan is None:
        try:
            scores = obtain_scores(config, base, novel, index)
            candidates, cand_audit = build_candidates(
                config.selection, index, base, novel, scores
            )
            plan = match_pairs(novel, candidates, config.selection, index)
            plan.audit["selection"] = cand_audit
        except PipelineError:
            raise
        except CnpbError as e:
            raise PipelineError("select", str(e)) from e

    staging = Path(
        tempfile.mkdtemp(prefix=f".{out_dir.name}.partial-", dir=out_dir.parent)
    )
    try:
        images_dir = staging / "images"
        prov_dir = staging / "provenance"
        images_dir.mkdir()
        prov_dir.mkdir()

        composites: list[CompositeRecord] = []
        addition_records: list[ImageRecord] = []
        if config.mode in ("cnpb", "cbpn"):
            try:
                composites = compose_plan(plan, config, base, novel)
            except PipelineError:
                raise
            except CnpbError as e:
                raise PipelineError("compose", str(e)) from e
        else:
            base_by_id = base.image_by_id()
            selected_ids = sorted({p.base_image_id for p in plan.pairs})
            addition_records = compose_addition([base_by_id[i] for i in selected_ids])

        # Few-shot originals are carried over unmodified.
        merged_images = []
        for img in novel.images:
            src = Path(config.novel_images) / (img.pixel_source or "")
            dst_name = Path(img.pixel_source or img.image_id).name
            shutil.copyfile(src, images_dir / dst_name)
            merged_images.append(replace(img, pixel_source=dst_name))
        fewshot = Dataset(
            images=tuple(merged_images),
            categories=novel.categories,
            shot_count=novel.shot_count,
        )

        for rec in addition_records:
            src = Path(config.base_images) / (rec.pixel_source or "")
            dst_name = f"add-{Path(rec.pixel_source or rec.image_id).name}"
            shutil.copyfile(src, images_dir / dst_name)

        merged = merge_datasets(fewshot, composites, categories, config.seed)
        if addition_records:
            extra = tuple(
                replace(
                    rec,
                    image_id=f"add-{rec.image_id}",
                    pixel_source=f"add-{Path(rec.pixel_source or rec.image_id).name}",
                )
                for rec in addition_records
            )
            merged = Dataset(images=merged.images + extra, categories=merged.categories)

        emitted = []
        for comp in composites:
            cid = composite_id(comp.composite_of, config.seed)
            save_pixels(comp.pixels, images_dir / f"{cid}.png")
            (prov_dir / f"{cid}.json").write_text(
                json.dumps(comp.provenance, indent=2, sort_keys=True)
            )
            emitted.append(cid)

        (staging / "annotations.json").write_text(coco.write_coco(merged))
        (staging / "plan.json").write_text(plan_to_json(plan))
        (staging / "fp_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))

        digests = {}
        for path in sorted(staging.rglob("*")):
            if path.is_file():
                digests[str(path.relative_to(staging))] = _sha256(path)

        manifest = {
            "config": config_to_dict(config),
            "seed": config.seed,
            "mode": config.mode,
            "audit": plan.audit,
            "composites": emitted,
            "image_count": len(merged.images),
            "files": digests,
        }
        (staging / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        os.replace(staging, out_dir)
        return manifest
    except Exception:
        # Partial outputs stay quarantined in the staging directory.
        raise


def validate_run(config: PipelineConfig) -> list[str]:
    """Check every referenced document against its invariants; returns problems."""
    problems = []
    try:
        base, novel, dets, categories = load_inputs(config)
    except CnpbError as e:
        return [str(e)]
    if config.scores:
        try:
            load_scores(_read_text(config.scores, "validate"), novel.categories)
        except CnpbError as e:
            problems.append(f"scores: {e}")
    out_dir = Path(config.output)
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        for rel, digest in manifest.get("files", {}).items():
            p = out_dir / rel
            if not p.exists():
                problems.append(f"output: missing file {rel}")
            elif _sha256(p) != digest:
                problems.append(f"output: digest mismatch for {rel}")
        try:
            coco.parse_coco((out_dir / "annotations.json").read_text())
        except CnpbError as e:
            problems.append(f"output annotations: {e}")
    return problems


def render_preview(
    pixels: np.ndarray,
    gt_boxes: Sequence[Box],
    new_box: Optional[Box],
    fp_boxes: Sequence[Box],
) -> Image.Image:
    """Draw ground truth (green), the pasted box (red), and FP boxes (yellow)."""
    im = Image.fromarray(pixels).convert("RGB")
    draw = ImageDraw.Draw(im)
    for b in gt_boxes:
        draw.rectangle(b.as_corners(), outline=(0, 200, 0), width=2)
    for b in fp_boxes:
        draw.rectangle(b.as_corners(), outline=(230, 210, 0), width=2)
    if new_box is not None:
        draw.rectangle(new_box.as_corners(), outline=(220, 0, 0), width=2)
    return im
