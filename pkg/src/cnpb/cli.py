"""Command-line interface: each pipeline stage is a subcommand."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import coco
from .compositor import load_pixels
from .errors import CnpbError
from .geometry import Box
from .pipeline import (
    PipelineConfig,
    compose_plan,
    composite_id,
    config_from_dict,
    default_config_dict,
    load_inputs,
    obtain_scores,
    render_preview,
    run_pipeline,
    validate_run,
)
from .detections import find_fp_images, fp_report
from .selection import build_candidates, match_pairs, plan_from_json, plan_to_json


def _load_config(path: str, overrides: dict) -> PipelineConfig:
    doc = json.loads(Path(path).read_text())
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("mode", "seed", "workers", "scoring_endpoint", "report_thresholds"):
            doc[key] = value
        elif key == "output":
            doc.setdefault("paths", {})["output"] = value
        elif key in ("fp_threshold", "per_category_cap", "removal_cutoff", "combination",
                     "no_fp", "no_sc", "no_remove", "cap_axis"):
            doc.setdefault("selection", {})[key] = value
        elif key in ("resize_lo", "resize_hi", "candidate_count"):
            doc.setdefault("compose", {})[key] = value
    return config_from_dict(doc)


def _fail(e: CnpbError) -> None:
    raise click.ClickException(str(e))


def _thresholds(text: str | None) -> list[float] | None:
    if text is None:
        return None
    return [float(t) for t in text.split(",") if t.strip()]


config_option = click.option("--config", "config_path", required=True, type=click.Path(exists=True))
seed_option = click.option("--seed", type=int, default=None)
mode_option = click.option("--mode", type=click.Choice(["cnpb", "cbpn", "addition"]), default=None)
output_option = click.option("--output", type=click.Path(), default=None)


@click.group()
def main():
    """Dataset augmentation pipeline: mine FP images, select, and compose."""


@main.command("init-config")
@click.option("-o", "--out", type=click.Path(), default=None, help="Write to a file instead of stdout.")
def init_config(out):
    """Emit a default configuration document."""
    text = json.dumps(default_config_dict(), indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        click.echo(text)


@main.command("report-fp")
@config_option
@click.option("--thresholds", default=None, help="Comma-separated threshold sweep.")
@click.option("-o", "--out", type=click.Path(), default=None)
def report_fp(config_path, thresholds, out):
    """FP-ratio sweep over the base set at the given confidence thresholds."""
    try:
        overrides = {"report_thresholds": _thresholds(thresholds)}
        config = _load_config(config_path, overrides)
        base, novel, dets, _ = load_inputs(config)
        rows = fp_report(base, dets, list(config.report_thresholds))
    except CnpbError as e:
        _fail(e)
    if out:
        Path(out).write_text(json.dumps(rows, indent=2, sort_keys=True))
    click.echo(f"{'threshold':>10} {'fp_ratio':>10} {'fp_images':>10}")
    for row in rows:
        click.echo(
            f"{row['threshold']:>10.2f} {row['fp_ratio']:>10.4f} {row['fp_image_count']:>10d}"
        )


@main.command()
@config_option
@seed_option
@click.option("--fp-threshold", type=float, default=None)
@click.option("--cap", "per_category_cap", type=int, default=None)
@click.option("--removal-cutoff", type=float, default=None)
@click.option("--combination", type=click.Choice(["minority", "majority"]), default=None)
@click.option("--no-fp", is_flag=True, default=None)
@click.option("--no-sc", is_flag=True, default=None)
@click.option("--no-remove", is_flag=True, default=None)
@click.option("--cap-axis", type=click.Choice(["novel", "base"]), default=None)
@click.option("-o", "--out", type=click.Path(), required=True)
def select(config_path, seed, fp_threshold, per_category_cap, removal_cutoff,
           combination, no_fp, no_sc, no_remove, cap_axis, out):
    """Run mining, capping, removal, and pairing; write the selection plan."""
    try:
        config = _load_config(config_path, {
            "seed": seed,
            "fp_threshold": fp_threshold,
            "per_category_cap": per_category_cap,
            "removal_cutoff": removal_cutoff,
            "combination": combination,
            "no_fp": no_fp or None,
            "no_sc": no_sc or None,
            "no_remove": no_remove or None,
            "cap_axis": cap_axis,
        })
        base, novel, dets, _ = load_inputs(config)
        index = find_fp_images(base, dets, config.selection.fp_threshold)
        scores = obtain_scores(config, base, novel, index)
        candidates, cand_audit = build_candidates(config.selection, index, base, novel, scores)
        plan = match_pairs(novel, candidates, config.selection, index)
        plan.audit["selection"] = cand_audit
    except CnpbError as e:
        _fail(e)
    Path(out).write_text(plan_to_json(plan))
    click.echo(f"wrote plan with {plan.pair_count()} pairs to {out}")


@main.command()
@config_option
@seed_option
@click.option("--from-plan", "plan_path", type=click.Path(exists=True), required=True)
@click.option("-o", "--out", type=click.Path(), required=True)
def compose(config_path, seed, plan_path, out):
    """Compose every pair in a plan, writing images and provenance sidecars."""
    try:
        config = _load_config(config_path, {"seed": seed})
        plan = plan_from_json(Path(plan_path).read_text())
        base, novel, _, _ = load_inputs(config)
        composites = compose_plan(plan, config, base, novel)
    except CnpbError as e:
        _fail(e)
    out_dir = Path(out)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "provenance").mkdir(parents=True, exist_ok=True)
    from .compositor import save_pixels

    for comp in composites:
        cid = composite_id(comp.composite_of, config.seed)
        save_pixels(comp.pixels, out_dir / "images" / f"{cid}.png")
        (out_dir / "provenance" / f"{cid}.json").write_text(
            json.dumps(comp.provenance, indent=2, sort_keys=True)
        )
    click.echo(f"wrote {len(composites)} composites to {out}")


@main.command()
@config_option
@seed_option
@mode_option
@output_option
@click.option("--workers", type=int, default=None)
@click.option("--scoring-endpoint", envvar="CNPB_SCORING_ENDPOINT", default=None)
@click.option("--from-plan", "plan_path", type=click.Path(exists=True), default=None)
def build(config_path, seed, mode, output, workers, scoring_endpoint, plan_path):
    """Run the full pipeline and emit the merged fine-tuning dataset."""
    try:
        config = _load_config(config_path, {
            "seed": seed,
            "mode": mode,
            "output": output,
            "workers": workers,
            "scoring_endpoint": scoring_endpoint,
        })
        plan = plan_from_json(Path(plan_path).read_text()) if plan_path else None
        manifest = run_pipeline(config, plan)
    except CnpbError as e:
        _fail(e)
    click.echo(
        f"built {manifest['image_count']} images "
        f"({len(manifest['composites'])} composites) in {config.output}"
    )


@main.command()
@click.option("--run", "run_dir", type=click.Path(exists=True), required=True)
@click.option("--id", "image_id", required=True)
@click.option("-o", "--out", type=click.Path(), required=True)
def preview(run_dir, image_id, out):
    """Render an output image with GT, pasted, and FP boxes drawn."""
    run = Path(run_dir)
    try:
        dataset = coco.parse_coco((run / "annotations.json").read_text())
        rec = dataset.image_by_id().get(image_id)
        if rec is None:
            raise CnpbError(f"image id {image_id!r} not in run annotations")
        pixels = load_pixels(run / "images" / (rec.pixel_source or ""))
        prov_path = run / "provenance" / f"{image_id}.json"
        new_box = None
        fp_boxes = []
        gt_boxes = [a.box for a in rec.annotations]
        if prov_path.exists():
            prov = json.loads(prov_path.read_text())
            if prov.get("location"):
                new_box = Box(*prov["location"])
                gt_boxes = [b for b in gt_boxes if b != new_box]
            fp_boxes = [Box(*c) for c in prov.get("fp_boxes", [])]
        render_preview(pixels, gt_boxes, new_box, fp_boxes).save(out)
    except CnpbError as e:
        _fail(e)
    click.echo(f"wrote preview to {out}")


@main.command()
@config_option
def validate(config_path):
    """Check all referenced documents against their invariants."""
    try:
        config = _load_config(config_path, {})
        problems = validate_run(config)
    except CnpbError as e:
        _fail(e)
    if problems:
        for p in problems:
            click.echo(f"INVALID: {p}", err=True)
        sys.exit(1)
    click.echo("ok")


if __name__ == "__main__":
    main()
