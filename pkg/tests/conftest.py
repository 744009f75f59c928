"""Shared fixture builders: synthetic datasets, images, detections, scores."""

from __future__ import annotations

import json
import random
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from cnpb.datasets import Annotation, Category, Dataset, ImageRecord
from cnpb.geometry import Box


def pixel_grid_iou(a: Box, b: Box) -> float:
    """Brute-force IoU by counting unit grid cells; exact for integer boxes."""
    x0 = int(min(a.x_min, b.x_min))
    y0 = int(min(a.y_min, b.y_min))
    x1 = int(max(a.x_max, b.x_max))
    y1 = int(max(a.y_max, b.y_max))
    inter = 0
    area_a = 0
    area_b = 0
    for x in range(x0, x1):
        for y in range(y0, y1):
            in_a = a.x_min <= x < a.x_max and a.y_min <= y < a.y_max
            in_b = b.x_min <= x < b.x_max and b.y_min <= y < b.y_max
            inter += in_a and in_b
            area_a += in_a
            area_b += in_b
    union = area_a + area_b - inter
    return inter / union if union else 0.0


def random_dataset(rng: random.Random, n_images: int = 5, n_cats: int = 4) -> Dataset:
    """Random valid dataset for round-trip tests."""
    cats = tuple(Category(id=i + 1, name=f"cat{i}") for i in range(n_cats))
    images = []
    for i in range(n_images):
        w = rng.randint(40, 120)
        h = rng.randint(40, 120)
        anns = []
        for _ in range(rng.randint(0, 4)):
            x0 = rng.randint(0, w - 2)
            y0 = rng.randint(0, h - 2)
            x1 = rng.randint(x0 + 1, w)
            y1 = rng.randint(y0 + 1, h)
            anns.append(
                Annotation(
                    category_name=rng.choice(cats).name,
                    box=Box(float(x0), float(y0), float(x1), float(y1)),
                )
            )
        name = f"img{i:03d}.png"
        images.append(
            ImageRecord(
                image_id=name, width=w, height=h, pixel_source=name, annotations=tuple(anns)
            )
        )
    return Dataset(images=tuple(images), categories=cats)


BASE_NAMES = [f"base{i:02d}" for i in range(15)]
NOVEL_NAMES = [f"novel{i}" for i in range(5)]


def _write_image(path: Path, rng: np.random.Generator, w: int, h: int) -> None:
    pixels = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    Image.fromarray(pixels).save(path, format="PNG")


def build_fixture(root: Path, *, k: int = 3, n_base_images: int = 20, seed: int = 11) -> dict:
    """Synthetic VOC-style corpus: 15 base / 5 novel categories, K-shot novel set.

    Writes COCO annotation documents, PNG pixels, planted detector results,
    a score sidecar, and a pipeline config. Returns the path map.
    """
    rng = random.Random(seed)
    np_rng = np.random.default_rng(seed)
    base_img_dir = root / "base_images"
    novel_img_dir = root / "novel_images"
    base_img_dir.mkdir(parents=True)
    novel_img_dir.mkdir(parents=True)

    base_cats = [{"id": i + 1, "name": n} for i, n in enumerate(BASE_NAMES)]
    novel_cats = [{"id": 101 + i, "name": n} for i, n in enumerate(NOVEL_NAMES)]

    # Base images, each with 1-2 base-category boxes.
    base_images = []
    base_anns = []
    ann_id = 1
    for i in range(n_base_images):
        name = f"base{i:03d}.png"
        w, h = 96, 96
        _write_image(base_img_dir / name, np_rng, w, h)
        base_images.append({"id": name, "width": w, "height": h, "file_name": name})
        for _ in range(rng.randint(1, 2)):
            x = rng.randint(0, 60)
            y = rng.randint(0, 60)
            bw = rng.randint(8, 30)
            bh = rng.randint(8, 30)
            base_anns.append(
                {
                    "id": ann_id,
                    "image_id": name,
                    "category_id": rng.choice(base_cats)["id"],
                    "bbox": [x, y, bw, bh],
                    "area": bw * bh,
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    (root / "base.json").write_text(
        json.dumps({"images": base_images, "annotations": base_anns, "categories": base_cats})
    )

    # Novel K-shot set: one image per instance.
    novel_images = []
    novel_anns = []
    for ci, cat in enumerate(novel_cats):
        for s in range(k):
            name = f"novel{ci}_{s}.png"
            w, h = 80, 80
            _write_image(novel_img_dir / name, np_rng, w, h)
            novel_images.append({"id": name, "width": w, "height": h, "file_name": name})
            novel_anns.append(
                {
                    "id": ann_id,
                    "image_id": name,
                    "category_id": cat["id"],
                    "bbox": [10, 12, 40, 36],
                    "area": 40 * 36,
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    (root / "novel.json").write_text(
        json.dumps(
            {
                "images": novel_images,
                "annotations": novel_anns,
                "categories": novel_cats,
                "info": {"shot_count": k},
            }
        )
    )

    # Planted detections: each novel category gets FPs on a handful of base
    # images at scores straddling the default 0.8 threshold, plus ignored
    # base-category detections.
    detections = []
    fp_plan: dict[str, list[tuple[str, list[float]]]] = {}
    for ci, cat in enumerate(novel_cats):
        hits = []
        for j in range(4 + ci):
            img = base_images[(ci * 3 + j) % n_base_images]["id"]
            score = 0.85 + 0.01 * j if j < 4 else 0.5 + 0.05 * j
            bbox = [float(5 + 2 * j), float(6 + 2 * j), 20.0, 18.0]
            detections.append(
                {"image_id": img, "category_id": cat["id"], "bbox": bbox, "score": round(score, 4)}
            )
            if score > 0.8:
                hits.append((img, bbox))
        fp_plan[cat["name"]] = hits
    for i in range(6):
        detections.append(
            {
                "image_id": base_images[i]["id"],
                "category_id": base_cats[i]["id"],
                "bbox": [2.0, 2.0, 10.0, 10.0],
                "score": 0.99,
            }
        )
    (root / "detections.json").write_text(json.dumps(detections))

    # Score sidecar covering every planted FP box; one bad case per category
    # pattern: the first hit of novel0 is a bad case.
    scores = []
    for cname, hits in fp_plan.items():
        for hi, (img, bbox) in enumerate(hits):
            is_bad = cname == "novel0" and hi == 0
            record = {
                "image_id": img,
                "bbox": [bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3]],
                "scores": {
                    n: (0.9 if (is_bad and n == cname) else 0.1) for n in NOVEL_NAMES
                },
            }
            scores.append(record)
    (root / "scores.json").write_text(json.dumps(scores))

    config = {
        "paths": {
            "base_annotations": str(root / "base.json"),
            "base_images": str(base_img_dir),
            "novel_annotations": str(root / "novel.json"),
            "novel_images": str(novel_img_dir),
            "detections": str(root / "detections.json"),
            "scores": str(root / "scores.json"),
            "output": str(root / "out"),
        },
        "scoring_endpoint": None,
        "mode": "cnpb",
        "seed": 7,
        "report_thresholds": [0.5, 0.6, 0.7, 0.8, 0.9],
        "selection": {},
        "compose": {"candidate_count": 200},
        "workers": 1,
    }
    (root / "config.json").write_text(json.dumps(config))
    return {
        "root": root,
        "config": root / "config.json",
        "base": root / "base.json",
        "novel": root / "novel.json",
        "detections": root / "detections.json",
        "scores": root / "scores.json",
        "fp_plan": fp_plan,
    }


@pytest.fixture
def fixture_corpus(tmp_path):
    return build_fixture(tmp_path)
