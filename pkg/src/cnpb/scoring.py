"""Zero-shot image-text scores for candidate FP crops.

Scores come either from a precomputed sidecar file or from the scoring
service; the two paths produce interchangeable ScoreRecord lists.
"""

from __future__ import annotations

import base64
import io
import json
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import httpx
import numpy as np
from PIL import Image

from .datasets import NOVEL, Category
from .errors import ContractError, ParseError, ProtocolError, TransportError, ValidationError
from .geometry import Box


@dataclass(frozen=True)
class ScoreRecord:
    image_id: str
    fp_box: Box
    scores: tuple[tuple[str, float], ...]  # (novel category name, score), sorted by name

    def score_map(self) -> dict[str, float]:
        return dict(self.scores)

    def max_score(self) -> float:
        if not self.scores:
            raise ContractError("empty score map")
        return max(v for _, v in self.scores)

    def key(self) -> tuple[str, tuple[float, float, float, float]]:
        b = self.fp_box
        return (self.image_id, (b.x_min, b.y_min, b.x_max, b.y_max))


def _make_record(
    image_id: str, box: Box, raw_scores: dict, novel_names: set[str], where: str
) -> ScoreRecord:
    missing = novel_names - set(raw_scores)
    if missing:
        raise ValidationError(f"{where}: missing novel category scores {sorted(missing)}")
    extra = set(raw_scores) - novel_names
    if extra:
        raise ValidationError(f"{where}: scores for non-novel categories {sorted(extra)}")
    pairs = []
    for name in sorted(novel_names):
        v = float(raw_scores[name])
        if not (0.0 <= v <= 1.0):
            raise ValidationError(f"{where}: score {v} for {name!r} outside [0, 1]")
        pairs.append((name, v))
    return ScoreRecord(image_id=image_id, fp_box=box, scores=tuple(pairs))


def build_prompt(category: Category) -> str:
    """Text prompt for a novel category: the article "a" plus the name."""
    if category.split != NOVEL:
        raise ContractError(f"prompts are built for novel categories only, got {category.name!r}")
    return f"a {category.name}"


def load_scores(document: str, novel_categories: Sequence[Category]) -> list[ScoreRecord]:
    """Parse a sidecar score document: array of {image_id, bbox, scores}."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON at line {e.lineno} col {e.colno}: {e.msg}") from e
    if not isinstance(doc, list):
        raise ParseError("score sidecar must be a JSON array")
    novel_names = {c.name for c in novel_categories}
    out = []
    for i, entry in enumerate(doc):
        where = f"scores[{i}]"
        try:
            image_id = str(entry["image_id"])
            bbox = entry["bbox"]
            raw_scores = entry["scores"]
        except (KeyError, TypeError) as e:
            raise ParseError(f"{where}: {e}") from e
        if not (isinstance(bbox, list) and len(bbox) == 4):
            raise ParseError(f"{where}: bbox must be [x_min, y_min, x_max, y_max]")
        box = Box(*(float(v) for v in bbox))
        out.append(_make_record(image_id, box, raw_scores, novel_names, where))
    return out


def _encode_png(pixels: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def request_scores(
    endpoint: str,
    crops: Sequence[tuple[str, Box, np.ndarray]],
    novel_categories: Sequence[Category],
    *,
    client: Optional[httpx.Client] = None,
    retries: int = 3,
    backoff: float = 0.2,
) -> list[ScoreRecord]:
    """Score crops against novel-category prompts via the /score service.

    crops are (image_id, fp_box, RGB pixel array); lossless PNG payloads keep
    scores independent of compression. Results are order-preserving.
    """
    if not crops:
        raise ContractError("crops must be non-empty")
    novel = sorted(novel_categories, key=lambda c: c.name)
    prompts = [build_prompt(c) for c in novel]
    prompt_to_name = {build_prompt(c): c.name for c in novel}
    novel_names = {c.name for c in novel}

    own_client = client is None
    http = client or httpx.Client()
    url = endpoint.rstrip("/") + "/score"
    try:
        out = []
        for image_id, box, pixels in crops:
            payload = {"image": _encode_png(pixels), "prompts": prompts}
            resp = None
            last_exc: Exception | None = None
            for attempt in range(retries):
                try:
                    resp = http.post(url, json=payload)
                    break
                except httpx.HTTPError as e:
                    last_exc = e
                    if attempt < retries - 1:
                        time.sleep(backoff * (attempt + 1))
            if resp is None:
                raise TransportError(
                    f"scoring service unreachable after {retries} attempts: {last_exc}"
                )
            if resp.status_code != 200:
                raise ProtocolError(f"scoring service returned HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                body = resp.json()
                raw = body["scores"]
            except (ValueError, KeyError, TypeError) as e:
                raise ProtocolError(f"malformed scoring response: {e}") from e
            try:
                by_name = {prompt_to_name[p]: v for p, v in raw.items()}
            except KeyError as e:
                raise ProtocolError(f"response scored unknown prompt {e}") from None
            try:
                out.append(
                    _make_record(image_id, box, by_name, novel_names, f"crop {image_id!r}")
                )
            except ValidationError as e:
                raise ProtocolError(str(e)) from e
        return out
    finally:
        if own_client:
            http.close()


def is_bad_case(record: ScoreRecord, cutoff: float = 0.5) -> bool:
    """True when the maximum novel-category score strictly exceeds the cutoff."""
    if not (0.0 <= cutoff <= 1.0):
        raise ContractError(f"cutoff {cutoff} outside [0, 1]")
    return record.max_score() > cutoff
