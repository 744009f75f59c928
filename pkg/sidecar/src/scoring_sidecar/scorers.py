"""Scorer backends: a deterministic stub and an optional CLIP-style model.

Both return per-prompt scores softmax-normalized over the request's prompt
set, so scores are in [0, 1] and sum to 1.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
from PIL import Image


class Scorer(Protocol):
    def __call__(self, image: Image.Image, prompts: Sequence[str]) -> dict[str, float]: ...


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


class StubScorer:
    """Fixed lookup-table scorer for integration tests without model weights.

    Logits come from the table when a prompt is listed; otherwise from a
    stable digest of (image bytes, prompt), so responses are deterministic.
    """

    def __init__(self, table: Optional[dict[str, float]] = None):
        self.table = table or {}

    @classmethod
    def from_file(cls, path: str | Path) -> "StubScorer":
        return cls(json.loads(Path(path).read_text()))

    def __call__(self, image: Image.Image, prompts: Sequence[str]) -> dict[str, float]:
        image_digest = hashlib.sha256(image.tobytes()).digest()
        logits = []
        for p in prompts:
            if p in self.table:
                logits.append(float(self.table[p]))
            else:
                h = hashlib.sha256(image_digest + p.encode()).digest()
                logits.append(int.from_bytes(h[:4], "big") / 2**32)
        scores = softmax(np.array(logits, dtype=np.float64))
        return {p: float(s) for p, s in zip(prompts, scores)}


class ClipScorer:
    """Wraps a CLIP checkpoint; loaded once, deterministic for a fixed checkpoint."""

    def __init__(self, checkpoint: str = "openai/clip-vit-base-patch32"):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self.model = CLIPModel.from_pretrained(checkpoint)
        self.model.eval()
        self.processor = CLIPProcessor.from_pretrained(checkpoint)

    def __call__(self, image: Image.Image, prompts: Sequence[str]) -> dict[str, float]:
        with self._torch.no_grad():
            inputs = self.processor(
                text=list(prompts), images=image, return_tensors="pt", padding=True
            )
            logits = self.model(**inputs).logits_per_image[0]
            scores = logits.softmax(dim=-1).tolist()
        return {p: float(s) for p, s in zip(prompts, scores)}
