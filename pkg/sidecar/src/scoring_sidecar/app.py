"""HTTP service: POST /score scores an image crop against prompt texts.

Wire protocol: request = {"image": base64 payload, "prompts": [text, ...]};
response = {"scores": {prompt: value}} with values softmaxed over the prompt
set. Bad payloads get 400, scorer failures 500. Stateless; the scorer is
loaded once at startup.
"""

from __future__ import annotations

import base64
import binascii
import io
import os
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from .scorers import ClipScorer, Scorer, StubScorer


class ScoreRequest(BaseModel):
    image: str
    prompts: list[str]


def scorer_from_env() -> Scorer:
    mode = os.environ.get("SIDECAR_MODE", "stub")
    if mode == "stub":
        table = os.environ.get("SIDECAR_STUB_TABLE")
        return StubScorer.from_file(table) if table else StubScorer()
    if mode == "clip":
        return ClipScorer(os.environ.get("SIDECAR_CHECKPOINT", "openai/clip-vit-base-patch32"))
    raise ValueError(f"unknown SIDECAR_MODE {mode!r}")


def create_app(scorer: Optional[Scorer] = None) -> FastAPI:
    app = FastAPI(title="scoring-sidecar")
    app.state.scorer = scorer if scorer is not None else scorer_from_env()

    @app.exception_handler(RequestValidationError)
    async def bad_payload(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.post("/score")
    async def score(req: ScoreRequest):
        if not req.prompts:
            return JSONResponse(status_code=400, content={"detail": "prompts must be non-empty"})
        try:
            raw = base64.b64decode(req.image, validate=True)
            image = Image.open(io.BytesIO(raw)).convert("RGB")
        except (binascii.Error, UnidentifiedImageError, OSError, ValueError):
            return JSONResponse(status_code=400, content={"detail": "undecodable image payload"})
        try:
            scores = app.state.scorer(image, req.prompts)
        except Exception as e:  # model failure
            return JSONResponse(status_code=500, content={"detail": f"scorer failed: {e}"})
        return {"scores": scores}

    return app


def serve():
    import uvicorn

    port = int(os.environ.get("SIDECAR_PORT", "8800"))
    uvicorn.run(create_app(), host="0.0.0.0", port=port)


if __name__ == "__main__":
    serve()
