"""HTTP inference service and the shared single-image prediction path.

The service is stateless: a request is decoded, resized to the model's
input, preprocessed, run in inference mode, and answered; nothing is
persisted (an optional audit log can mirror request checksums and top
predictions to an append-only JSONL file). The loaded model is immutable
and shared across concurrent requests.

Endpoints (JSON unless noted):
  GET  /v1/health   -> {"status": "ok"}
  GET  /v1/model    -> classes in canonical order, input size, weight checksum
  POST /v1/predict  -> body is raw PNG/JPEG bytes (Content-Type image/png
                       or image/jpeg); answers ranked probabilities
  errors            -> {"error": str, "code": str} with a 4xx/5xx status
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from .dataset import decode_image, preprocess_pixels, resize_bilinear
from .errors import ValidationError
from .model import ModelConfig, ModelGraph, forward, load_weights
from .tensor import Tensor

DEFAULT_PORT = 8080
DEFAULT_MAX_UPLOAD = 8 * 1024 * 1024
ALLOWED_CONTENT_TYPES = ("image/png", "image/jpeg")


def env_default(name: str, fallback):
    """DERM_-prefixed environment fallback for a CLI flag."""
    raw = os.environ.get(f"DERM_{name}")
    if raw is None:
        return fallback
    if isinstance(fallback, int):
        return int(raw)
    return raw


@dataclass(frozen=True)
class ModelBundle:
    """A loaded model plus its public identity."""

    model: ModelGraph
    model_id: str
    weight_checksum: str


def file_checksum(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_bundle(weights_path: str | Path, config: ModelConfig) -> ModelBundle:
    checksum = file_checksum(weights_path)
    model = load_weights(weights_path, config)
    return ModelBundle(model=model, model_id=f"dwsn:{checksum[:12]}", weight_checksum=checksum)


def bundle_from_model(model: ModelGraph, model_id: str = "in-memory") -> ModelBundle:
    return ModelBundle(model=model, model_id=model_id, weight_checksum="")


@dataclass(frozen=True)
class PredictionResult:
    """All seven classes ranked by probability (index breaks ties)."""

    predictions: tuple[tuple[str, str, float], ...]  # (code, display name, probability)
    top3: tuple[tuple[str, str, float], ...]
    model_id: str
    input_checksum: str

    def to_json_dict(self) -> dict:
        def entry(code, name, prob):
            return {"code": code, "name": name, "probability": prob}

        return {
            "predictions": [entry(*p) for p in self.predictions],
            "top3": [entry(*p) for p in self.top3],
            "model": self.model_id,
            "input_checksum": self.input_checksum,
        }


class PredictError(Exception):
    """Request-level failure carrying an HTTP status and a stable code."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def rank_probabilities(probs: np.ndarray, bundle: ModelBundle) -> list[tuple[str, str, float]]:
    labels = bundle.model.labels
    order = sorted(range(len(labels)), key=lambda i: (-float(probs[i]), i))
    return [(labels.codes[i], labels.display_names[i], float(probs[i])) for i in order]


def predict_image_bytes(bundle: ModelBundle, data: bytes) -> PredictionResult:
    """Decode -> resize -> preprocess -> forward; shared by CLI and service."""
    image = decode_image(data)
    size = bundle.model.config.input_size
    resized = resize_bilinear(image, size, size)
    batch = preprocess_pixels(resized)
    probs = forward(bundle.model, batch).array[0]
    ranked = rank_probabilities(probs, bundle)
    return PredictionResult(
        predictions=tuple(ranked),
        top3=tuple(ranked[:3]),
        model_id=bundle.model_id,
        input_checksum="sha256:" + hashlib.sha256(data).hexdigest(),
    )


def handle_predict(bundle: ModelBundle | None, body: bytes, content_type: str | None,
                   max_upload: int = DEFAULT_MAX_UPLOAD) -> PredictionResult:
    """Request-shaped prediction with the documented error statuses."""
    if bundle is None:
        raise PredictError(503, "model_not_loaded", "no model is loaded")
    if len(body) > max_upload:
        raise PredictError(413, "payload_too_large",
                           f"body of {len(body)} bytes exceeds limit {max_upload}")
    base_type = (content_type or "").split(";")[0].strip().lower()
    if base_type not in ALLOWED_CONTENT_TYPES:
        raise PredictError(415, "unsupported_media_type",
                           f"Content-Type must be one of {ALLOWED_CONTENT_TYPES}")
    try:
        return predict_image_bytes(bundle, body)
    except ValidationError:
        raise PredictError(400, "undecodable_image", "undecodable image") from None


def create_app(bundle: ModelBundle | None, max_upload: int = DEFAULT_MAX_UPLOAD,
               cors_origins: tuple[str, ...] = ("*",), audit_path: str | Path | None = None) -> FastAPI:
    """FastAPI application over an immutable model bundle."""
    app = FastAPI(title="derm inference service", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["GET", "POST", "OPTIONS"],
        allow_headers=["Content-Type"],
    )

    def error_response(exc: PredictError) -> Response:
        return Response(
            content=json.dumps({"error": exc.message, "code": exc.code}),
            status_code=exc.status,
            media_type="application/json",
        )

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.get("/v1/model")
    def model_info():
        if bundle is None:
            return error_response(PredictError(503, "model_not_loaded", "no model is loaded"))
        labels = bundle.model.labels
        return {
            "classes": [
                {"code": c, "name": n} for c, n in zip(labels.codes, labels.display_names)
            ],
            "input_size": bundle.model.config.input_size,
            "weight_file_checksum": bundle.weight_checksum,
            "model": bundle.model_id,
        }

    @app.post("/v1/predict")
    async def predict(request: Request):
        body = await request.body()
        try:
            result = handle_predict(bundle, body, request.headers.get("content-type"), max_upload)
        except PredictError as exc:
            return error_response(exc)
        if audit_path is not None:
            with Path(audit_path).open("a", encoding="utf-8") as fh:
                top = result.predictions[0]
                fh.write(json.dumps({
                    "input_checksum": result.input_checksum,
                    "top_code": top[0],
                    "top_probability": top[2],
                }) + "\n")
        return Response(
            content=json.dumps(result.to_json_dict()),
            media_type="application/json",
        )

    return app
