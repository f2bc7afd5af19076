"""FastAPI app implementing the model wire protocol:

    POST /v1/chat    {system, user, temperature, max_tokens} -> {text, finish_reason}
    POST /v1/itm     {image_b64, text} -> {score}
    GET  /v1/health  -> 503 while models load, then {status, model_ids, ...}

Payload errors answer 4xx with {"error": {"message": ...}}. The shim never
crops images: cropping lives in the pipeline client so both sides agree on
one crop implementation. In deterministic mode chat temperature is forced
to 0 and identical requests yield identical responses.
"""
from __future__ import annotations

import base64
import binascii
import io
import threading

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, Field

from .engines import ChatUpstream, ItmEngine, make_chat_upstream, make_itm_engine


class ShimConfig(BaseModel):
    itm_model: str = "hash"
    chat_upstream: str = "echo"
    chat_api_key: str | None = None
    deterministic: bool = True
    api_token: str | None = None
    host: str = "127.0.0.1"
    port: int = 8091


class ChatBody(BaseModel):
    system: str
    user: str
    temperature: float = Field(default=0.0, ge=0.0)
    max_tokens: int = Field(default=512, ge=1)


class ItmBody(BaseModel):
    image_b64: str
    text: str


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"message": message}})


def create_app(
    config: ShimConfig | None = None,
    itm_engine: ItmEngine | None = None,
    chat_upstream: ChatUpstream | None = None,
) -> FastAPI:
    config = config or ShimConfig()
    engine = itm_engine or make_itm_engine(config.itm_model)
    upstream = chat_upstream or make_chat_upstream(config.chat_upstream, config.chat_api_key)

    ready = threading.Event()
    load_error: list[str] = []

    def _load() -> None:
        try:
            engine.load()
        except Exception as exc:  # noqa: BLE001 - surfaced via health
            load_error.append(f"{type(exc).__name__}: {exc}")
            return
        ready.set()

    app = FastAPI(title="scoring-shim")
    # Engine loading can take minutes for real checkpoints; serve 503 from
    # /v1/health in the meantime instead of blocking startup.
    threading.Thread(target=_load, daemon=True).start()

    @app.exception_handler(RequestValidationError)
    async def _validation(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        return _error(400, f"invalid request: {first.get('loc')} {first.get('msg')}")

    def _authorized(request: Request) -> bool:
        if not config.api_token:
            return True
        return request.headers.get("authorization") == f"Bearer {config.api_token}"

    @app.get("/v1/health")
    def health():
        if load_error:
            return _error(503, f"model load failed: {load_error[0]}")
        if not ready.is_set():
            return JSONResponse(status_code=503, content={"status": "loading"})
        return {
            "status": "ok",
            "model_ids": {"chat": upstream.model_id, "itm": engine.model_id},
            "deterministic": config.deterministic,
            "itm_preprocessing": engine.preprocessing(),
        }

    @app.post("/v1/chat")
    def chat(body: ChatBody, request: Request):
        if not _authorized(request):
            return _error(401, "missing or invalid bearer token")
        if not ready.is_set():
            return _error(503, "models are still loading")
        temperature = 0.0 if config.deterministic else body.temperature
        try:
            text, finish_reason = upstream.complete(
                body.system, body.user, temperature, body.max_tokens
            )
        except Exception as exc:  # noqa: BLE001 - upstream failure
            return _error(502, f"chat upstream failed: {type(exc).__name__}: {exc}")
        return {"text": text, "finish_reason": finish_reason}

    @app.post("/v1/itm")
    def itm(body: ItmBody, request: Request):
        if not _authorized(request):
            return _error(401, "missing or invalid bearer token")
        if not ready.is_set():
            return _error(503, "models are still loading")
        if not body.text.strip():
            return _error(400, "text must be non-empty")
        try:
            raw = base64.b64decode(body.image_b64, validate=True)
            image = Image.open(io.BytesIO(raw))
            image.load()
        except (binascii.Error, ValueError, UnidentifiedImageError, OSError):
            return _error(400, "image_b64 is not a decodable image")
        score = engine.score(image, body.text)
        if not 0.0 <= score <= 1.0:
            return _error(500, f"engine produced out-of-range score {score}")
        return {"score": score}

    return app
