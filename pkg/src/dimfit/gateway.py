"""Service contracts for the three external model roles: description source,
chat backend, and image-text-matching scorer, plus scripted deterministic
implementations and the image-crop utility.

All scripted backends are pure: identical inputs give identical outputs, so
whole pipeline runs replay byte-identically. Live backends speak the wire
protocol:

    POST {base}/v1/chat    {system, user, temperature, max_tokens} -> {text, finish_reason}
    POST {base}/v1/itm     {image_b64, text} -> {score}
    GET  {base}/v1/health  -> {status, model_ids}

with 4xx error payloads of the form {"error": {"message": ...}}. Base URLs
and the optional bearer token come from DT_CHAT_URL / DT_ITM_URL / DT_API_KEY
when not given explicitly.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import time
from pathlib import Path
from typing import Callable, Protocol

import httpx
from PIL import Image
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .corpus import DescriptionRecord, InstanceRecord
from .errors import BackendError, SchemaError, ScoreOutOfRange, TransportError
from .taxonomy import normalize_mention

logger = logging.getLogger(__name__)

ENV_CHAT_URL = "DT_CHAT_URL"
ENV_ITM_URL = "DT_ITM_URL"
ENV_API_KEY = "DT_API_KEY"


# -- request/response types ------------------------------------------------


class ChatRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    system: str
    user: str
    temperature: float = 0.0
    max_tokens: int = 512

    @field_validator("temperature")
    @classmethod
    def _temp_non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("temperature must be >= 0")
        return v

    @field_validator("max_tokens")
    @classmethod
    def _tokens_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("max_tokens must be >= 1")
        return v


class ChatResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    finish_reason: str = "stop"
    retries: int = 0

    @model_validator(mode="after")
    def _empty_needs_reason(self):
        if not self.text and self.finish_reason == "stop":
            raise ValueError("empty text requires a non-normal finish_reason")
        return self


def prompt_fingerprint(system: str, user: str) -> str:
    """Stable identifier for a prompt pair, insensitive to cosmetic
    whitespace so scripts survive formatting tweaks but not semantic edits."""
    payload = normalize_mention(system) + "\x1f" + normalize_mention(user)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def image_fingerprint(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


# -- backend protocols -------------------------------------------------------


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...

    def identity(self) -> str: ...


class ItmBackend(Protocol):
    def score(self, image: bytes, text: str) -> float: ...

    def identity(self) -> str: ...


class DescriptionSource(Protocol):
    name: str
    provenance: str

    def generate(self, record: InstanceRecord, prompt: str) -> str: ...

    def identity(self) -> str: ...


def chat(backend: ChatBackend, request: ChatRequest) -> ChatResponse:
    return backend.complete(request)


def itm_score(backend: ItmBackend, image: bytes, text: str) -> float:
    if not text.strip():
        raise ValueError("itm text must be non-empty")
    if not image:
        raise ValueError("itm image must be non-empty")
    return backend.score(image, text)


def generate_description(
    source: DescriptionSource, record: InstanceRecord, prompt: str
) -> DescriptionRecord:
    text = source.generate(record, prompt)
    return DescriptionRecord(
        record_id=record.record_id,
        source_name=source.name,
        text=text,
        provenance=source.provenance,  # type: ignore[arg-type]
    )


# -- scripted backends -------------------------------------------------------


class ScriptedChatBackend:
    """Chat double driven by a fingerprint -> reply table; unknown prompts
    yield an empty response rather than an error so lookups stay total."""

    def __init__(self, entries: dict[str, str] | None = None, label: str = "inline"):
        self.entries = dict(entries or {})
        self._label = label

    def add(self, system: str, user: str, reply: str) -> None:
        self.entries[prompt_fingerprint(system, user)] = reply

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedChatBackend":
        raw = _read_script(path)
        backend = cls(label=_file_label(path))
        for entry in raw.get("entries", []):
            if "fingerprint" in entry:
                backend.entries[entry["fingerprint"]] = entry["reply"]
            elif "system" in entry and "user" in entry:
                backend.add(entry["system"], entry["user"], entry["reply"])
            else:
                raise SchemaError(f"chat script entry needs fingerprint or system+user: {entry}")
        return backend

    def complete(self, request: ChatRequest) -> ChatResponse:
        reply = self.entries.get(prompt_fingerprint(request.system, request.user))
        if not reply:
            return ChatResponse(text="", finish_reason="empty")
        return ChatResponse(text=reply, finish_reason="stop")

    def identity(self) -> str:
        return f"scripted-chat:{self._label}"


class ScriptedItmBackend:
    """ITM double: exact (image fingerprint, text) entries, wildcard-image
    text entries, then a default score. Fully deterministic and total."""

    def __init__(
        self,
        exact: dict[tuple[str, str], float] | None = None,
        by_text: dict[str, float] | None = None,
        default_score: float = 0.5,
        label: str = "inline",
    ):
        self.exact = dict(exact or {})
        self.by_text = dict(by_text or {})
        self.default_score = _check_score(default_score)
        self._label = label

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedItmBackend":
        raw = _read_script(path)
        backend = cls(default_score=raw.get("default_score", 0.5), label=_file_label(path))
        for entry in raw.get("entries", []):
            score = _check_score(float(entry["score"]))
            image = entry.get("image", "*")
            if image == "*":
                backend.by_text[entry["text"]] = score
            else:
                backend.exact[(image, entry["text"])] = score
        return backend

    def score(self, image: bytes, text: str) -> float:
        fp = image_fingerprint(image)
        if (fp, text) in self.exact:
            return self.exact[(fp, text)]
        if text in self.by_text:
            return self.by_text[text]
        return self.default_score

    def identity(self) -> str:
        return f"scripted-itm:{self._label}"


class FixtureDescriptionSource:
    """Description source backed by frozen per-record texts."""

    provenance = "fixture"

    def __init__(self, texts: dict[str, str], name: str = "fixture"):
        self.texts = dict(texts)
        self.name = name

    @classmethod
    def from_file(cls, path: str | Path, name: str | None = None) -> "FixtureDescriptionSource":
        texts: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                texts[row["record_id"]] = row["text"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad fixture line: {exc}") from None
        return cls(texts, name=name or _file_label(path))

    def generate(self, record: InstanceRecord, prompt: str) -> str:
        try:
            return self.texts[record.record_id]
        except KeyError:
            raise BackendError(f"no fixture description for record {record.record_id!r}") from None

    def identity(self) -> str:
        return f"fixture-source:{self.name}"


def _read_script(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise SchemaError(f"script file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"script file is not valid JSON: {exc}") from None


def _file_label(path: str | Path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]
    return f"{Path(path).name}@{digest}"


def _check_score(score: float) -> float:
    if not 0.0 <= score <= 1.0:
        raise ScoreOutOfRange(f"itm score {score} outside [0, 1]")
    return score


# -- live HTTP backends ------------------------------------------------------

_RETRY_BACKOFF = (0.5, 1.0, 2.0)


class _HttpBase:
    def __init__(
        self,
        url: str | None,
        env_var: str,
        api_key: str | None = None,
        client: httpx.Client | None = None,
        max_retries: int = 3,
        timeout: float = 60.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        base = url or os.environ.get(env_var)
        if client is None and not base:
            raise BackendError(f"no backend URL given and {env_var} is unset")
        self.base_url = (base or "").rstrip("/")
        key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = client or httpx.Client(base_url=self.base_url, timeout=timeout, headers=headers)
        self._owns_client = client is None
        self._headers = headers if client is not None else {}
        self.max_retries = max_retries
        self._sleep = sleep

    def _post(self, path: str, payload: dict) -> tuple[dict, int]:
        """POST with transport-level retries; well-formed error payloads are
        never retried."""
        attempts = 0
        while True:
            try:
                resp = self._client.post(path, json=payload, headers=self._headers or None)
            except httpx.HTTPError as exc:
                if attempts >= self.max_retries - 1:
                    raise TransportError(f"POST {path} failed after {attempts + 1} attempts: {exc}") from exc
                self._sleep(_RETRY_BACKOFF[min(attempts, len(_RETRY_BACKOFF) - 1)])
                attempts += 1
                continue
            if resp.status_code == 200:
                try:
                    return resp.json(), attempts
                except json.JSONDecodeError as exc:
                    raise BackendError(f"POST {path}: unparsable success payload: {exc}") from None
            message = _error_message(resp)
            if message is not None:
                raise BackendError(f"POST {path} -> {resp.status_code}: {message}")
            # Status error without a structured payload: treat as transport.
            if attempts >= self.max_retries - 1:
                raise TransportError(f"POST {path} -> {resp.status_code} after {attempts + 1} attempts")
            self._sleep(_RETRY_BACKOFF[min(attempts, len(_RETRY_BACKOFF) - 1)])
            attempts += 1

    def health(self) -> dict:
        try:
            resp = self._client.get("/v1/health", headers=self._headers or None)
        except httpx.HTTPError as exc:
            raise TransportError(f"GET /v1/health failed: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"GET /v1/health -> {resp.status_code}")
        return resp.json()

    def close(self) -> None:
        if self._owns_client:
            self._client.close()


def _error_message(resp: httpx.Response) -> str | None:
    try:
        body = resp.json()
    except json.JSONDecodeError:
        return None
    if isinstance(body, dict) and isinstance(body.get("error"), dict):
        return str(body["error"].get("message", ""))
    return None


class HttpChatBackend(_HttpBase):
    def __init__(self, url: str | None = None, **kwargs):
        super().__init__(url, ENV_CHAT_URL, **kwargs)

    def complete(self, request: ChatRequest) -> ChatResponse:
        body, retries = self._post("/v1/chat", request.model_dump())
        try:
            return ChatResponse(
                text=body["text"], finish_reason=body.get("finish_reason", "stop"), retries=retries
            )
        except (KeyError, ValueError) as exc:
            raise BackendError(f"malformed chat payload: {exc}") from None

    def identity(self) -> str:
        return f"http-chat:{self.base_url or 'injected'}"


class HttpItmBackend(_HttpBase):
    def __init__(self, url: str | None = None, **kwargs):
        super().__init__(url, ENV_ITM_URL, **kwargs)

    def score(self, image: bytes, text: str) -> float:
        payload = {"image_b64": base64.b64encode(image).decode(), "text": text}
        body, _ = self._post("/v1/itm", payload)
        try:
            value = float(body["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed itm payload: {exc}") from None
        if not 0.0 <= value <= 1.0:
            raise ScoreOutOfRange(f"backend returned itm score {value} outside [0, 1]")
        return value

    def identity(self) -> str:
        return f"http-itm:{self.base_url or 'injected'}"


# -- image handling ----------------------------------------------------------


def decode_image(data: bytes) -> Image.Image:
    img = Image.open(io.BytesIO(data))
    img.load()
    return img


def encode_png(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def crop(
    box: tuple[float, float, float, float],
    image: Image.Image,
    warn_sink: list[str] | None = None,
) -> Image.Image:
    """Extract the axis-aligned object region given a normalized box.

    Pixel bounds are round(coord * extent); a box that rounds to zero width
    or height is clamped to 1x1, warned, and counted via warn_sink.
    """
    x1, y1, x2, y2 = box
    if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
        raise ValueError(f"invalid normalized box {box}")
    w, h = image.size
    if w == 0 or h == 0:
        raise ValueError("cannot crop an empty image")
    left, right = round(x1 * w), round(x2 * w)
    top, bottom = round(y1 * h), round(y2 * h)
    degenerate = right - left < 1 or bottom - top < 1
    if right - left < 1:
        if right >= w:
            left = w - 1
        right = left + 1
    if bottom - top < 1:
        if bottom >= h:
            top = h - 1
        bottom = top + 1
    if degenerate:
        message = f"degenerate box {box} on {w}x{h} image clamped to 1x1"
        logger.warning(message)
        if warn_sink is not None:
            warn_sink.append(message)
    return image.crop((left, top, right, bottom))


def crop_region_bytes(
    record: InstanceRecord, warn_sink: list[str] | None = None
) -> bytes:
    """Load the record's image, crop its box, and return PNG bytes; the unit
    every ITM call in the pipeline scores against."""
    data = Path(record.image).read_bytes()
    region = crop(record.box, decode_image(data), warn_sink=warn_sink)
    return encode_png(region)


# -- backend wiring ----------------------------------------------------------


class BackendSpec(BaseModel):
    """Declarative backend selection used by config files and the service.

    kind: "scripted" (fingerprint table file), "rule" (deterministic
    simulator), "http" (live wire protocol), or "fixture" (description
    source file).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: str
    path: str | None = None
    url: str | None = None
    name: str | None = None
    config: dict = {}

    @field_validator("kind")
    @classmethod
    def _known_kind(cls, v: str) -> str:
        if v not in {"scripted", "rule", "http", "fixture"}:
            raise ValueError(f"unknown backend kind {v!r}")
        return v


def build_chat_backend(spec: BackendSpec) -> ChatBackend:
    if spec.kind == "scripted":
        if not spec.path:
            raise SchemaError("scripted chat backend needs a path")
        return ScriptedChatBackend.from_file(spec.path)
    if spec.kind == "rule":
        from .simulators import RuleBasedChat, RuleChatConfig

        return RuleBasedChat(RuleChatConfig.model_validate(spec.config))
    if spec.kind == "http":
        return HttpChatBackend(spec.url)
    raise SchemaError(f"backend kind {spec.kind!r} cannot serve chat")


def build_itm_backend(spec: BackendSpec) -> ItmBackend:
    if spec.kind == "scripted":
        if not spec.path:
            raise SchemaError("scripted itm backend needs a path")
        return ScriptedItmBackend.from_file(spec.path)
    if spec.kind == "rule":
        from .simulators import RuleBasedItm, RuleItmConfig

        return RuleBasedItm(RuleItmConfig.model_validate(spec.config))
    if spec.kind == "http":
        return HttpItmBackend(spec.url)
    raise SchemaError(f"backend kind {spec.kind!r} cannot serve itm")


def build_description_source(spec: BackendSpec) -> DescriptionSource:
    if spec.kind == "fixture":
        if not spec.path:
            raise SchemaError("fixture description source needs a path")
        return FixtureDescriptionSource.from_file(spec.path, name=spec.name)
    raise SchemaError(
        f"backend kind {spec.kind!r} cannot serve descriptions; live generation is external"
    )


def spec_identity(spec: BackendSpec) -> str:
    """Identity string recorded in run manifests."""
    if spec.kind == "http":
        return f"http:{spec.url or 'env'}"
    if spec.kind in {"scripted", "fixture"} and spec.path:
        try:
            return f"{spec.kind}:{_file_label(spec.path)}"
        except FileNotFoundError:
            return f"{spec.kind}:{spec.path}"
    if spec.kind == "rule":
        digest = hashlib.sha256(json.dumps(spec.config, sort_keys=True).encode()).hexdigest()[:12]
        return f"rule:{digest}"
    return spec.kind
