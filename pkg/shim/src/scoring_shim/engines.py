"""Scoring engines and chat upstreams.

Two ITM engines: a dependency-free deterministic hash scorer for tests and
offline runs, and a BLIP image-text-matching head loaded through
transformers for live scoring. Engine choice is by model identifier: "hash"
selects the hash engine, anything else is treated as a checkpoint name.

Chat upstreams: "echo" answers every request with its own user message
(deterministic, used by the conformance suite); any URL is proxied as an
OpenAI-style chat-completions endpoint.
"""
from __future__ import annotations

import hashlib
from typing import Protocol

import httpx
from PIL import Image


class ItmEngine(Protocol):
    model_id: str

    def load(self) -> None: ...

    def score(self, image: Image.Image, text: str) -> float: ...

    def preprocessing(self) -> dict: ...


class HashItmEngine:
    """Deterministic stand-in scorer: hashes fixed-size pixels plus the text
    into a uniform [0, 1) value. Carries no visual meaning, but identical
    requests always score identically, which is what pipeline plumbing and
    conformance runs need."""

    model_id = "hash"
    _SIZE = (32, 32)

    def load(self) -> None:
        return None

    def score(self, image: Image.Image, text: str) -> float:
        pixels = image.convert("RGB").resize(self._SIZE, Image.NEAREST).tobytes()
        digest = hashlib.sha256(pixels + b"\x1f" + text.encode()).digest()
        return int.from_bytes(digest[:8], "big") / 2**64

    def preprocessing(self) -> dict:
        return {"resize": list(self._SIZE), "mode": "RGB", "resample": "nearest"}


class BlipItmEngine:
    """BLIP image-text-matching head; score is the softmax match probability.

    Requires the `blip` extra (torch, transformers) and access to the model
    weights. Inference runs on CPU in eval mode with the checkpoint's own
    preprocessing, so identical requests score identically.
    """

    def __init__(self, model_id: str):
        self.model_id = model_id
        self._model = None
        self._processor = None

    def load(self) -> None:
        import torch  # noqa: F401 - fail fast with a clear message
        from transformers import AutoProcessor, BlipForImageTextRetrieval

        self._processor = AutoProcessor.from_pretrained(self.model_id)
        self._model = BlipForImageTextRetrieval.from_pretrained(self.model_id)
        self._model.eval()

    def score(self, image: Image.Image, text: str) -> float:
        import torch

        inputs = self._processor(
            images=image.convert("RGB"), text=text, return_tensors="pt", truncation=True
        )
        with torch.no_grad():
            logits = self._model(**inputs).itm_score
        return torch.softmax(logits, dim=1)[0, 1].item()

    def preprocessing(self) -> dict:
        size = getattr(getattr(self._processor, "image_processor", None), "size", None)
        return {"processor": self.model_id, "image_size": size}


def make_itm_engine(model_id: str) -> ItmEngine:
    if model_id == "hash":
        return HashItmEngine()
    return BlipItmEngine(model_id)


class ChatUpstream(Protocol):
    model_id: str

    def complete(self, system: str, user: str, temperature: float, max_tokens: int) -> tuple[str, str]: ...


class EchoUpstream:
    """Returns the user message verbatim; deterministic by construction."""

    model_id = "echo"

    def complete(self, system: str, user: str, temperature: float, max_tokens: int) -> tuple[str, str]:
        return user, "stop"


class OpenAIChatUpstream:
    """Proxy to an OpenAI-style /chat/completions endpoint."""

    def __init__(self, url: str, api_key: str | None = None, model: str = "default", timeout: float = 120.0):
        self.base_url = url.rstrip("/")
        self.model_id = f"{self.base_url}#{model}"
        self._model = model
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(base_url=self.base_url, timeout=timeout, headers=headers)

    def complete(self, system: str, user: str, temperature: float, max_tokens: int) -> tuple[str, str]:
        resp = self._client.post(
            "/chat/completions",
            json={
                "model": self._model,
                "messages": [
                    {"role": "system", "content": system},
                    {"role": "user", "content": user},
                ],
                "temperature": temperature,
                "max_tokens": max_tokens,
            },
        )
        resp.raise_for_status()
        choice = resp.json()["choices"][0]
        return choice["message"]["content"], choice.get("finish_reason", "stop")


def make_chat_upstream(spec: str, api_key: str | None = None) -> ChatUpstream:
    if spec == "echo":
        return EchoUpstream()
    return OpenAIChatUpstream(spec, api_key=api_key)
