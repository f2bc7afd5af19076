"""Reusable conformance checks for any server implementing the model wire
protocol (/v1/chat, /v1/itm, /v1/health).

Shipped inside the package so the same client-side suite that guards the
HTTP gateway classes can be pointed, unchanged, at any third-party backend
or serving shim. Every check uses the package's own gateway clients, plus
raw requests for the error-path status codes.
"""
from __future__ import annotations

import base64
import io

import httpx
from PIL import Image

from .gateway import ChatRequest, HttpChatBackend, HttpItmBackend


def sample_png(color: tuple[int, int, int] = (200, 30, 30), size: int = 8) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (size, size), color).save(buf, format="PNG")
    return buf.getvalue()


def check_health(client: httpx.Client) -> dict:
    resp = client.get("/v1/health")
    assert resp.status_code == 200, f"health returned {resp.status_code}"
    body = resp.json()
    assert body.get("status") == "ok", f"health status: {body}"
    assert "model_ids" in body and {"chat", "itm"} <= set(body["model_ids"]), body
    return body

def check_chat_basic(client: httpx.Client) -> str:
    backend = HttpChatBackend(client=client)
    response = backend.complete(
        ChatRequest(system="You are a terse assistant.", user="Say hello.", max_tokens=64)
    )
    assert response.finish_reason, "chat must report a finish_reason"
    assert response.text or response.finish_reason != "stop", "empty text needs a non-normal finish"
    return response.text


def check_chat_deterministic(client: httpx.Client) -> None:
    backend = HttpChatBackend(client=client)
    request = ChatRequest(system="You are a terse assistant.", user="Name one color.", temperature=0.0)
    first = backend.complete(request)
    second = backend.complete(request)
    assert first.text == second.text, "deterministic mode must repeat chat replies exactly"


def check_chat_error_payload(client: httpx.Client) -> None:
    resp = client.post("/v1/chat", json={"user": "missing system field"})
    assert 400 <= resp.status_code < 500, f"malformed chat body gave {resp.status_code}"
    body = resp.json()
    assert isinstance(body.get("error"), dict) and body["error"].get("message"), body


def check_itm_range_and_determinism(client: httpx.Client, repeats: int = 5) -> float:
    backend = HttpItmBackend(client=client)
    image = sample_png()
    scores = [backend.score(image, "a car is black") for _ in range(repeats)]
    for s in scores:
        assert 0.0 <= s <= 1.0, f"itm score {s} outside [0, 1]"
    drift = max(scores) - min(scores)
    assert drift == 0.0, f"itm score drift {drift} on repeated identical requests"
    return scores[0]


def check_itm_empty_text_rejected(client: httpx.Client) -> None:
    image_b64 = base64.b64encode(sample_png()).decode()
    resp = client.post("/v1/itm", json={"image_b64": image_b64, "text": ""})
    assert resp.status_code == 400, f"empty text gave {resp.status_code}"
    body = resp.json()
    assert isinstance(body.get("error"), dict), body


def check_itm_bad_image_rejected(client: httpx.Client) -> None:
    bad = base64.b64encode(b"this is not an image").decode()
    resp = client.post("/v1/itm", json={"image_b64": bad, "text": "a car is black"})
    assert resp.status_code == 400, f"undecodable image gave {resp.status_code}"
    body = resp.json()
    assert isinstance(body.get("error"), dict), body


def run_gateway_contract(client: httpx.Client, deterministic: bool = True) -> dict:
    """Run every conformance check; returns the health payload."""
    health = check_health(client)
    check_chat_basic(client)
    if deterministic:
        check_chat_deterministic(client)
    check_chat_error_payload(client)
    check_itm_range_and_determinism(client)
    check_itm_empty_text_rejected(client)
    check_itm_bad_image_rejected(client)
    return health
