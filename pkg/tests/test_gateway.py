from __future__ import annotations

import json

import httpx
import pytest
from PIL import Image
from fastapi.testclient import TestClient

from conftest import make_record
from dimfit.contract import run_gateway_contract, sample_png
from dimfit.corpus import DescriptionRecord
from dimfit.errors import BackendError, SchemaError, ScoreOutOfRange, TransportError
from dimfit.gateway import (
    BackendSpec,
    ChatRequest,
    FixtureDescriptionSource,
    HttpChatBackend,
    HttpItmBackend,
    ScriptedChatBackend,
    ScriptedItmBackend,
    build_chat_backend,
    build_itm_backend,
    crop,
    decode_image,
    encode_png,
    generate_description,
    image_fingerprint,
    itm_score,
    prompt_fingerprint,
    spec_identity,
)
from stub_backend import create_stub_app


# -- crop --------------------------------------------------------------------


def test_crop_identity_round_trip():
    image = Image.new("RGB", (10, 7), (9, 9, 9))
    out = crop((0.0, 0.0, 1.0, 1.0), image)
    assert out.size == (10, 7)
    assert out.tobytes() == image.tobytes()


def test_crop_quarter_box():
    image = Image.new("RGB", (100, 100))
    out = crop((0.25, 0.25, 0.75, 0.75), image)
    assert out.size == (50, 50)


def test_crop_degenerate_clamped_and_counted():
    image = Image.new("RGB", (100, 100))
    warnings: list[str] = []
    out = crop((0.5, 0.5, 0.505, 0.505), image, warn_sink=warnings)
    assert out.size == (1, 1)
    assert len(warnings) == 1


def test_crop_degenerate_at_far_edge_stays_inside():
    image = Image.new("RGB", (10, 10))
    warnings: list[str] = []
    out = crop((0.95, 0.95, 0.96, 0.96), image, warn_sink=warnings)
    assert out.size == (1, 1)
    assert warnings


def test_crop_rejects_bad_box():
    image = Image.new("RGB", (10, 10))
    with pytest.raises(ValueError):
        crop((0.5, 0.5, 0.4, 0.9), image)


# -- scripted backends ---------------------------------------------------------


def test_scripted_chat_hit_and_miss():
    backend = ScriptedChatBackend()
    backend.add("sys", "user text", "scripted reply")
    hit = backend.complete(ChatRequest(system="sys", user="user  text"))
    assert hit.text == "scripted reply" and hit.finish_reason == "stop"
    miss = backend.complete(ChatRequest(system="sys", user="unknown"))
    assert miss.text == "" and miss.finish_reason == "empty"


def test_prompt_fingerprint_whitespace_insensitive():
    assert prompt_fingerprint("a  b", " c\nd ") == prompt_fingerprint("a b", "c d")
    assert prompt_fingerprint("a", "b") != prompt_fingerprint("a", "c")


def test_scripted_itm_layers():
    img = sample_png()
    backend = ScriptedItmBackend(
        exact={(image_fingerprint(img), "exact text"): 0.91},
        by_text={"wildcard text": 0.25},
        default_score=0.5,
    )
    assert itm_score(backend, img, "exact text") == 0.91
    assert itm_score(backend, img, "wildcard text") == 0.25
    assert itm_score(backend, img, "anything else") == 0.5
    assert itm_score(backend, img, "exact text") == itm_score(backend, img, "exact text")


def test_itm_score_preconditions(rule_itm):
    with pytest.raises(ValueError):
        itm_score(rule_itm, sample_png(), "   ")
    with pytest.raises(ValueError):
        itm_score(rule_itm, b"", "a car is black")


def test_scripted_files_round_trip(tmp_path):
    chat_path = tmp_path / "chat.json"
    chat_path.write_text(
        json.dumps({"entries": [{"system": "s", "user": "u", "reply": "r"}]})
    )
    backend = ScriptedChatBackend.from_file(chat_path)
    assert backend.complete(ChatRequest(system="s", user="u")).text == "r"

    itm_path = tmp_path / "itm.json"
    itm_path.write_text(
        json.dumps(
            {"default_score": 0.4, "entries": [{"image": "*", "text": "t", "score": 0.9}]}
        )
    )
    itm = ScriptedItmBackend.from_file(itm_path)
    assert itm.score(b"x", "t") == 0.9
    assert itm.score(b"x", "other") == 0.4


def test_scripted_itm_rejects_out_of_range_score(tmp_path):
    path = tmp_path / "itm.json"
    path.write_text(json.dumps({"entries": [{"image": "*", "text": "t", "score": 1.3}]}))
    with pytest.raises(ScoreOutOfRange):
        ScriptedItmBackend.from_file(path)


def test_fixture_source(tmp_path, taxonomy):
    record = make_record(tmp_path, "r1", obj="cat")
    source = FixtureDescriptionSource({"r1": "a cat. color: black."}, name="demo")
    desc = generate_description(source, record, "prompt")
    assert desc == DescriptionRecord(
        record_id="r1", source_name="demo", text="a cat. color: black.", provenance="fixture"
    )
    with pytest.raises(BackendError):
        generate_description(source, make_record(tmp_path, "r2"), "prompt")


# -- HTTP backends -------------------------------------------------------------


def _client_for(handler) -> httpx.Client:
    return httpx.Client(transport=httpx.MockTransport(handler), base_url="http://backend")


def test_http_chat_retries_then_succeeds():
    calls = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        if calls["n"] <= 2:
            raise httpx.ConnectTimeout("boom")
        return httpx.Response(200, json={"text": "hello", "finish_reason": "stop"})

    backend = HttpChatBackend(client=_client_for(handler), sleep=lambda _: None)
    response = backend.complete(ChatRequest(system="s", user="u"))
    assert response.text == "hello"
    assert response.retries == 2
    assert calls["n"] == 3


def test_http_chat_gives_up_after_retries():
    def handler(request: httpx.Request) -> httpx.Response:
        raise httpx.ConnectError("down")

    backend = HttpChatBackend(client=_client_for(handler), sleep=lambda _: None)
    with pytest.raises(TransportError):
        backend.complete(ChatRequest(system="s", user="u"))


def test_http_chat_never_retries_error_payloads():
    calls = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        return httpx.Response(400, json={"error": {"message": "bad request"}})

    backend = HttpChatBackend(client=_client_for(handler), sleep=lambda _: None)
    with pytest.raises(BackendError, match="bad request"):
        backend.complete(ChatRequest(system="s", user="u"))
    assert calls["n"] == 1


def test_http_itm_rejects_out_of_range():
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json={"score": 1.3})

    backend = HttpItmBackend(client=_client_for(handler), sleep=lambda _: None)
    with pytest.raises(ScoreOutOfRange):
        backend.score(sample_png(), "a car is black")


def test_http_backends_read_env(monkeypatch):
    monkeypatch.setenv("DT_CHAT_URL", "http://chat.example")
    monkeypatch.setenv("DT_API_KEY", "secret")
    backend = HttpChatBackend()
    assert backend.base_url == "http://chat.example"
    assert backend._client.headers["authorization"] == "Bearer secret"
    monkeypatch.delenv("DT_CHAT_URL")
    with pytest.raises(BackendError):
        HttpChatBackend()


# -- wiring & contract ---------------------------------------------------------


def test_build_backends_from_specs(tmp_path):
    chat_spec = BackendSpec(kind="rule")
    itm_spec = BackendSpec(kind="rule", config={"default": 0.7})
    assert build_chat_backend(chat_spec).identity().startswith("rule-chat:")
    assert build_itm_backend(itm_spec).score(b"x", "t") == 0.7
    with pytest.raises(SchemaError):
        build_chat_backend(BackendSpec(kind="fixture", path="x"))
    assert spec_identity(chat_spec).startswith("rule:")


def test_gateway_contract_against_stub():
    client = TestClient(create_stub_app())
    health = run_gateway_contract(client, deterministic=True)
    assert health["model_ids"]["chat"] == "stub-chat"


def test_png_codec_round_trip():
    image = Image.new("RGB", (5, 4), (1, 2, 3))
    decoded = decode_image(encode_png(image))
    assert decoded.size == (5, 4)
    assert decoded.convert("RGB").tobytes() == image.tobytes()
