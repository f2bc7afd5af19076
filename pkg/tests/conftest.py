from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import settings
from PIL import Image

from dimfit.corpus import InstanceRecord
from dimfit.simulators import RuleBasedChat, RuleBasedItm, RuleChatConfig, RuleItmConfig
from dimfit.taxonomy import Taxonomy, load_taxonomy

settings.register_profile("ci", deadline=None)
settings.load_profile("ci")

TAXONOMY_DOC = {
    "dimensions": [
        {"id": "color", "display_name": "color", "aliases": ["colour"]},
        {"id": "material", "display_name": "material", "aliases": ["fabric"]},
        {"id": "pattern", "display_name": "pattern", "aliases": []},
        {"id": "texture", "display_name": "texture", "aliases": []},
        {"id": "size", "display_name": "size", "aliases": []},
        {"id": "cleanliness", "display_name": "cleanliness", "aliases": []},
        {"id": "pose", "display_name": "pose", "aliases": ["posture"]},
    ],
    "attributes": [
        {"dimension": "color", "synonyms": ["black"]},
        {"dimension": "color", "synonyms": ["white"]},
        {"dimension": "color", "synonyms": ["red"]},
        {"dimension": "color", "synonyms": ["blue"]},
        {"dimension": "color", "synonyms": ["brown"]},
        {"dimension": "material", "synonyms": ["leather"]},
        {"dimension": "material", "synonyms": ["wood", "wooden"]},
        {"dimension": "material", "synonyms": ["metal"]},
        {"dimension": "material", "synonyms": ["ceramic"]},
        {"dimension": "material", "synonyms": ["glass"]},
        {"dimension": "material", "synonyms": ["cloth"]},
        {"dimension": "pattern", "synonyms": ["plain"]},
        {"dimension": "pattern", "synonyms": ["striped"]},
        {"dimension": "pattern", "synonyms": ["spotted"]},
        {"dimension": "pattern", "synonyms": ["lettered"]},
        {"dimension": "texture", "synonyms": ["soft", "fluffy", "furry", "hairy"]},
        {"dimension": "texture", "synonyms": ["rough"]},
        {"dimension": "texture", "synonyms": ["smooth"]},
        {"dimension": "size", "synonyms": ["large", "big"]},
        {"dimension": "size", "synonyms": ["small"]},
        {"dimension": "size", "synonyms": ["medium"]},
        {"dimension": "cleanliness", "synonyms": ["clean"]},
        {"dimension": "cleanliness", "synonyms": ["dirty"]},
        {"dimension": "pose", "synonyms": ["sitting"]},
        {"dimension": "pose", "synonyms": ["standing"]},
        {"dimension": "pose", "synonyms": ["lying"]},
    ],
}


@pytest.fixture(scope="session")
def taxonomy() -> Taxonomy:
    return load_taxonomy(TAXONOMY_DOC)


@pytest.fixture(scope="session")
def taxonomy_path(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("taxonomy") / "taxonomy.json"
    path.write_text(json.dumps(TAXONOMY_DOC))
    return str(path)


def write_png(path: Path, color=(120, 40, 40), size=(16, 16)) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", size, color).save(path, format="PNG")


def dialect(obj: str, *facts: tuple[str, str]) -> str:
    """Structured description dialect understood by the rule-based chat."""
    clauses = " ".join(f"{dim}: {value}." for dim, value in facts)
    return f"a {obj}. {clauses}".strip()


def make_record(
    tmp_path: Path,
    record_id: str,
    obj: str = "dog",
    box=(0.1, 0.1, 0.9, 0.9),
    gt: tuple[tuple[str, str], ...] = (),
    intent: tuple[str, ...] | None = None,
) -> InstanceRecord:
    image = tmp_path / "imgs" / f"{record_id}.png"
    write_png(image)
    return InstanceRecord(
        record_id=record_id,
        image=str(image),
        object_label=obj,
        box=box,
        gt_attributes=tuple({"dimension": d, "value": v} for d, v in gt),  # type: ignore[arg-type]
        user_intent=intent,
    )


def write_annotations(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


@pytest.fixture
def rule_chat() -> RuleBasedChat:
    return RuleBasedChat(RuleChatConfig())


@pytest.fixture
def rule_itm() -> RuleBasedItm:
    return RuleBasedItm(RuleItmConfig())


def standard_corpus() -> tuple[list[dict], dict[str, str]]:
    """Three-record corpus with one redundant dimension, one wrong attribute
    plus a missing dimension, and one already-perfect description."""
    rows = [
        {
            "record_id": "r1",
            "image": "imgs/r1.png",
            "bbox": [0.1, 0.1, 0.9, 0.9],
            "object": "couch",
            "attributes": [
                {"dimension": "material", "value": "leather"},
                {"dimension": "size", "value": "large"},
            ],
            "intent": ["material", "size"],
        },
        {
            "record_id": "r2",
            "image": "imgs/r2.png",
            "bbox": [0.2, 0.2, 0.8, 0.8],
            "object": "dog",
            "attributes": [
                {"dimension": "color", "value": "black"},
                {"dimension": "cleanliness", "value": "clean"},
            ],
            "intent": ["color", "cleanliness"],
        },
        {
            "record_id": "r3",
            "image": "imgs/r3.png",
            "bbox": [0.1, 0.2, 0.7, 0.8],
            "object": "cup",
            "attributes": [{"dimension": "material", "value": "ceramic"}],
            "intent": ["material"],
        },
    ]
    descriptions = {
        "r1": dialect("couch", ("material", "leather"), ("size", "large"), ("color", "red")),
        "r2": dialect("dog", ("color", "green")),
        "r3": dialect("cup", ("material", "ceramic")),
    }
    return rows, descriptions


def write_run_fixture(
    root: Path,
    rows: list[dict] | None = None,
    descriptions: dict[str, str] | None = None,
    itm_config: dict | None = None,
    chat_config: dict | None = None,
    judge_config: dict | None = None,
    seeds: list[int] = [0, 1],
    intent_size: int = 2,
    refiner: dict | None = None,
    validity: dict | None = None,
    taxonomy_doc: dict = TAXONOMY_DOC,
    workers: int = 2,
    source_name: str = "fixture-mllm",
) -> str:
    """Write a complete, self-contained run directory; returns the config path."""
    if rows is None or descriptions is None:
        default_rows, default_descs = standard_corpus()
        rows = rows or default_rows
        descriptions = descriptions or default_descs
    root.mkdir(parents=True, exist_ok=True)
    for row in rows:
        write_png(root / row["image"])
    write_annotations(root / "annotations.jsonl", rows)
    (root / "taxonomy.json").write_text(json.dumps(taxonomy_doc))
    (root / "fixture_descriptions.jsonl").write_text(
        "".join(
            json.dumps({"record_id": rid, "text": text}) + "\n"
            for rid, text in sorted(descriptions.items())
        )
    )
    config = {
        "taxonomy": str(root / "taxonomy.json"),
        "corpus": {"annotations": str(root / "annotations.jsonl"), "image_root": str(root)},
        "backends": {
            "chat": {"kind": "rule", "config": chat_config or {}},
            "itm": {
                "kind": "rule",
                "config": itm_config
                if itm_config is not None
                else {"contains": [["green", 0.2]], "default": 0.8},
            },
            "source": {
                "kind": "fixture",
                "path": str(root / "fixture_descriptions.jsonl"),
                "name": source_name,
            },
            "judge_chat": {"kind": "rule", "config": judge_config or {}},
            "validity_chat": {"kind": "rule", "config": {}},
        },
        "refiner": refiner or {"tau_e": 0.3, "tau_c": 0.0},
        "seeds": seeds,
        "intent_size": intent_size,
        "output_dir": str(root / "out"),
        "validity": validity or {"enabled": False, "subsample": 100},
        "workers": workers,
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2))
    return str(config_path)
