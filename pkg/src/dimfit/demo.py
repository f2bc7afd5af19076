"""Build a self-contained demo workspace runnable entirely offline.

    python -m dimfit.demo /tmp/dimfit-demo
    dimfit generate --config /tmp/dimfit-demo/config.json
    dimfit refine   --config /tmp/dimfit-demo/config.json
    dimfit evaluate --config /tmp/dimfit-demo/config.json

The demo corpus uses the structured description dialect understood by the
deterministic rule backends, with the usual defects mixed in: redundant
dimensions, a wrong attribute, and missing requested dimensions.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

from PIL import Image

TAXONOMY = {
    "dimensions": [
        {"id": "color", "display_name": "color", "aliases": ["colour"]},
        {"id": "material", "display_name": "material", "aliases": []},
        {"id": "pattern", "display_name": "pattern", "aliases": []},
        {"id": "size", "display_name": "size", "aliases": []},
        {"id": "cleanliness", "display_name": "cleanliness", "aliases": []},
        {"id": "pose", "display_name": "pose", "aliases": []},
    ],
    "attributes": [
        {"dimension": "color", "synonyms": ["black"]},
        {"dimension": "color", "synonyms": ["brown"]},
        {"dimension": "color", "synonyms": ["white"]},
        {"dimension": "material", "synonyms": ["leather"]},
        {"dimension": "material", "synonyms": ["ceramic"]},
        {"dimension": "material", "synonyms": ["wood", "wooden"]},
        {"dimension": "pattern", "synonyms": ["plain"]},
        {"dimension": "pattern", "synonyms": ["striped"]},
        {"dimension": "size", "synonyms": ["large", "big"]},
        {"dimension": "size", "synonyms": ["small"]},
        {"dimension": "cleanliness", "synonyms": ["clean"]},
        {"dimension": "cleanliness", "synonyms": ["dirty"]},
        {"dimension": "pose", "synonyms": ["sitting"]},
        {"dimension": "pose", "synonyms": ["standing"]},
    ],
}

RECORDS = [
    ("d1", "dog", [("color", "brown"), ("cleanliness", "clean"), ("pose", "sitting")]),
    ("d2", "couch", [("material", "leather"), ("size", "large"), ("pattern", "plain")]),
    ("d3", "cup", [("material", "ceramic"), ("color", "white"), ("size", "small")]),
    ("d4", "horse", [("color", "brown"), ("cleanliness", "clean"), ("pose", "standing")]),
    ("d5", "car", [("color", "black"), ("size", "large"), ("cleanliness", "dirty")]),
    ("d6", "chair", [("material", "wood"), ("color", "brown"), ("pattern", "plain")]),
]

# Descriptions with typical defects relative to the (sampled) intents:
# extra dimensions the user never asked for, one wrong attribute (the rule
# ITM scores "green" low so the erasure step fires), and missing dimensions.
DESCRIPTIONS = {
    "d1": "a dog. color: green. size: large.",
    "d2": "a couch. material: leather. color: brown.",
    "d3": "a cup. material: ceramic. size: small.",
    "d4": "a horse. color: brown. pose: standing. cleanliness: clean.",
    "d5": "a car. color: black.",
    "d6": "a chair. material: wood. pose: sitting.",
}


def build(root: Path) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    (root / "imgs").mkdir(exist_ok=True)
    rows = []
    for i, (rid, obj, attrs) in enumerate(RECORDS):
        Image.new("RGB", (32, 32), (40 * i % 255, 80, 120)).save(root / "imgs" / f"{rid}.png")
        rows.append(
            {
                "record_id": rid,
                "image": f"imgs/{rid}.png",
                "bbox": [0.1, 0.1, 0.9, 0.9],
                "object": obj,
                "attributes": [{"dimension": d, "value": v} for d, v in attrs],
            }
        )
    (root / "annotations.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    (root / "taxonomy.json").write_text(json.dumps(TAXONOMY, indent=2))
    (root / "fixture_descriptions.jsonl").write_text(
        "".join(
            json.dumps({"record_id": rid, "text": text}) + "\n"
            for rid, text in sorted(DESCRIPTIONS.items())
        )
    )
    config = {
        "taxonomy": str(root / "taxonomy.json"),
        "corpus": {"annotations": str(root / "annotations.jsonl"), "image_root": str(root)},
        "backends": {
            "chat": {"kind": "rule", "config": {}},
            "itm": {"kind": "rule", "config": {"contains": [["green", 0.2]], "default": 0.8}},
            "source": {
                "kind": "fixture",
                "path": str(root / "fixture_descriptions.jsonl"),
                "name": "demo-mllm",
            },
            "judge_chat": {"kind": "rule", "config": {}},
            "validity_chat": {"kind": "rule", "config": {}},
        },
        "refiner": {"tau_e": 0.3, "tau_c": 0.0},
        "seeds": [0, 1, 2],
        "intent_size": 2,
        "output_dir": str(root / "out"),
        "validity": {"enabled": False, "subsample": 100},
        "workers": 2,
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2))
    return config_path


def main(argv: list[str]) -> int:
    if len(argv) != 1:
        print("usage: python -m dimfit.demo <target-directory>", file=sys.stderr)
        return 2
    config_path = build(Path(argv[0]))
    print(f"demo workspace ready: {config_path}")
    print("next:")
    for command in ("generate", "refine", "evaluate"):
        print(f"  dimfit {command} --config {config_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
