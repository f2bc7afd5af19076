"""Evaluation corpus: annotated object instances, intent prompts, and
reproducible user-intent sampling.

Annotation files are line-delimited JSON records; boxes are stored
normalized to [0, 1] and only converted to pixels at crop time.
"""
from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Literal, Sequence

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .errors import InsufficientDimensions, SchemaError
from .taxonomy import Taxonomy, canonicalize_attribute, canonicalize_dimension


class GroundTruthAttribute(BaseModel):
    model_config = ConfigDict(frozen=True)

    dimension: str
    value: str
    listed: bool = True


class InstanceRecord(BaseModel):
    """One evaluation item: an object in an image with expert attribute
    annotations and, once assigned, the user-intent dimension set."""

    model_config = ConfigDict(frozen=True)

    record_id: str
    image: str
    object_label: str
    box: tuple[float, float, float, float]
    gt_attributes: tuple[GroundTruthAttribute, ...] = ()
    user_intent: tuple[str, ...] | None = None

    @field_validator("record_id", "object_label")
    @classmethod
    def _non_blank(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("must be non-blank")
        return v

    @field_validator("box")
    @classmethod
    def _box_valid(cls, v: tuple[float, float, float, float]):
        x1, y1, x2, y2 = v
        if not all(0.0 <= c <= 1.0 for c in v):
            raise ValueError(f"box coordinates must lie in [0,1]: {v}")
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"box must satisfy x1<x2 and y1<y2: {v}")
        return v

    @model_validator(mode="after")
    def _intent_valid(self):
        if self.user_intent is not None:
            if len(self.user_intent) == 0:
                raise ValueError("user_intent must be non-empty when assigned")
            if len(set(self.user_intent)) != len(self.user_intent):
                raise ValueError("user_intent must not repeat dimensions")
        return self

    def gt_dimensions(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(a.dimension for a in self.gt_attributes))

    def with_intent(self, intent: Sequence[str]) -> "InstanceRecord":
        return self.model_copy(update={"user_intent": tuple(intent)})


class DescriptionRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    record_id: str
    source_name: str
    text: str
    provenance: Literal["generated", "refined", "fixture"]

    @field_validator("text")
    @classmethod
    def _text_non_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("description text must be non-empty")
        return v


class CorpusLoad(BaseModel):
    """load_corpus result: the usable records plus the ids skipped because
    their image file was missing (warn-and-skip policy)."""

    model_config = ConfigDict(frozen=True)

    records: tuple[InstanceRecord, ...]
    missing_images: tuple[str, ...] = ()


def build_prompt(record: InstanceRecord, taxonomy: Taxonomy) -> str:
    """Render the instruction asking a description source to cover exactly
    the record's intent dimensions."""
    if record.user_intent is None:
        raise ValueError(f"record {record.record_id} has no user intent assigned")
    return prompt_for(record.object_label, record.user_intent, taxonomy)


def prompt_for(object_label: str, intent: Sequence[str], taxonomy: Taxonomy) -> str:
    names = [taxonomy.dimension(d).display_name for d in intent]
    if not names:
        raise ValueError("intent must be non-empty")
    if len(names) == 1:
        joined = names[0]
    else:
        joined = ", ".join(names[:-1]) + " and " + names[-1]
    return f"Please describe the {joined} of the {object_label} in detail."


class _AnnotationRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    record_id: str
    image: str
    bbox: list[float]
    object: str
    attributes: list[dict] = []
    intent: list[str] | None = None


def _is_remote(ref: str) -> bool:
    return "://" in ref


def load_corpus(
    annotation_path: str | Path,
    image_root: str | Path | None,
    taxonomy: Taxonomy,
) -> CorpusLoad:
    """Load instance records from a line-delimited annotation file.

    Every referenced dimension must canonicalize into the taxonomy; records
    whose image file is missing under image_root are skipped and counted.
    Output is sorted by record_id so identical inputs give byte-identical
    record lists.
    """
    path = Path(annotation_path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise SchemaError(f"annotation file not found: {path}") from None

    root = Path(image_root) if image_root is not None else None
    records: list[InstanceRecord] = []
    missing: list[str] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = _AnnotationRow.model_validate(json.loads(line))
        except (json.JSONDecodeError, ValidationError) as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None
        if row.record_id in seen_ids:
            raise SchemaError(f"{path}:{lineno}: duplicate record_id {row.record_id!r}")
        seen_ids.add(row.record_id)
        if len(row.bbox) != 4:
            raise SchemaError(f"{path}:{lineno}: bbox must have 4 coordinates")

        gt: list[GroundTruthAttribute] = []
        for entry in row.attributes:
            if set(entry) != {"dimension", "value"}:
                raise SchemaError(f"{path}:{lineno}: attribute entries need exactly dimension and value")
            dim_id = canonicalize_dimension(str(entry["dimension"]), taxonomy)
            if dim_id is None:
                raise SchemaError(
                    f"{path}:{lineno}: attribute dimension {entry['dimension']!r} not in taxonomy"
                )
            matched = canonicalize_attribute(str(entry["value"]), dim_id, taxonomy)
            if hasattr(matched, "canonical"):
                gt.append(GroundTruthAttribute(dimension=dim_id, value=matched.canonical, listed=True))
            else:
                gt.append(GroundTruthAttribute(dimension=dim_id, value=matched.mention, listed=False))

        intent: tuple[str, ...] | None = None
        if row.intent is not None:
            resolved = []
            for mention in row.intent:
                dim_id = canonicalize_dimension(mention, taxonomy)
                if dim_id is None:
                    raise SchemaError(f"{path}:{lineno}: intent dimension {mention!r} not in taxonomy")
                resolved.append(dim_id)
            intent = taxonomy.sort_dimensions(resolved)
            if not intent:
                raise SchemaError(f"{path}:{lineno}: intent must be non-empty when present")

        image_ref = row.image
        if root is not None and not _is_remote(image_ref):
            resolved_path = root / image_ref
            if not resolved_path.exists():
                missing.append(row.record_id)
                continue
            image_ref = str(resolved_path)

        try:
            records.append(
                InstanceRecord(
                    record_id=row.record_id,
                    image=image_ref,
                    object_label=row.object.strip(),
                    box=tuple(row.bbox),  # type: ignore[arg-type]
                    gt_attributes=tuple(gt),
                    user_intent=intent,
                )
            )
        except ValidationError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None

    records.sort(key=lambda r: r.record_id)
    return CorpusLoad(records=tuple(records), missing_images=tuple(missing))


def sample_intents(
    record: InstanceRecord, k: int, seed: int, taxonomy: Taxonomy
) -> tuple[str, ...]:
    """Draw k intent dimensions from those with ground-truth coverage.

    Deterministic under (record_id, seed) and independent of process state,
    so repeated runs assign identical intents. The result is ordered by
    taxonomy declaration order.
    """
    available = taxonomy.sort_dimensions(record.gt_dimensions())
    if k < 1 or k > len(available):
        raise InsufficientDimensions(
            f"record {record.record_id}: requested {k} of {len(available)} annotated dimensions"
        )
    rng = random.Random(f"{record.record_id}|{seed}")
    chosen = rng.sample(list(available), k)
    return taxonomy.sort_dimensions(chosen)
