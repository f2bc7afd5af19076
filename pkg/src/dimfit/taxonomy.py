"""Dimension taxonomy: the universe of semantic dimensions, their attribute
vocabularies, and canonicalization of free-text mentions onto them.

Matching is case-insensitive, whitespace-trimmed and exact-token; anything
fuzzier is the job of the language model upstream. A taxonomy is immutable
after load and safe for unrestricted concurrent reads.
"""
from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Iterable, Union

from pydantic import BaseModel, ConfigDict, PrivateAttr, ValidationError, field_validator

from .errors import ConflictError, SchemaError, UnknownDimension

_WS = re.compile(r"\s+")


def normalize_mention(text: str) -> str:
    """Lowercase and collapse internal whitespace; the only normalization
    applied before any taxonomy lookup."""
    return _WS.sub(" ", text.strip().lower())


class Dimension(BaseModel):
    """One semantic facet of an object (color, material, pose, ...)."""

    model_config = ConfigDict(frozen=True)

    id: str
    display_name: str
    aliases: tuple[str, ...] = ()

    @field_validator("id")
    @classmethod
    def _id_token(cls, v: str) -> str:
        v = normalize_mention(v)
        if not v:
            raise ValueError("dimension id must be non-empty")
        return v

    @field_validator("aliases")
    @classmethod
    def _clean_aliases(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        cleaned = [normalize_mention(a) for a in v]
        if any(not a for a in cleaned):
            raise ValueError("blank alias")
        return tuple(dict.fromkeys(cleaned))

    def model_post_init(self, __context) -> None:
        # The id always resolves to itself.
        if self.id not in self.aliases:
            object.__setattr__(self, "aliases", (self.id,) + self.aliases)


class AttributeLabel(BaseModel):
    """One attribute value of a dimension, possibly bundling several synonyms
    under a single label; the first synonym is the canonical name."""

    model_config = ConfigDict(frozen=True)

    dimension_id: str
    synonyms: tuple[str, ...]

    @field_validator("synonyms")
    @classmethod
    def _non_empty(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        cleaned = tuple(normalize_mention(s) for s in v)
        if not cleaned or any(not s for s in cleaned):
            raise ValueError("synonyms must be a non-empty list of non-blank strings")
        return cleaned

    @property
    def canonical(self) -> str:
        return self.synonyms[0]


class Unlisted(BaseModel):
    """An attribute mention that matched no label of its dimension. Kept so
    open-vocabulary attributes stay usable for erasure, never for supplement."""

    model_config = ConfigDict(frozen=True)

    mention: str


class Taxonomy(BaseModel):
    """The ordered dimension universe plus per-dimension attribute labels.

    Iteration order over dimensions is declaration order and is the
    tie-breaking order used throughout the pipeline.
    """

    model_config = ConfigDict(frozen=True)

    dimensions: tuple[Dimension, ...]
    attributes: dict[str, tuple[AttributeLabel, ...]] = {}

    _alias_to_id: dict[str, str] = PrivateAttr(default_factory=dict)
    _dim_index: dict[str, int] = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context) -> None:
        if not self.dimensions:
            raise ValueError("taxonomy must declare at least one dimension")
        alias_to_id: dict[str, str] = {}
        dim_index: dict[str, int] = {}
        for pos, dim in enumerate(self.dimensions):
            if dim.id in dim_index:
                raise ValueError(f"duplicate dimension id {dim.id!r}")
            dim_index[dim.id] = pos
            for alias in dim.aliases:
                owner = alias_to_id.get(alias)
                if owner is not None and owner != dim.id:
                    raise ValueError(f"alias {alias!r} claimed by both {owner!r} and {dim.id!r}")
                alias_to_id[alias] = dim.id
        for dim_id, labels in self.attributes.items():
            if dim_id not in dim_index:
                raise ValueError(f"attributes reference unknown dimension {dim_id!r}")
            seen: set[str] = set()
            for label in labels:
                if label.dimension_id != dim_id:
                    raise ValueError(
                        f"label {label.canonical!r} filed under {dim_id!r} "
                        f"but claims dimension {label.dimension_id!r}"
                    )
                if label.canonical in seen:
                    raise ValueError(f"duplicate canonical {label.canonical!r} in {dim_id!r}")
                seen.add(label.canonical)
        self._alias_to_id = alias_to_id
        self._dim_index = dim_index

    # -- lookups ---------------------------------------------------------

    def dimension_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.dimensions)

    def dimension(self, dim_id: str) -> Dimension:
        try:
            return self.dimensions[self._dim_index[dim_id]]
        except KeyError:
            raise UnknownDimension(dim_id) from None

    def dimension_order(self, dim_id: str) -> int:
        try:
            return self._dim_index[dim_id]
        except KeyError:
            raise UnknownDimension(dim_id) from None

    def labels_for(self, dim_id: str) -> tuple[AttributeLabel, ...]:
        if dim_id not in self._dim_index:
            raise UnknownDimension(dim_id)
        return self.attributes.get(dim_id, ())

    def sort_dimensions(self, dim_ids: Iterable[str]) -> tuple[str, ...]:
        """Deduplicate and order dimension ids by declaration order."""
        unique = dict.fromkeys(dim_ids)
        return tuple(sorted(unique, key=self.dimension_order))


def canonicalize_dimension(mention: str, taxonomy: Taxonomy) -> str | None:
    """Resolve a free-text dimension mention to a dimension id.

    Returns None when no alias matches; alias disjointness guarantees the
    match, when present, is unique.
    """
    if not mention or not mention.strip():
        raise ValueError("mention must be non-empty")
    return taxonomy._alias_to_id.get(normalize_mention(mention))


def canonicalize_attribute(
    mention: str, dimension_id: str, taxonomy: Taxonomy
) -> AttributeLabel | Unlisted:
    """Match an attribute mention against every synonym of the dimension's
    labels; an unmatched mention is preserved as Unlisted."""
    labels = taxonomy.labels_for(dimension_id)
    wanted = normalize_mention(mention)
    for label in labels:
        if wanted in label.synonyms:
            return label
    return Unlisted(mention=wanted)


# -- document loading ----------------------------------------------------


class _DimensionDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    display_name: str
    aliases: list[str] = []


class _AttributeDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    dimension: str
    synonyms: list[str]


class _TaxonomyDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    dimensions: list[_DimensionDoc]
    attributes: list[_AttributeDoc] = []


def load_taxonomy(source: Union[str, Path, dict]) -> Taxonomy:
    """Load a taxonomy from a JSON document (path or already-parsed dict).

    Raises SchemaError on malformed documents and ConflictError when two
    dimensions claim the same alias or a dimension declares the same
    canonical attribute twice.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise SchemaError(f"taxonomy file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise SchemaError(f"taxonomy is not valid JSON: {exc}") from None
    else:
        raw = source

    try:
        doc = _TaxonomyDoc.model_validate(raw)
    except ValidationError as exc:
        raise SchemaError(f"taxonomy document rejected: {exc}") from None

    try:
        dimensions = tuple(
            Dimension(id=d.id, display_name=d.display_name, aliases=tuple(d.aliases))
            for d in doc.dimensions
        )
    except ValidationError as exc:
        raise SchemaError(f"bad dimension entry: {exc}") from None

    claimed: dict[str, str] = {}
    for dim in dimensions:
        if dim.id in claimed.values() and any(
            claimed.get(a) == dim.id for a in dim.aliases
        ):  # pragma: no cover - duplicate ids caught below via alias claim
            pass
        for alias in dim.aliases:
            owner = claimed.get(alias)
            if owner is not None:
                raise ConflictError(f"alias {alias!r} appears in both {owner!r} and {dim.id!r}")
            claimed[alias] = dim.id

    attributes: dict[str, list[AttributeLabel]] = {}
    for entry in doc.attributes:
        dim_id = normalize_mention(entry.dimension)
        if dim_id not in {d.id for d in dimensions}:
            raise SchemaError(f"attribute entry references unknown dimension {entry.dimension!r}")
        try:
            label = AttributeLabel(dimension_id=dim_id, synonyms=tuple(entry.synonyms))
        except ValidationError as exc:
            raise SchemaError(f"bad attribute entry for {dim_id!r}: {exc}") from None
        bucket = attributes.setdefault(dim_id, [])
        if any(existing.canonical == label.canonical for existing in bucket):
            raise ConflictError(f"duplicate canonical {label.canonical!r} for {dim_id!r}")
        bucket.append(label)

    try:
        return Taxonomy(
            dimensions=dimensions,
            attributes={k: tuple(v) for k, v in attributes.items()},
        )
    except (ValidationError, ValueError) as exc:
        raise SchemaError(f"taxonomy invariants violated: {exc}") from None


def taxonomy_to_document(taxonomy: Taxonomy) -> dict:
    """Inverse of load_taxonomy, for persisting derived taxonomies."""
    return {
        "dimensions": [
            {"id": d.id, "display_name": d.display_name, "aliases": list(d.aliases)}
            for d in taxonomy.dimensions
        ],
        "attributes": [
            {"dimension": dim_id, "synonyms": list(label.synonyms)}
            for dim_id in taxonomy.dimension_ids()
            for label in taxonomy.labels_for(dim_id)
        ],
    }


def taxonomy_from_annotation_labels(labels: Iterable[str]) -> Taxonomy:
    """Derive a taxonomy from attribute-benchmark label strings.

    Each label has the form ``dimension:syn1/syn2/...``; slash-joined synonym
    bundles become one label with a synonym list. Dimensions appear in
    first-mention order. The shipped package deliberately carries no
    hard-coded default taxonomy: derive one from the annotation source you
    evaluate against and save it with taxonomy_to_document.
    """
    dims: dict[str, None] = {}
    attr_entries: list[dict] = []
    seen: set[tuple[str, str]] = set()
    for raw in labels:
        if ":" not in raw:
            raise SchemaError(f"label {raw!r} is not of the form dimension:value")
        dim_part, value_part = raw.split(":", 1)
        dim_id = normalize_mention(dim_part)
        if not dim_id or not value_part.strip():
            raise SchemaError(f"label {raw!r} has a blank dimension or value")
        dims.setdefault(dim_id, None)
        synonyms = [normalize_mention(s) for s in value_part.split("/") if s.strip()]
        if not synonyms:
            raise SchemaError(f"label {raw!r} has no usable synonyms")
        key = (dim_id, synonyms[0])
        if key in seen:
            continue
        seen.add(key)
        attr_entries.append({"dimension": dim_id, "synonyms": synonyms})
    return load_taxonomy(
        {
            "dimensions": [
                {"id": d, "display_name": d, "aliases": []} for d in dims
            ],
            "attributes": attr_entries,
        }
    )
