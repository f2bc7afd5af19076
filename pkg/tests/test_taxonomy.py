from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dimfit.errors import ConflictError, SchemaError, UnknownDimension
from dimfit.taxonomy import (
    Unlisted,
    canonicalize_attribute,
    canonicalize_dimension,
    load_taxonomy,
    taxonomy_from_annotation_labels,
    taxonomy_to_document,
)


def test_load_small_document():
    taxonomy = load_taxonomy(
        {
            "dimensions": [
                {"id": "color", "display_name": "color", "aliases": ["colour"]},
                {"id": "size", "display_name": "size", "aliases": []},
            ],
            "attributes": [
                {"dimension": "color", "synonyms": ["black"]},
                {"dimension": "color", "synonyms": ["red"]},
                {"dimension": "size", "synonyms": ["large", "big"]},
            ],
        }
    )
    assert len(taxonomy.dimensions) == 2
    assert [l.canonical for l in taxonomy.labels_for("color")] == ["black", "red"]


def test_alias_collision_rejected():
    with pytest.raises(ConflictError):
        load_taxonomy(
            {
                "dimensions": [
                    {"id": "color", "display_name": "color", "aliases": ["tone"]},
                    {"id": "sentiment", "display_name": "sentiment", "aliases": ["tone"]},
                ],
                "attributes": [],
            }
        )


def test_unknown_fields_rejected():
    with pytest.raises(SchemaError):
        load_taxonomy(
            {
                "dimensions": [{"id": "color", "display_name": "color", "aliases": [], "extra": 1}],
                "attributes": [],
            }
        )


def test_attribute_for_unknown_dimension_rejected():
    with pytest.raises(SchemaError):
        load_taxonomy(
            {
                "dimensions": [{"id": "color", "display_name": "color", "aliases": []}],
                "attributes": [{"dimension": "size", "synonyms": ["large"]}],
            }
        )


def test_duplicate_canonical_rejected():
    with pytest.raises(ConflictError):
        load_taxonomy(
            {
                "dimensions": [{"id": "color", "display_name": "color", "aliases": []}],
                "attributes": [
                    {"dimension": "color", "synonyms": ["black"]},
                    {"dimension": "color", "synonyms": ["black", "ebony"]},
                ],
            }
        )


def test_canonicalize_dimension_cases(taxonomy):
    assert canonicalize_dimension("Color", taxonomy) == "color"
    assert canonicalize_dimension("colour", taxonomy) == "color"
    assert canonicalize_dimension("  POSTURE ", taxonomy) == "pose"
    assert canonicalize_dimension("aura", taxonomy) is None


def test_canonicalize_dimension_requires_mention(taxonomy):
    with pytest.raises(ValueError):
        canonicalize_dimension("   ", taxonomy)


def test_canonicalize_attribute_exact_and_synonym(taxonomy):
    label = canonicalize_attribute("leather", "material", taxonomy)
    assert label.canonical == "leather"
    furry = canonicalize_attribute("furry", "texture", taxonomy)
    assert furry.synonyms == ("soft", "fluffy", "furry", "hairy")
    assert furry.canonical == "soft"


def test_canonicalize_attribute_unlisted(taxonomy):
    result = canonicalize_attribute("iridescent", "color", taxonomy)
    assert isinstance(result, Unlisted)
    assert result.mention == "iridescent"


def test_canonicalize_attribute_unknown_dimension(taxonomy):
    with pytest.raises(UnknownDimension):
        canonicalize_attribute("black", "vibe", taxonomy)


def test_dimension_canonicalization_idempotent(taxonomy):
    for dim in taxonomy.dimensions:
        for alias in dim.aliases:
            resolved = canonicalize_dimension(alias, taxonomy)
            assert resolved == dim.id
            assert canonicalize_dimension(resolved, taxonomy) == resolved


def test_attribute_round_trip(taxonomy):
    for dim_id in taxonomy.dimension_ids():
        for label in taxonomy.labels_for(dim_id):
            assert canonicalize_attribute(label.canonical, dim_id, taxonomy) == label


@given(
    mention=st.sampled_from(
        ["color", "COLOUR", " Fabric ", "posture", "SIZE", "Cleanliness", "aura", "pattern"]
    )
)
def test_canonicalize_dimension_never_ambiguous(taxonomy, mention):
    first = canonicalize_dimension(mention, taxonomy)
    second = canonicalize_dimension(mention, taxonomy)
    assert first == second
    if first is not None:
        assert canonicalize_dimension(first, taxonomy) == first


def test_derive_from_annotation_labels():
    taxonomy = taxonomy_from_annotation_labels(
        [
            "color:black",
            "color:white",
            "texture:soft/fluffy/furry/hairy",
            "material:leather",
        ]
    )
    assert taxonomy.dimension_ids() == ("color", "texture", "material")
    texture = taxonomy.labels_for("texture")
    assert len(texture) == 1
    assert texture[0].synonyms == ("soft", "fluffy", "furry", "hairy")


def test_derive_rejects_malformed_label():
    with pytest.raises(SchemaError):
        taxonomy_from_annotation_labels(["no-colon-here"])


def test_document_round_trip(taxonomy):
    doc = taxonomy_to_document(taxonomy)
    reloaded = load_taxonomy(doc)
    assert reloaded.dimension_ids() == taxonomy.dimension_ids()
    assert reloaded.attributes == taxonomy.attributes
