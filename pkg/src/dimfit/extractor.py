"""Parse a description into dimension tuples and the contained-dimension set.

The chat backend answers with one tuple per line in the exact form
``(object | dimension | attribute)``; lines outside that grammar are skipped
and counted, and tuples whose dimension is not in the taxonomy are dropped
and counted. The same operation doubles as the metrics-side dimension
detector for any description under evaluation.
"""
from __future__ import annotations

import re

from pydantic import BaseModel, ConfigDict, model_validator

from .corpus import DescriptionRecord
from .errors import ParseError
from .gateway import ChatBackend, ChatRequest, ChatResponse, chat
from .prompts import NONE_SENTINEL, build_extraction_prompt
from .taxonomy import Taxonomy, canonicalize_attribute, canonicalize_dimension

TUPLE_LINE = re.compile(r"^\(\s*([^|()]+?)\s*\|\s*([^|()]+?)\s*\|\s*([^|()]+?)\s*\)\s*$")


class DimensionTuple(BaseModel):
    """(object, dimension, attribute) extracted from a description.

    ``attribute`` is the canonical label name when the mention matched the
    dimension's vocabulary (listed=True), otherwise the raw mention.
    ``mention`` always preserves the surface form used by the description,
    which is what erase prompts quote.
    """

    model_config = ConfigDict(frozen=True)

    object: str
    dimension_id: str
    attribute: str
    mention: str
    listed: bool
    evidence_span: tuple[int, int] | None = None


class ParsedTuples(BaseModel):
    model_config = ConfigDict(frozen=True)

    tuples: tuple[DimensionTuple, ...]
    matched_lines: int
    skipped_lines: int
    dropped_tuples: int


class ExtractionResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    tuples: tuple[DimensionTuple, ...]
    contained_dimensions: tuple[str, ...]
    raw_llm_output: str
    skipped_lines: int = 0
    dropped_tuples: int = 0

    @model_validator(mode="after")
    def _contained_matches_tuples(self):
        if set(self.contained_dimensions) != {t.dimension_id for t in self.tuples}:
            raise ValueError("contained_dimensions must equal the tuple dimension set")
        return self


def parse_tuples(llm_reply: str, taxonomy: Taxonomy) -> ParsedTuples:
    """Lenient line parser: non-matching lines are skipped and counted,
    tuples with out-of-taxonomy dimensions are dropped and counted."""
    tuples: list[DimensionTuple] = []
    matched = skipped = dropped = 0
    for line in llm_reply.splitlines():
        stripped = line.strip()
        if not stripped or stripped.lower() == NONE_SENTINEL:
            continue
        m = TUPLE_LINE.match(stripped)
        if m is None:
            skipped += 1
            continue
        matched += 1
        obj, dim_mention, attr_mention = m.group(1), m.group(2), m.group(3)
        dim_id = canonicalize_dimension(dim_mention, taxonomy)
        if dim_id is None:
            dropped += 1
            continue
        matched_label = canonicalize_attribute(attr_mention, dim_id, taxonomy)
        if hasattr(matched_label, "canonical"):
            attribute, listed = matched_label.canonical, True
        else:
            attribute, listed = matched_label.mention, False
        tuples.append(
            DimensionTuple(
                object=obj,
                dimension_id=dim_id,
                attribute=attribute,
                mention=attr_mention.strip(),
                listed=listed,
            )
        )
    return ParsedTuples(
        tuples=tuple(tuples), matched_lines=matched, skipped_lines=skipped, dropped_tuples=dropped
    )


def _attach_spans(tuples: tuple[DimensionTuple, ...], description: str) -> tuple[DimensionTuple, ...]:
    lowered = description.lower()
    out = []
    for t in tuples:
        start = lowered.find(t.mention.lower())
        span = (start, start + len(t.mention)) if start >= 0 else None
        out.append(t.model_copy(update={"evidence_span": span}))
    return tuple(out)


def _is_empty_reply(reply: str) -> bool:
    stripped = reply.strip().lower()
    return stripped in {"", NONE_SENTINEL, "none"}


def build_extraction_result(
    tuples: tuple[DimensionTuple, ...],
    raw_output: str,
    taxonomy: Taxonomy,
    skipped_lines: int = 0,
    dropped_tuples: int = 0,
) -> ExtractionResult:
    return ExtractionResult(
        tuples=tuples,
        contained_dimensions=taxonomy.sort_dimensions(t.dimension_id for t in tuples),
        raw_llm_output=raw_output,
        skipped_lines=skipped_lines,
        dropped_tuples=dropped_tuples,
    )


def extract(
    description: DescriptionRecord | str,
    object_label: str,
    taxonomy: Taxonomy,
    chat_backend: ChatBackend,
    on_call=None,
) -> ExtractionResult:
    """Run the extraction prompt and parse the reply into tuples.

    One reformat retry is issued when a non-empty reply matches zero lines;
    a second zero-match reply raises ParseError. ``on_call`` observes every
    (request, response) pair for trace recording.
    """
    text = description.text if isinstance(description, DescriptionRecord) else description
    if not text.strip():
        raise ValueError("description must be non-empty")

    request = build_extraction_prompt(taxonomy, object_label, text)
    response = _observed(chat_backend, request, on_call)
    reply = response.text
    parsed = parse_tuples(reply, taxonomy)

    if parsed.matched_lines == 0 and not _is_empty_reply(reply):
        request = build_extraction_prompt(taxonomy, object_label, text, reformat=True)
        response = _observed(chat_backend, request, on_call)
        reply = response.text
        parsed = parse_tuples(reply, taxonomy)
        if parsed.matched_lines == 0 and not _is_empty_reply(reply):
            raise ParseError(
                f"extraction reply for object {object_label!r} not in tuple format after retry"
            )

    tuples = _attach_spans(parsed.tuples, text)
    return build_extraction_result(
        tuples, reply, taxonomy, skipped_lines=parsed.skipped_lines, dropped_tuples=parsed.dropped_tuples
    )


def _observed(backend: ChatBackend, request: ChatRequest, on_call) -> ChatResponse:
    response = chat(backend, request)
    if on_call is not None:
        on_call(request, response)
    return response
