"""The refinement pipeline: erase redundant dimensions, erase wrong
attributes by ITM score delta, filter candidate attributes with the chat
backend's common sense, supplement missing dimensions by top-1 ITM above the
supplement threshold, and rewrite everything into the final description.

Records refine independently; within a record the steps are strictly
sequential because each step reads the previous step's description. Every
model interaction is recorded on the trace, which is what makes runs
replayable against scripted backends.
"""
from __future__ import annotations

import sys
from typing import Literal, Sequence

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .corpus import InstanceRecord
from .errors import DimfitError
from .extractor import DimensionTuple, ExtractionResult, extract
from .gateway import (
    ChatBackend,
    ChatRequest,
    ItmBackend,
    ScriptedChatBackend,
    ScriptedItmBackend,
    chat,
    crop_region_bytes,
    image_fingerprint,
    itm_score,
    prompt_fingerprint,
)
from .prompts import (
    NONE_SENTINEL,
    attribute_phrase,
    build_erase_prompt,
    build_filter_prompt,
    build_rewrite_prompt,
)
from .taxonomy import AttributeLabel, Taxonomy, canonicalize_attribute

TRACE_VERSION = 1


class RefinerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    tau_e: float = 0.3
    tau_c: float = 0.0
    enable_filtering: bool = True
    enable_erasing: bool = True
    enable_supplementing: bool = True
    max_erase_passes: int = 1

    @field_validator("tau_e", "tau_c")
    @classmethod
    def _threshold_in_range(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError("thresholds must lie in [0, 1]")
        return v

    @field_validator("max_erase_passes")
    @classmethod
    def _passes_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("max_erase_passes must be >= 1")
        return v


class ErasureEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    tuple: DimensionTuple
    kind: Literal["redundant", "wrong_attribute"]
    score_before: float | None = None
    score_after: float | None = None
    delta: float | None = None


class FilteredCandidate(BaseModel):
    model_config = ConfigDict(frozen=True)

    dimension_id: str
    attribute: str
    reason: str = "llm_filter"


class SupplementEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    dimension_id: str
    attribute: str
    score: float


class PipelineCall(BaseModel):
    """One model interaction, kept verbatim so a trace can be replayed."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["chat", "itm"]
    stage: str
    system: str | None = None
    user: str | None = None
    reply: str | None = None
    image_fp: str | None = None
    text: str | None = None
    score: float | None = None


class IntermediateText(BaseModel):
    model_config = ConfigDict(frozen=True)

    stage: str
    text: str


class RefinementTrace(BaseModel):
    """Full audit of one pipeline run over one record."""

    model_config = ConfigDict(frozen=True)

    trace_version: int = TRACE_VERSION
    record_id: str
    source_name: str = ""
    original: str
    user_intent: tuple[str, ...]
    extraction: ExtractionResult | None = None
    erasures: tuple[ErasureEvent, ...] = ()
    filtered_out: tuple[FilteredCandidate, ...] = ()
    supplements: tuple[SupplementEvent, ...] = ()
    intermediates: tuple[IntermediateText, ...] = ()
    warnings: tuple[str, ...] = ()
    calls: tuple[PipelineCall, ...] = ()
    final: str
    modified: bool
    error: str | None = None

    @model_validator(mode="after")
    def _flag_consistent(self):
        if self.modified != bool(self.erasures or self.supplements):
            raise ValueError("modified flag must equal (erasures or supplements non-empty)")
        for ev in self.erasures:
            if ev.kind == "wrong_attribute" and ev.delta is None:
                raise ValueError("wrong_attribute erasures must record their score delta")
        return self


class _Recorder:
    """Accumulates trace state while the pipeline runs."""

    def __init__(self) -> None:
        self.calls: list[PipelineCall] = []
        self.warnings: list[str] = []
        self.stage = "extract"

    def chat(self, backend: ChatBackend, request: ChatRequest) -> str:
        response = chat(backend, request)
        self.calls.append(
            PipelineCall(
                kind="chat",
                stage=self.stage,
                system=request.system,
                user=request.user,
                reply=response.text,
            )
        )
        return response.text

    def observe_chat(self, request: ChatRequest, response) -> None:
        self.calls.append(
            PipelineCall(
                kind="chat",
                stage=self.stage,
                system=request.system,
                user=request.user,
                reply=response.text,
            )
        )

    def itm(self, backend: ItmBackend, image: bytes, text: str) -> float:
        score = itm_score(backend, image, text)
        self.calls.append(
            PipelineCall(
                kind="itm",
                stage=self.stage,
                image_fp=image_fingerprint(image),
                text=text,
                score=score,
            )
        )
        return score

    def warn(self, message: str) -> None:
        self.warnings.append(message)


def tuple_order_key(taxonomy: Taxonomy):
    """Deterministic evaluation order for tuples: description span order,
    then taxonomy declaration order, then attribute text."""

    def key(t: DimensionTuple):
        start = t.evidence_span[0] if t.evidence_span is not None else sys.maxsize
        return (start, taxonomy.dimension_order(t.dimension_id), t.attribute)

    return key


def _erase_once(
    description: str,
    t: DimensionTuple,
    object_label: str,
    taxonomy: Taxonomy,
    chat_backend: ChatBackend,
    rec: _Recorder,
) -> str:
    display = taxonomy.dimension(t.dimension_id).display_name
    request = build_erase_prompt(object_label, display, t.mention, description)
    edited = rec.chat(chat_backend, request)
    if not edited.strip():
        rec.warn(f"erase reply empty for ({t.dimension_id}, {t.mention!r}); keeping text")
        return description
    return edited


def erase_redundant(
    description: str,
    extraction: ExtractionResult,
    user_intent: Sequence[str],
    object_label: str,
    taxonomy: Taxonomy,
    chat_backend: ChatBackend,
    max_erase_passes: int = 1,
    rec: _Recorder | None = None,
) -> tuple[str, list[ErasureEvent], ExtractionResult | None]:
    """Remove content of every dimension the description contains but the
    user did not request.

    After each erase pass the description is re-extracted; dimensions that
    survive every allowed pass are recorded as rewrite drift (a warning, not
    a failure). Returns the updated description, the erasure events, and the
    post-check extraction when one was run (callers reuse it to avoid a
    duplicate model call).
    """
    rec = rec or _Recorder()
    wanted = set(user_intent)
    redundant = [t for t in extraction.tuples if t.dimension_id not in wanted]
    if not redundant:
        return description, [], None

    redundant.sort(key=tuple_order_key(taxonomy))
    events: list[ErasureEvent] = []
    current = description
    rec.stage = "redundant_erase"
    for t in redundant:
        current = _erase_once(current, t, object_label, taxonomy, chat_backend, rec)
        events.append(ErasureEvent(tuple=t, kind="redundant"))

    erased_dims = {t.dimension_id for t in redundant}
    recheck: ExtractionResult | None = None
    for attempt in range(max_erase_passes):
        rec.stage = "redundant_verify"
        recheck = extract(current, object_label, taxonomy, chat_backend, on_call=rec.observe_chat)
        persisting = [d for d in recheck.contained_dimensions if d in erased_dims]
        if not persisting:
            return current, events, recheck
        if attempt + 1 >= max_erase_passes:
            for dim in persisting:
                rec.warn(
                    f"rewrite drift: dimension {dim!r} still present after "
                    f"{max_erase_passes} erase pass(es)"
                )
            return current, events, recheck
        rec.stage = "redundant_erase"
        retry_tuples = sorted(
            (t for t in recheck.tuples if t.dimension_id in persisting),
            key=tuple_order_key(taxonomy),
        )
        for t in retry_tuples:
            current = _erase_once(current, t, object_label, taxonomy, chat_backend, rec)
    return current, events, recheck


def erase_wrong_attributes(
    description: str,
    tuples: Sequence[DimensionTuple],
    crop_bytes: bytes,
    object_label: str,
    taxonomy: Taxonomy,
    chat_backend: ChatBackend,
    itm_backend: ItmBackend,
    tau_e: float,
    rec: _Recorder | None = None,
) -> tuple[str, list[ErasureEvent]]:
    """Erase a user-dimension tuple iff removing it raises the ITM match
    score against the object crop by more than tau_e.

    Tuples are tested in description span order and the description updates
    in place, so later deltas see earlier erasures.
    """
    rec = rec or _Recorder()
    events: list[ErasureEvent] = []
    current = description
    for t in sorted(tuples, key=tuple_order_key(taxonomy)):
        rec.stage = "wrong_attribute_erase"
        candidate = _erase_once(current, t, object_label, taxonomy, chat_backend, rec)
        if candidate == current:
            continue
        rec.stage = "wrong_attribute_itm"
        score_after = rec.itm(itm_backend, crop_bytes, candidate)
        score_before = rec.itm(itm_backend, crop_bytes, current)
        delta = score_after - score_before
        if delta > tau_e:
            current = candidate
            events.append(
                ErasureEvent(
                    tuple=t,
                    kind="wrong_attribute",
                    score_before=score_before,
                    score_after=score_after,
                    delta=delta,
                )
            )
    return current, events


def filter_candidates(
    object_label: str,
    dimension_id: str,
    labels: Sequence[AttributeLabel],
    taxonomy: Taxonomy,
    chat_backend: ChatBackend,
    rec: _Recorder | None = None,
) -> tuple[list[AttributeLabel], bool]:
    """Ask the chat backend which candidate attributes are plausible for the
    object; an empty or unusable verdict falls back to the full list so
    supplementing is never blocked outright.

    Returns (kept labels in input order, fallback_used).
    """
    rec = rec or _Recorder()
    rec.stage = "filter"
    display = taxonomy.dimension(dimension_id).display_name
    request = build_filter_prompt(object_label, display, [l.canonical for l in labels])
    reply = rec.chat(chat_backend, request)

    kept: list[AttributeLabel] = []
    if reply.strip().lower() not in {"", NONE_SENTINEL}:
        mentioned: set[str] = set()
        for part in reply.replace("\n", ",").split(","):
            part = part.strip()
            if not part:
                continue
            matched = canonicalize_attribute(part, dimension_id, taxonomy)
            if hasattr(matched, "canonical"):
                mentioned.add(matched.canonical)
        kept = [l for l in labels if l.canonical in mentioned]
    if not kept:
        rec.warn(
            f"candidate filter kept nothing for ({object_label}, {dimension_id}); "
            "falling back to the full list"
        )
        return list(labels), True
    return kept, False


def supplement(
    description: str,
    missing_dims: Sequence[str],
    object_label: str,
    crop_bytes: bytes,
    taxonomy: Taxonomy,
    chat_backend: ChatBackend,
    itm_backend: ItmBackend,
    config: RefinerConfig,
    rec: _Recorder | None = None,
) -> tuple[list[SupplementEvent], list[FilteredCandidate], str]:
    """Tag each missing dimension with its best-scoring attribute phrase and
    weave every selected attribute into the description with one rewrite.

    At most one attribute is added per dimension: the ITM argmax over
    candidate phrases, kept only when its score exceeds tau_c. Ties break by
    the dimension's label declaration order.
    """
    rec = rec or _Recorder()
    selected: list[SupplementEvent] = []
    filtered_out: list[FilteredCandidate] = []

    for dim_id in taxonomy.sort_dimensions(missing_dims):
        labels = list(taxonomy.labels_for(dim_id))
        if not labels:
            rec.warn(f"no candidate attributes for dimension {dim_id!r}; skipped")
            continue
        if config.enable_filtering:
            kept, _fallback = filter_candidates(
                object_label, dim_id, labels, taxonomy, chat_backend, rec
            )
            for label in labels:
                if label not in kept:
                    filtered_out.append(
                        FilteredCandidate(dimension_id=dim_id, attribute=label.canonical)
                    )
            labels = kept
        rec.stage = "supplement_itm"
        best_label: AttributeLabel | None = None
        best_score = float("-inf")
        for label in labels:
            phrase = attribute_phrase(object_label, label.canonical)
            score = rec.itm(itm_backend, crop_bytes, phrase)
            if score > best_score:
                best_label, best_score = label, score
        if best_label is not None and best_score > config.tau_c:
            selected.append(
                SupplementEvent(dimension_id=dim_id, attribute=best_label.canonical, score=best_score)
            )

    if not selected:
        return selected, filtered_out, description

    rec.stage = "rewrite"
    facts = [
        (taxonomy.dimension(ev.dimension_id).display_name, ev.attribute) for ev in selected
    ]
    request = build_rewrite_prompt(object_label, description, facts)
    rewritten = rec.chat(chat_backend, request)
    if not rewritten.strip():
        rec.warn("rewrite reply empty; appending facts verbatim")
        rewritten = description + " " + " ".join(f"{d}: {a}." for d, a in facts)
    return selected, filtered_out, rewritten


def run_pipeline(
    record: InstanceRecord,
    description: str,
    taxonomy: Taxonomy,
    chat_backend: ChatBackend,
    itm_backend: ItmBackend,
    config: RefinerConfig | None = None,
    source_name: str = "",
    crop_bytes: bytes | None = None,
) -> RefinementTrace:
    """Run extract -> erase -> supplement -> rewrite over one record.

    Any step failure aborts the record and returns a trace up to the failure
    point with ``error`` set; batch runners continue with the next record.
    ``crop_bytes`` may be pre-computed; otherwise the record's image is
    loaded and cropped on first ITM use.
    """
    config = config or RefinerConfig()
    if record.user_intent is None:
        raise ValueError(f"record {record.record_id} has no user intent assigned")
    intent = record.user_intent
    rec = _Recorder()

    erasures: list[ErasureEvent] = []
    supplements: list[SupplementEvent] = []
    filtered_out: list[FilteredCandidate] = []
    intermediates: list[IntermediateText] = []
    extraction: ExtractionResult | None = None
    current = description
    error: str | None = None

    region = crop_bytes

    def region_bytes() -> bytes:
        nonlocal region
        if region is None:
            region = crop_region_bytes(record, warn_sink=rec.warnings)
        return region

    try:
        rec.stage = "extract"
        extraction = extract(
            description, record.object_label, taxonomy, chat_backend, on_call=rec.observe_chat
        )
        if extraction.dropped_tuples:
            rec.warn(f"{extraction.dropped_tuples} tuple(s) dropped: dimension not in taxonomy")
        if extraction.skipped_lines:
            rec.warn(f"{extraction.skipped_lines} reply line(s) outside the tuple grammar")
        working_extraction = extraction

        if config.enable_erasing:
            current, redundant_events, recheck = erase_redundant(
                current,
                extraction,
                intent,
                record.object_label,
                taxonomy,
                chat_backend,
                max_erase_passes=config.max_erase_passes,
                rec=rec,
            )
            erasures.extend(redundant_events)
            if recheck is not None:
                working_extraction = recheck
            intermediates.append(IntermediateText(stage="after_redundant_erasure", text=current))

            user_tuples = [
                t for t in working_extraction.tuples if t.dimension_id in set(intent)
            ]
            current, wrong_events = erase_wrong_attributes(
                current,
                user_tuples,
                region_bytes() if user_tuples else b"",
                record.object_label,
                taxonomy,
                chat_backend,
                itm_backend,
                config.tau_e,
                rec=rec,
            )
            erasures.extend(wrong_events)
            intermediates.append(
                IntermediateText(stage="after_wrong_attribute_erasure", text=current)
            )

        if config.enable_supplementing:
            # Dimensions whose content was just erased re-enter the missing
            # set, so a wrong attribute can be replaced by a supplemented one.
            if erasures:
                rec.stage = "missing_recheck"
                post = extract(
                    current, record.object_label, taxonomy, chat_backend, on_call=rec.observe_chat
                )
                present = set(post.contained_dimensions)
            else:
                present = set(working_extraction.contained_dimensions)
            missing = [d for d in intent if d not in present]
            if missing:
                supplements, filtered_out, current = supplement(
                    current,
                    missing,
                    record.object_label,
                    region_bytes(),
                    taxonomy,
                    chat_backend,
                    itm_backend,
                    config,
                    rec=rec,
                )
            intermediates.append(IntermediateText(stage="after_supplement", text=current))
    except DimfitError as exc:
        error = f"{type(exc).__name__}: {exc}"
    except (OSError, ValueError) as exc:
        error = f"{type(exc).__name__}: {exc}"

    return RefinementTrace(
        record_id=record.record_id,
        source_name=source_name,
        original=description,
        user_intent=tuple(intent),
        extraction=extraction,
        erasures=tuple(erasures),
        filtered_out=tuple(filtered_out),
        supplements=tuple(supplements),
        intermediates=tuple(intermediates),
        warnings=tuple(rec.warnings),
        calls=tuple(rec.calls),
        final=current,
        modified=bool(erasures or supplements),
        error=error,
    )


def scripted_backends_from_trace(
    trace: RefinementTrace,
) -> tuple[ScriptedChatBackend, ScriptedItmBackend]:
    """Build scripted backends from a trace's recorded calls; re-running the
    pipeline against them reproduces the trace's final text byte-for-byte."""
    chat_entries: dict[str, str] = {}
    itm_exact: dict[tuple[str, str], float] = {}
    for call in trace.calls:
        if call.kind == "chat":
            chat_entries[prompt_fingerprint(call.system or "", call.user or "")] = call.reply or ""
        else:
            itm_exact[(call.image_fp or "", call.text or "")] = call.score or 0.0
    return (
        ScriptedChatBackend(chat_entries, label=f"trace:{trace.record_id}"),
        ScriptedItmBackend(exact=itm_exact, label=f"trace:{trace.record_id}"),
    )
