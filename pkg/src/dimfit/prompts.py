"""Chat prompt templates for every stage of the refinement pipeline.

The templates use a rigid line grammar (marker lines like "Object:" and
"Description:") so replies can be parsed deterministically and scripted
backends can recognize each stage. All pipeline chat calls run at
temperature 0 so runs replay exactly.
"""
from __future__ import annotations

from typing import Sequence

from .gateway import ChatRequest
from .taxonomy import Taxonomy

NONE_SENTINEL = "(none)"

EXTRACT_SYSTEM_TEMPLATE = (
    "You extract facts about one target object from a description.\n"
    "Report one fact per line, exactly in this form: (object | dimension | attribute)\n"
    "The dimension must be one of: {dimension_ids}.\n"
    "The attribute is the value the description gives for that dimension.\n"
    "If the description states no attribute of the listed dimensions, reply "
    "with the single line: (none)"
)

EXTRACT_USER_TEMPLATE = "Object: {object_label}\nDescription: {description}"

REFORMAT_NOTE = (
    "\nYour previous reply was not in the required format. Reply only with "
    "lines of the form (object | dimension | attribute), or the single line (none)."
)

ERASE_SYSTEM = (
    "You edit object descriptions. Remove the content that states the given "
    "fact and change nothing else. Reply with only the edited description."
)

ERASE_USER_TEMPLATE = (
    "Object: {object_label}\n"
    "Dimension: {dimension}\n"
    'Attribute: "{mention}"\n'
    "Description: {description}"
)

FILTER_SYSTEM = (
    "You judge which attribute values can plausibly describe an object in "
    "the real world.\n"
    "Reply with the plausible values from the candidate list, comma-separated, "
    "on one line.\n"
    "Reply (none) if no candidate is plausible."
)

FILTER_USER_TEMPLATE = "Object: {object_label}\nDimension: {dimension}\nCandidates: {candidates}"

REWRITE_SYSTEM = (
    "You edit object descriptions. Integrate the given facts into the "
    "description so the result reads as one natural text. Keep all existing "
    "content. Reply with only the revised description."
)

REWRITE_USER_TEMPLATE = (
    "Object: {object_label}\nDescription: {description}\nFacts to integrate:\n{facts}"
)

REFERENCE_SYSTEM = (
    "You write a detailed, factual description of a target object from its "
    "annotations. Mention every annotated attribute exactly once. Reply with "
    "only the description."
)

REFERENCE_USER_TEMPLATE = (
    "Object: {object_label}\n"
    "Bounding box: ({x1:.3f}, {y1:.3f}, {x2:.3f}, {y2:.3f})\n"
    "Annotated attributes:\n{attributes}"
)

JUDGE_USER_TEMPLATE = (
    "[Context]\n"
    "Object: {object_label}\n"
    "Location: ({x1:.3f}, {y1:.3f}, {x2:.3f}, {y2:.3f})\n"
    "Attributes: {attributes}\n"
    "{captions}"
    "\n[Assistant 1]\n{assistant_1}\n\n[Assistant 2]\n{assistant_2}"
)


def build_extraction_prompt(
    taxonomy: Taxonomy, object_label: str, description: str, reformat: bool = False
) -> ChatRequest:
    system = EXTRACT_SYSTEM_TEMPLATE.format(dimension_ids=", ".join(taxonomy.dimension_ids()))
    user = EXTRACT_USER_TEMPLATE.format(object_label=object_label, description=description)
    if reformat:
        user += REFORMAT_NOTE
    return ChatRequest(system=system, user=user)


def build_erase_prompt(
    object_label: str, dimension_display: str, mention: str, description: str
) -> ChatRequest:
    user = ERASE_USER_TEMPLATE.format(
        object_label=object_label,
        dimension=dimension_display,
        mention=mention,
        description=description,
    )
    return ChatRequest(system=ERASE_SYSTEM, user=user)


def build_filter_prompt(
    object_label: str, dimension_display: str, candidates: Sequence[str]
) -> ChatRequest:
    user = FILTER_USER_TEMPLATE.format(
        object_label=object_label,
        dimension=dimension_display,
        candidates=", ".join(candidates),
    )
    return ChatRequest(system=FILTER_SYSTEM, user=user)


def build_rewrite_prompt(
    object_label: str, description: str, facts: Sequence[tuple[str, str]]
) -> ChatRequest:
    lines = "\n".join(f"- {dimension}: {attribute}" for dimension, attribute in facts)
    user = REWRITE_USER_TEMPLATE.format(
        object_label=object_label, description=description, facts=lines
    )
    return ChatRequest(system=REWRITE_SYSTEM, user=user)


def build_reference_prompt(
    object_label: str,
    box: tuple[float, float, float, float],
    attributes: Sequence[tuple[str, str]],
) -> ChatRequest:
    lines = "\n".join(f"- {dimension}: {value}" for dimension, value in attributes)
    user = REFERENCE_USER_TEMPLATE.format(
        object_label=object_label, x1=box[0], y1=box[1], x2=box[2], y2=box[3], attributes=lines
    )
    return ChatRequest(system=REFERENCE_SYSTEM, user=user)


def build_judge_user(
    object_label: str,
    box: tuple[float, float, float, float],
    attributes: Sequence[tuple[str, str]],
    assistant_1: str,
    assistant_2: str,
    captions: Sequence[str] | None = None,
) -> str:
    attr_text = "; ".join(f"{d}={v}" for d, v in attributes) or "(none annotated)"
    # The corpus schema carries no image-level captions; the block is simply
    # omitted when none are supplied rather than synthesized.
    caption_block = ""
    if captions:
        caption_block = "Image captions:\n" + "\n".join(captions) + "\n"
    return JUDGE_USER_TEMPLATE.format(
        object_label=object_label,
        x1=box[0],
        y1=box[1],
        x2=box[2],
        y2=box[3],
        attributes=attr_text,
        captions=caption_block,
        assistant_1=assistant_1,
        assistant_2=assistant_2,
    )


def attribute_phrase(object_label: str, synonym: str) -> str:
    """Phrase scored by the ITM tagger when probing a candidate attribute,
    e.g. "a car is black"."""
    article = "an" if object_label[:1].lower() in "aeiou" else "a"
    return f"{article} {object_label} is {synonym}"
