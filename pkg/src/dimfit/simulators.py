"""Deterministic behavioral backends for tests, demos, and scripted runs.

RuleBasedChat understands the pipeline's prompt templates and operates on a
structured description dialect where facts appear as ``dimension: value.``
clauses, e.g. ``a couch. material: leather. size: large.``. That makes it a
faithful stand-in for a real chat model: extraction reads the clauses,
erasure removes one, rewriting appends new ones, so re-extracting a refined
description reflects the edits. Controlled infidelities (extraction
blindness, filter verdicts, judge scores) are injected through the config.

RuleBasedItm scores by exact text match first, then ordered substring rules,
then a default; images are ignored, which is exactly what makes score tables
easy to engineer in tests.
"""
from __future__ import annotations

import hashlib
import json
import re

from pydantic import BaseModel, ConfigDict

from .gateway import ChatRequest, ChatResponse
from .prompts import (
    ERASE_SYSTEM,
    FILTER_SYSTEM,
    NONE_SENTINEL,
    REFERENCE_SYSTEM,
    REFORMAT_NOTE,
    REWRITE_SYSTEM,
)
from .taxonomy import normalize_mention
from .validity import format_judge_reply, judge_system_instruction

CLAUSE = re.compile(r"\b([a-z]+(?:[ _-][a-z]+)*):\s*([^.:]+)\.")

_EXTRACT_PREFIX = "You extract facts"


def parse_clauses(text: str) -> list[tuple[str, str]]:
    """All ``dimension: value.`` clauses of a dialect description, in order."""
    return [(m.group(1).strip(), m.group(2).strip()) for m in CLAUSE.finditer(text.lower())]


def render_clause(dimension: str, value: str) -> str:
    return f"{dimension}: {value}."


def _field(user: str, marker: str) -> str:
    m = re.search(rf"^{marker}: (.*)$", user, re.MULTILINE)
    return m.group(1).strip() if m else ""


def _tail_field(user: str, marker: str) -> str:
    idx = user.find(f"{marker}: ")
    return user[idx + len(marker) + 2 :] if idx >= 0 else ""


class RuleChatConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # Dimensions the extractor never reports even when a clause states them.
    extraction_blind: tuple[str, ...] = ()
    # "object|dimension" -> allowed attribute values; absent key keeps all.
    filter_allow: dict[str, tuple[str, ...]] = {}
    # object label -> (assistant 1 score, assistant 2 score).
    judge_scores: dict[str, tuple[int, int]] = {}
    default_judge: tuple[int, int] = (8, 8)


class RuleBasedChat:
    def __init__(self, config: RuleChatConfig | None = None):
        self.config = config or RuleChatConfig()

    def complete(self, request: ChatRequest) -> ChatResponse:
        system, user = request.system, request.user
        if system.startswith(_EXTRACT_PREFIX):
            return _reply(self._extract(user))
        if system == ERASE_SYSTEM:
            return _reply(self._erase(user))
        if system == FILTER_SYSTEM:
            return _reply(self._filter(user))
        if system == REWRITE_SYSTEM:
            return _reply(self._rewrite(user))
        if system == REFERENCE_SYSTEM:
            return _reply(self._reference(user))
        if system == judge_system_instruction():
            return _reply(self._judge(user))
        return ChatResponse(text="", finish_reason="empty")

    def identity(self) -> str:
        digest = hashlib.sha256(
            json.dumps(self.config.model_dump(), sort_keys=True).encode()
        ).hexdigest()[:12]
        return f"rule-chat:{digest}"

    # -- stage behaviors --------------------------------------------------

    def _extract(self, user: str) -> str:
        obj = _field(user, "Object")
        description = _tail_field(user, "Description")
        if description.endswith(REFORMAT_NOTE):
            description = description[: -len(REFORMAT_NOTE)]
        lines = [
            f"({obj} | {dim} | {value})"
            for dim, value in parse_clauses(description)
            if dim not in self.config.extraction_blind
        ]
        return "\n".join(lines) if lines else NONE_SENTINEL

    def _erase(self, user: str) -> str:
        dimension = _field(user, "Dimension")
        mention = _field(user, "Attribute").strip('"')
        description = _tail_field(user, "Description")
        clause = render_clause(dimension, mention)
        pattern = re.compile(re.escape(clause), re.IGNORECASE)
        edited = pattern.sub("", description, count=1)
        return re.sub(r"\s{2,}", " ", edited).strip()

    def _filter(self, user: str) -> str:
        obj = _field(user, "Object")
        dimension = _field(user, "Dimension")
        candidates = [c.strip() for c in _field(user, "Candidates").split(",") if c.strip()]
        allowed = self.config.filter_allow.get(f"{normalize_mention(obj)}|{dimension}")
        if allowed is not None:
            candidates = [c for c in candidates if c in allowed]
        return ", ".join(candidates) if candidates else NONE_SENTINEL

    def _rewrite(self, user: str) -> str:
        head, _, facts_block = user.partition("\nFacts to integrate:\n")
        description = _tail_field(head, "Description")
        additions = []
        for line in facts_block.splitlines():
            m = re.match(r"- (.+?): (.+)", line.strip())
            if m:
                additions.append(render_clause(m.group(1), m.group(2)))
        combined = description.strip()
        if additions:
            combined = (combined + " " + " ".join(additions)).strip()
        return combined

    def _reference(self, user: str) -> str:
        obj = _field(user, "Object")
        clauses = []
        for line in user.splitlines():
            m = re.match(r"- (.+?): (.+)", line.strip())
            if m:
                clauses.append(render_clause(m.group(1), m.group(2)))
        return f"a {obj}. " + " ".join(clauses) if clauses else f"a {obj}."

    def _judge(self, user: str) -> str:
        obj = _field(user, "Object")
        scores = self.config.judge_scores.get(
            normalize_mention(obj), self.config.default_judge
        )
        return format_judge_reply(scores[0], scores[1], "rule-based verdict")


def _reply(text: str) -> ChatResponse:
    if not text:
        return ChatResponse(text="", finish_reason="empty")
    return ChatResponse(text=text, finish_reason="stop")


class RuleItmConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    default: float = 0.8
    exact: dict[str, float] = {}
    contains: tuple[tuple[str, float], ...] = ()


class RuleBasedItm:
    def __init__(self, config: RuleItmConfig | None = None):
        self.config = config or RuleItmConfig()

    def score(self, image: bytes, text: str) -> float:
        key = normalize_mention(text)
        if key in self.config.exact:
            return self.config.exact[key]
        for needle, value in self.config.contains:
            if needle in key:
                return value
        return self.config.default

    def identity(self) -> str:
        digest = hashlib.sha256(
            json.dumps(self.config.model_dump(), sort_keys=True).encode()
        ).hexdigest()[:12]
        return f"rule-itm:{digest}"
