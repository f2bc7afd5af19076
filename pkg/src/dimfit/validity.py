"""Judge-assisted validity scoring.

A judge model first synthesizes a reference description from the expert
attribute annotations, then rates the candidate and the reference side by
side on a 1-10 accuracy scale under a fixed system instruction. Scores are
reported relative to the reference's own score so different candidates stay
comparable. The system instruction is shipped as an immutable resource and
byte-compared in tests: the whole protocol rests on that exact text. The
assistant order is randomized per call with the mapping recorded, defending
mechanically against position bias.
"""
from __future__ import annotations

import random
import re
from importlib import resources

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .corpus import InstanceRecord
from .errors import EmptyBatch, JudgeParseError
from .gateway import ChatBackend, ChatRequest, chat
from .prompts import build_judge_user, build_reference_prompt

_ACCURACY_LINE = re.compile(r"^Accuracy:\s*(\d+)\s+(\d+)\s*$", re.MULTILINE)
_REASON_LINE = re.compile(r"^Reason:\s*(.*)$", re.MULTILINE | re.DOTALL)


def judge_system_instruction() -> str:
    return (
        resources.files("dimfit")
        .joinpath("resources/judge_system_instruction.txt")
        .read_text()
    )


class ValidityJudgment(BaseModel):
    model_config = ConfigDict(frozen=True)

    record_id: str
    score_candidate: int
    score_reference: int
    relative: float
    reason: str
    raw_reply: str
    candidate_position: int

    @field_validator("score_candidate", "score_reference")
    @classmethod
    def _score_in_scale(cls, v: int) -> int:
        if not 1 <= v <= 10:
            raise ValueError("judge scores lie on a 1-10 scale")
        return v

    @field_validator("candidate_position")
    @classmethod
    def _position(cls, v: int) -> int:
        if v not in (1, 2):
            raise ValueError("candidate_position is 1 or 2")
        return v

    @model_validator(mode="after")
    def _relative_consistent(self):
        if self.score_reference > 0:
            expected = self.score_candidate / self.score_reference
            if abs(self.relative - expected) > 1e-12:
                raise ValueError("relative must equal score_candidate / score_reference")
        return self


def format_judge_reply(score_1: int, score_2: int, reason: str = "") -> str:
    """Render a well-formed judge reply; the inverse of parse_judge_reply."""
    return f"Accuracy: {score_1} {score_2}\nReason: {reason}"


def parse_judge_reply(reply: str) -> tuple[int, int, str]:
    m = _ACCURACY_LINE.search(reply)
    if m is None:
        raise JudgeParseError("reply lacks an 'Accuracy: <s1> <s2>' line")
    s1, s2 = int(m.group(1)), int(m.group(2))
    if not (1 <= s1 <= 10 and 1 <= s2 <= 10):
        raise JudgeParseError(f"scores ({s1}, {s2}) outside the 1-10 scale")
    reason_match = _REASON_LINE.search(reply)
    reason = reason_match.group(1).strip() if reason_match else ""
    return s1, s2, reason


class ValidityEvaluator:
    """Caches reference descriptions per record and runs pairwise judgments."""

    def __init__(self, chat_backend: ChatBackend):
        self.chat_backend = chat_backend
        self._reference_cache: dict[str, str] = {}

    def build_reference(self, record: InstanceRecord) -> str:
        if not record.gt_attributes:
            raise ValueError(f"record {record.record_id} has no expert attributes")
        cached = self._reference_cache.get(record.record_id)
        if cached is not None:
            return cached
        request = build_reference_prompt(
            record.object_label,
            record.box,
            [(a.dimension, a.value) for a in record.gt_attributes],
        )
        text = chat(self.chat_backend, request).text
        self._reference_cache[record.record_id] = text
        return text

    def judge(
        self,
        candidate: str,
        reference: str,
        record: InstanceRecord,
        rng: random.Random | None = None,
        order_seed: int | None = None,
    ) -> ValidityJudgment:
        """Score candidate vs reference; one retry when the reply lacks the
        Accuracy line, then JudgeParseError."""
        if not candidate.strip() or not reference.strip():
            raise ValueError("both descriptions must be non-empty")
        if rng is None:
            rng = random.Random(order_seed)
        candidate_position = rng.choice((1, 2))
        first, second = (
            (candidate, reference) if candidate_position == 1 else (reference, candidate)
        )
        user = build_judge_user(
            record.object_label,
            record.box,
            [(a.dimension, a.value) for a in record.gt_attributes],
            assistant_1=first,
            assistant_2=second,
        )
        request = ChatRequest(system=judge_system_instruction(), user=user)
        reply = chat(self.chat_backend, request).text
        try:
            s1, s2, reason = parse_judge_reply(reply)
        except JudgeParseError:
            retry = ChatRequest(
                system=judge_system_instruction(),
                user=user
                + "\n\nYour previous reply was not in the required format. "
                "Follow the output format exactly.",
            )
            reply = chat(self.chat_backend, retry).text
            s1, s2, reason = parse_judge_reply(reply)

        if candidate_position == 1:
            score_candidate, score_reference = s1, s2
        else:
            score_candidate, score_reference = s2, s1
        return ValidityJudgment(
            record_id=record.record_id,
            score_candidate=score_candidate,
            score_reference=score_reference,
            relative=score_candidate / score_reference,
            reason=reason,
            raw_reply=reply,
            candidate_position=candidate_position,
        )


def relative_batch(judgments: list[ValidityJudgment] | list[tuple[int, int]]) -> float:
    """Mean relative score scaled to the 0-100 convention."""
    if not judgments:
        raise EmptyBatch("relative_batch needs at least one judgment")
    ratios = []
    for j in judgments:
        if isinstance(j, ValidityJudgment):
            ratios.append(j.relative)
        else:
            cand, ref = j
            ratios.append(cand / ref)
    return 100.0 * sum(ratios) / len(ratios)
