from __future__ import annotations

from pathlib import Path

import pytest

from conftest import make_record
from dimfit.errors import EmptyBatch, JudgeParseError
from dimfit.gateway import ChatResponse
from dimfit.simulators import RuleBasedChat, RuleChatConfig
from dimfit.validity import (
    ValidityEvaluator,
    ValidityJudgment,
    format_judge_reply,
    judge_system_instruction,
    parse_judge_reply,
    relative_batch,
)

GOLDEN = Path(__file__).parent / "data" / "judge_instruction_golden.txt"


def test_system_instruction_is_frozen():
    # The judging protocol rests on this exact text; any drift must be a
    # deliberate, reviewed change to both copies.
    assert judge_system_instruction().encode() == GOLDEN.read_bytes()


def test_parse_reference_reply():
    s1, s2, reason = parse_judge_reply("Accuracy: 7 9\nReason: assistant 2 hallucinated less")
    assert (s1, s2) == (7, 9)
    assert reason == "assistant 2 hallucinated less"


def test_parse_rejects_missing_line():
    with pytest.raises(JudgeParseError):
        parse_judge_reply("no scores here")


def test_parse_rejects_out_of_scale():
    with pytest.raises(JudgeParseError):
        parse_judge_reply("Accuracy: 0 11\nReason: bad")


def test_render_parse_round_trip_full_grid():
    for s1 in range(1, 11):
        for s2 in range(1, 11):
            reply = format_judge_reply(s1, s2, "because")
            assert parse_judge_reply(reply) == (s1, s2, "because")


def test_relative_batch_reference_values():
    assert relative_batch([(7, 9), (8, 8)]) == pytest.approx(88.9, abs=0.05)
    assert relative_batch([(5, 10)]) == 50.0
    assert relative_batch([(6, 6), (9, 9)]) == 100.0
    with pytest.raises(EmptyBatch):
        relative_batch([])


class _CountingChat:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        return self.inner.complete(request)

    def identity(self):
        return "counting"


def test_build_reference_cached(taxonomy, tmp_path):
    record = make_record(tmp_path, "v1", obj="car", gt=(("color", "black"), ("size", "large")))
    backend = _CountingChat(RuleBasedChat())
    evaluator = ValidityEvaluator(backend)
    first = evaluator.build_reference(record)
    second = evaluator.build_reference(record)
    assert first == second
    assert "color: black." in first and "size: large." in first
    assert backend.calls == 1


def test_build_reference_requires_attributes(taxonomy, tmp_path):
    record = make_record(tmp_path, "v2")
    evaluator = ValidityEvaluator(RuleBasedChat())
    with pytest.raises(ValueError):
        evaluator.build_reference(record)


def _judged_with_position(tmp_path, want_position: int) -> ValidityJudgment:
    record = make_record(tmp_path, f"v{want_position}", obj="car", gt=(("color", "black"),))
    backend = RuleBasedChat(RuleChatConfig(judge_scores={"car": (7, 9)}))
    evaluator = ValidityEvaluator(backend)
    order_seed = 0
    while True:
        import random

        if random.Random(order_seed).choice((1, 2)) == want_position:
            break
        order_seed += 1
    return evaluator.judge("candidate text", "reference text", record, order_seed=order_seed)


def test_judge_maps_scores_through_assistant_order(tmp_path):
    as_first = _judged_with_position(tmp_path, 1)
    assert as_first.candidate_position == 1
    assert (as_first.score_candidate, as_first.score_reference) == (7, 9)
    assert as_first.relative == pytest.approx(7 / 9)

    as_second = _judged_with_position(tmp_path, 2)
    assert as_second.candidate_position == 2
    assert (as_second.score_candidate, as_second.score_reference) == (9, 7)


def test_judge_parse_error_after_retry(tmp_path):
    record = make_record(tmp_path, "v3", obj="car", gt=(("color", "black"),))

    class Chatty:
        def complete(self, request):
            return ChatResponse(text="I decline to score.", finish_reason="stop")

        def identity(self):
            return "chatty"

    evaluator = ValidityEvaluator(Chatty())
    with pytest.raises(JudgeParseError):
        evaluator.judge("a", "b", record, order_seed=0)


def test_judge_retry_recovers(tmp_path):
    record = make_record(tmp_path, "v4", obj="car", gt=(("color", "black"),))

    class SecondTry:
        def __init__(self):
            self.calls = 0

        def complete(self, request):
            self.calls += 1
            if self.calls == 1:
                return ChatResponse(text="hmm", finish_reason="stop")
            return ChatResponse(text=format_judge_reply(8, 8, "fine"), finish_reason="stop")

        def identity(self):
            return "second-try"

    backend = SecondTry()
    evaluator = ValidityEvaluator(backend)
    judgment = evaluator.judge("a", "b", record, order_seed=0)
    assert backend.calls == 2
    assert judgment.score_candidate == 8


def test_judgment_relative_invariant():
    with pytest.raises(ValueError):
        ValidityJudgment(
            record_id="x",
            score_candidate=7,
            score_reference=9,
            relative=0.5,
            reason="",
            raw_reply="",
            candidate_position=1,
        )
