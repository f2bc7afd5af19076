from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dimfit.errors import EmptyCorpus
from dimfit.metrics import (
    RecordOutcome,
    aggregate,
    attribute_iou,
    classify,
    combination_frequency,
    mean_std,
    modified_ratio,
    render_table,
    summarize_source,
)
from dimfit.taxonomy import load_taxonomy


def _tax(*dims):
    return load_taxonomy(
        {
            "dimensions": [{"id": d, "display_name": d, "aliases": []} for d in dims],
            "attributes": [],
        }
    )


def oracle_aggregate(outcomes, dims):
    """Independent per-(record, dimension) recomputation of the three means."""
    per_dim = {}
    for t in dims:
        tp = fp = fn = 0
        for o in outcomes:
            wanted = t in o.intent
            present = t in o.detected
            if wanted and present:
                tp += 1
            elif wanted:
                fn += 1
            elif present:
                fp += 1
        dr = tp / (tp + fn) if tp + fn else None
        dp = tp / (tp + fp) if tp + fp else None
        if dr is None and dp is None:
            per_dim[t] = None
            continue
        if dr is None or dp is None:
            df1 = None
        elif dr + dp == 0:
            df1 = 0.0
        else:
            df1 = 2 * dp * dr / (dp + dr)
        per_dim[t] = (dr, dp, df1)

    def mean(idx):
        vals = [v[idx] for v in per_dim.values() if v is not None and v[idx] is not None]
        return sum(vals) / len(vals) if vals else 0.0

    excluded = tuple(t for t in dims if per_dim[t] is None)
    return mean(0), mean(1), mean(2), excluded


def test_classify_reference_cases():
    taxonomy = _tax("color", "size")
    assert classify(["color"], ["color", "size"], taxonomy) == {"color": "tp", "size": "fp"}
    assert classify(["color", "size"], ["size"], taxonomy) == {"color": "fn", "size": "tp"}


def test_worked_two_record_example():
    taxonomy = _tax("color", "size")
    outcomes = [
        RecordOutcome(record_id="r1", intent=("color",), detected=("color", "size")),
        RecordOutcome(record_id="r2", intent=("color", "size"), detected=("size",)),
    ]
    report = aggregate(outcomes, taxonomy)
    assert report.rates["color"].dr == 0.5
    assert report.rates["color"].dp == 1.0
    assert report.rates["size"].dr == 1.0
    assert report.rates["size"].dp == 0.5
    assert report.mdr == 0.75
    assert report.mdp == 0.75
    assert report.mdf1 == 2 / 3
    assert report.per_record_coverage == {"r1": 1, "r2": 1}


def test_perfect_corpus_scores_one():
    taxonomy = _tax("color", "size", "pose")
    outcomes = [
        RecordOutcome(record_id=f"r{i}", intent=("color", "pose"), detected=("color", "pose"))
        for i in range(5)
    ]
    report = aggregate(outcomes, taxonomy)
    assert report.mdr == report.mdp == report.mdf1 == 1.0


def test_unused_dimension_excluded_and_listed():
    taxonomy = _tax("color", "size", "pose")
    outcomes = [RecordOutcome(record_id="r", intent=("color",), detected=("color",))]
    report = aggregate(outcomes, taxonomy)
    assert report.excluded_dimensions == ("size", "pose")
    assert report.rates["size"].dr is None


def test_aggregate_empty_corpus():
    with pytest.raises(EmptyCorpus):
        aggregate([], _tax("color"))


def test_aggregate_one_sided_denominator():
    # size never requested but detected once: only precision is defined.
    taxonomy = _tax("color", "size")
    outcomes = [RecordOutcome(record_id="r", intent=("color",), detected=("color", "size"))]
    report = aggregate(outcomes, taxonomy)
    assert report.rates["size"].dr is None
    assert report.rates["size"].dp == 0.0
    assert report.rates["size"].df1 is None
    assert report.mdr == 1.0  # only color contributes
    assert report.mdp == 0.5  # color 1.0, size 0.0
    assert report.excluded_dimensions == ()


def _random_outcomes(rng: random.Random, dims, n_records):
    outcomes = []
    for i in range(n_records):
        intent = tuple(sorted(rng.sample(dims, rng.randint(1, len(dims)))))
        detected = tuple(sorted(rng.sample(dims, rng.randint(0, len(dims)))))
        outcomes.append(RecordOutcome(record_id=f"r{i}", intent=intent, detected=detected))
    return outcomes


def test_aggregate_matches_oracle_randomized():
    rng = random.Random(1234)
    for _ in range(50):
        n_dims = rng.randint(1, 8)
        dims = [f"d{j}" for j in range(n_dims)]
        taxonomy = _tax(*dims)
        outcomes = _random_outcomes(rng, dims, rng.randint(1, 50))
        report = aggregate(outcomes, taxonomy)
        mdr, mdp, mdf1, excluded = oracle_aggregate(outcomes, dims)
        assert abs(report.mdr - mdr) <= 1e-12
        assert abs(report.mdp - mdp) <= 1e-12
        assert abs(report.mdf1 - mdf1) <= 1e-12
        assert report.excluded_dimensions == excluded


@st.composite
def _outcome_corpora(draw):
    dims = [f"d{j}" for j in range(draw(st.integers(min_value=1, max_value=6)))]
    n = draw(st.integers(min_value=1, max_value=12))
    outcomes = []
    for i in range(n):
        intent = draw(st.lists(st.sampled_from(dims), min_size=1, unique=True))
        detected = draw(st.lists(st.sampled_from(dims), unique=True))
        outcomes.append(
            RecordOutcome(record_id=f"r{i}", intent=tuple(intent), detected=tuple(detected))
        )
    return dims, outcomes


@given(_outcome_corpora())
def test_aggregate_matches_oracle_property(corpus):
    dims, outcomes = corpus
    report = aggregate(outcomes, _tax(*dims))
    mdr, mdp, mdf1, excluded = oracle_aggregate(outcomes, dims)
    assert abs(report.mdr - mdr) <= 1e-12
    assert abs(report.mdp - mdp) <= 1e-12
    assert abs(report.mdf1 - mdf1) <= 1e-12
    assert report.excluded_dimensions == excluded


@given(st.randoms(use_true_random=False))
def test_aggregate_permutation_invariant(rng):
    dims = ["a", "b", "c"]
    taxonomy = _tax(*dims)
    outcomes = _random_outcomes(random.Random(99), dims, 12)
    shuffled = outcomes[:]
    rng.shuffle(shuffled)
    assert aggregate(outcomes, taxonomy) == aggregate(shuffled, taxonomy)


@given(st.integers(min_value=0, max_value=6))
def test_df1_bounded_by_max_of_dp_dr(seed):
    dims = ["a", "b", "c", "d"]
    taxonomy = _tax(*dims)
    outcomes = _random_outcomes(random.Random(seed), dims, 20)
    report = aggregate(outcomes, taxonomy)
    for dim in dims:
        rates = report.rates[dim]
        if rates.df1 is not None:
            assert rates.df1 <= max(rates.dp, rates.dr) + 1e-12
    assert 0.0 <= report.mdr <= 1.0
    assert 0.0 <= report.mdp <= 1.0
    assert 0.0 <= report.mdf1 <= 1.0


def test_modified_ratio():
    assert modified_ratio([True, True, True, False]) == 0.75
    assert modified_ratio([False, False]) == 0.0
    with pytest.raises(EmptyCorpus):
        modified_ratio([])


def test_attribute_iou_reference_cases():
    report = attribute_iou(
        [("car", "color", "red"), ("car", "size", "large")],
        [("car", "color", "red"), ("car", "size", "small")],
    )
    assert report.per_object["car"] == pytest.approx(1 / 3)

    same = [("cat", "color", "black"), ("cat", "pose", "sitting")]
    assert attribute_iou(same, same).per_object["cat"] == 1.0
    assert attribute_iou(same, same).mean == 1.0


def test_attribute_iou_mean_over_objects():
    report = attribute_iou(
        [("a", "d", "x"), ("b", "d", "y")],
        [("a", "d", "x")],
    )
    assert report.per_object == {"a": 1.0, "b": 0.0}
    assert report.mean == 0.5


def test_combination_frequency_counts():
    rows = combination_frequency(
        [
            ("dog", ["pose"]),
            ("dog", ["pose"]),
            ("dog", ["color", "pose"]),
            ("cat", ["size"]),
        ]
    )
    as_dict = {(r.object, r.dimensions): r.count for r in rows}
    assert as_dict[("dog", ("pose",))] == 2
    assert as_dict[("dog", ("color", "pose"))] == 1
    assert as_dict[("cat", ("size",))] == 1
    assert [(r.object, r.dimensions) for r in rows] == sorted(
        (r.object, r.dimensions) for r in rows
    )
    assert combination_frequency([]) == []


def _spearman(xs, ys):
    def ranks(vals):
        order = sorted(range(len(vals)), key=lambda i: vals[i])
        out = [0.0] * len(vals)
        for rank, i in enumerate(order):
            out[i] = float(rank)
        return out

    rx, ry = ranks(xs), ranks(ys)
    mx = sum(rx) / len(rx)
    my = sum(ry) / len(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx) ** 0.5
    vy = sum((b - my) ** 2 for b in ry) ** 0.5
    return cov / (vx * vy)


def test_frequency_recall_trend_on_constructed_corpus():
    """On a corpus built so often-described combinations are also recalled
    more often, frequency and per-combination recall correlate positively."""
    taxonomy = _tax("color", "pose", "size")
    combos = [
        ("dog", ("pose",), 10, 0.9),
        ("dog", ("color",), 6, 0.5),
        ("cat", ("size",), 2, 0.0),
    ]
    freq_items = []
    outcomes = []
    rid = 0
    for obj, dims, freq, recall in combos:
        hits = round(freq * recall)
        for i in range(freq):
            freq_items.append((obj, list(dims)))
            detected = dims if i < hits else ()
            outcomes.append(
                RecordOutcome(record_id=f"r{rid}", intent=dims, detected=detected)
            )
            rid += 1

    counts = {(r.object, r.dimensions): r.count for r in combination_frequency(freq_items)}
    freqs, recalls = [], []
    for obj, dims, freq, recall in combos:
        freqs.append(counts[(obj, dims)])
        subset = [o for o in outcomes if o.intent == dims]
        hit = sum(1 for o in subset if set(dims) <= set(o.detected))
        recalls.append(hit / len(subset))
    assert _spearman(freqs, recalls) > 0


def test_mean_std_and_render():
    mean, std = mean_std([0.7, 0.8, 0.9])
    assert mean == pytest.approx(0.8)
    assert std == pytest.approx(0.0816496580927726)
    assert mean_std([0.5]) == (0.5, 0.0)

    taxonomy = _tax("color")
    outcomes = [RecordOutcome(record_id="r", intent=("color",), detected=("color",))]
    per_seed = {0: aggregate(outcomes, taxonomy), 1: aggregate(outcomes, taxonomy)}
    summary = summarize_source("demo", per_seed)
    table = render_table([summary])
    assert "demo" in table
    assert "100.0 ± 0.0" in table
