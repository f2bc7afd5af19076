"""Controllability metrics and experiment-side analyses.

A description is scored purely on its dimension set: for each dimension t of
the taxonomy, a record counts as a true positive when t is both requested
and present, a false negative when requested but absent, and a false
positive when present but not requested. Per-dimension recall, precision and
F1 are macro-averaged over dimensions (never over records). Dimensions with
both denominators zero are excluded from every mean and reported as such,
rather than silently scored 0.

The dimension set of a description under evaluation must come from the
extractor running against a judge backend configured independently of the
pipeline's own backend, so a pipeline never grades itself with its own
scripts.
"""
from __future__ import annotations

import statistics
from typing import Iterable, Mapping, Sequence

from pydantic import BaseModel, ConfigDict

from .errors import EmptyCorpus
from .refiner import RefinementTrace
from .taxonomy import Taxonomy

TP, FP, FN = "tp", "fp", "fn"


class DimensionCounts(BaseModel):
    model_config = ConfigDict(frozen=True)

    tp: int = 0
    fp: int = 0
    fn: int = 0


class DimensionRates(BaseModel):
    """Per-dimension recall/precision/F1; None marks an undefined rate
    (zero denominator), which drops the dimension from that mean only."""

    model_config = ConfigDict(frozen=True)

    dr: float | None
    dp: float | None
    df1: float | None


class RecordOutcome(BaseModel):
    model_config = ConfigDict(frozen=True)

    record_id: str
    intent: tuple[str, ...]
    detected: tuple[str, ...]


class ControllabilityReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    counts: dict[str, DimensionCounts]
    rates: dict[str, DimensionRates]
    mdr: float
    mdp: float
    mdf1: float
    r_m: float | None = None
    per_record_coverage: dict[str, int]
    excluded_dimensions: tuple[str, ...]


def classify(
    intent: Iterable[str], detected: Iterable[str], taxonomy: Taxonomy
) -> dict[str, str]:
    """Label each taxonomy dimension TP/FN/FP for one record; dimensions in
    neither set are omitted."""
    wanted = set(intent)
    present = set(detected)
    for dim in wanted | present:
        taxonomy.dimension_order(dim)  # raises UnknownDimension on bad input
    labels: dict[str, str] = {}
    for dim in taxonomy.dimension_ids():
        if dim in wanted and dim in present:
            labels[dim] = TP
        elif dim in wanted:
            labels[dim] = FN
        elif dim in present:
            labels[dim] = FP
    return labels


def _safe_div(num: int, den: int) -> float | None:
    return num / den if den else None


def _mean_defined(values: Iterable[float | None]) -> float:
    defined = [v for v in values if v is not None]
    return sum(defined) / len(defined) if defined else 0.0


def aggregate(
    outcomes: Sequence[RecordOutcome],
    taxonomy: Taxonomy,
    modified_flags: Sequence[bool] | None = None,
) -> ControllabilityReport:
    """Reduce per-record outcomes into the controllability report."""
    if not outcomes:
        raise EmptyCorpus("aggregate needs at least one record outcome")

    counts = {dim: {TP: 0, FP: 0, FN: 0} for dim in taxonomy.dimension_ids()}
    coverage: dict[str, int] = {}
    for outcome in outcomes:
        labels = classify(outcome.intent, outcome.detected, taxonomy)
        for dim, label in labels.items():
            counts[dim][label] += 1
        coverage[outcome.record_id] = len(set(outcome.intent) & set(outcome.detected))

    rates: dict[str, DimensionRates] = {}
    excluded: list[str] = []
    for dim in taxonomy.dimension_ids():
        c = counts[dim]
        if c[TP] + c[FN] == 0 and c[TP] + c[FP] == 0:
            excluded.append(dim)
            rates[dim] = DimensionRates(dr=None, dp=None, df1=None)
            continue
        dr = _safe_div(c[TP], c[TP] + c[FN])
        dp = _safe_div(c[TP], c[TP] + c[FP])
        if dr is None or dp is None:
            df1 = None
        elif dp + dr == 0:
            df1 = 0.0
        else:
            df1 = 2 * dp * dr / (dp + dr)
        rates[dim] = DimensionRates(dr=dr, dp=dp, df1=df1)

    included = [d for d in taxonomy.dimension_ids() if d not in excluded]
    report = ControllabilityReport(
        counts={d: DimensionCounts(**counts[d]) for d in taxonomy.dimension_ids()},
        rates=rates,
        mdr=_mean_defined(rates[d].dr for d in included),
        mdp=_mean_defined(rates[d].dp for d in included),
        mdf1=_mean_defined(rates[d].df1 for d in included),
        r_m=modified_ratio(modified_flags) if modified_flags is not None else None,
        per_record_coverage=coverage,
        excluded_dimensions=tuple(excluded),
    )
    return report


def modified_ratio(traces: Sequence[RefinementTrace] | Sequence[bool]) -> float:
    """Fraction of descriptions the pipeline actually changed."""
    if not traces:
        raise EmptyCorpus("modified_ratio needs at least one trace")
    flags = [t.modified if isinstance(t, RefinementTrace) else bool(t) for t in traces]
    return sum(flags) / len(flags)


class IouReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    per_object: dict[str, float]
    mean: float


def attribute_iou(
    gt_combos: Iterable[tuple[str, str, str]],
    predicted_combos: Iterable[tuple[str, str, str]],
) -> IouReport:
    """Per-object intersection-over-union between ground-truth and predicted
    (object, dimension, attribute) combinations, plus the mean over objects
    with a non-empty union."""
    gt_by_obj: dict[str, set[tuple[str, str]]] = {}
    pred_by_obj: dict[str, set[tuple[str, str]]] = {}
    for obj, dim, attr in gt_combos:
        gt_by_obj.setdefault(obj, set()).add((dim, attr))
    for obj, dim, attr in predicted_combos:
        pred_by_obj.setdefault(obj, set()).add((dim, attr))

    per_object: dict[str, float] = {}
    for obj in sorted(set(gt_by_obj) | set(pred_by_obj)):
        gt = gt_by_obj.get(obj, set())
        pred = pred_by_obj.get(obj, set())
        union = gt | pred
        if not union:
            continue
        per_object[obj] = len(gt & pred) / len(union)
    mean = sum(per_object.values()) / len(per_object) if per_object else 0.0
    return IouReport(per_object=per_object, mean=mean)


class CombinationCount(BaseModel):
    model_config = ConfigDict(frozen=True)

    object: str
    dimensions: tuple[str, ...]
    count: int


def combination_frequency(
    items: Iterable[tuple[str, Iterable[str]]],
) -> list[CombinationCount]:
    """Count how often each (object, dimension-set) combination is described.

    Each item is one description's object label and the dimension set it
    mentions. Output is sorted lexicographically by (object, dimensions).
    """
    counter: dict[tuple[str, tuple[str, ...]], int] = {}
    for obj, dims in items:
        key = (obj, tuple(sorted(set(dims))))
        counter[key] = counter.get(key, 0) + 1
    return [
        CombinationCount(object=obj, dimensions=dims, count=n)
        for (obj, dims), n in sorted(counter.items())
    ]


# -- multi-seed summaries and rendering -------------------------------------


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation, the convention used for the
    across-seed summaries."""
    if not values:
        raise EmptyCorpus("mean_std needs at least one value")
    if len(values) == 1:
        return values[0], 0.0
    return statistics.fmean(values), statistics.pstdev(values)


class MetricSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: float
    std: float


class SourceSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    source: str
    seeds: tuple[int, ...]
    mdr: MetricSummary
    mdp: MetricSummary
    mdf1: MetricSummary
    r_m: MetricSummary | None = None
    gpt_a: MetricSummary | None = None


def summarize_source(
    source: str,
    per_seed: Mapping[int, ControllabilityReport],
    gpt_a: Mapping[int, float] | None = None,
) -> SourceSummary:
    seeds = tuple(sorted(per_seed))
    reports = [per_seed[s] for s in seeds]

    def pack(values: Sequence[float]) -> MetricSummary:
        mean, std = mean_std(values)
        return MetricSummary(mean=mean, std=std)

    r_m = None
    if all(r.r_m is not None for r in reports):
        r_m = pack([r.r_m for r in reports])  # type: ignore[list-item]
    gpt = None
    if gpt_a:
        gpt = pack([gpt_a[s] for s in seeds if s in gpt_a])
    return SourceSummary(
        source=source,
        seeds=seeds,
        mdr=pack([r.mdr for r in reports]),
        mdp=pack([r.mdp for r in reports]),
        mdf1=pack([r.mdf1 for r in reports]),
        r_m=r_m,
        gpt_a=gpt,
    )


def _cell(summary: MetricSummary | None, scale: float = 100.0) -> str:
    if summary is None:
        return "-"
    return f"{summary.mean * scale:.1f} ± {summary.std * scale:.1f}"


def render_table(summaries: Sequence[SourceSummary]) -> str:
    """Plain-text controllability table, one row per description source."""
    has_gpt = any(s.gpt_a is not None for s in summaries)
    has_rm = any(s.r_m is not None for s in summaries)
    headers = ["source", "mDR", "mDP", "mDF1"]
    if has_gpt:
        headers.append("GPT-A")
    if has_rm:
        headers.append("R_m")
    rows = []
    for s in summaries:
        row = [s.source, _cell(s.mdr), _cell(s.mdp), _cell(s.mdf1)]
        if has_gpt:
            row.append(f"{s.gpt_a.mean:.1f} ± {s.gpt_a.std:.1f}" if s.gpt_a else "-")
        if has_rm:
            row.append(_cell(s.r_m))
        rows.append(row)
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)


def render_iou_table(report: IouReport) -> str:
    lines = [f"mean  {report.mean * 100:.1f}"]
    for obj, value in report.per_object.items():
        lines.append(f"{obj}  {value * 100:.1f}")
    return "\n".join(lines)
