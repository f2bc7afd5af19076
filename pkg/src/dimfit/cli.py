"""Command-line interface: reproducible generate/refine/evaluate runs.

The CLI is a thin client of the engine service. Without --server (or a
server_url in the config) it hosts the service in-process and still talks to
it over HTTP semantics, so local runs and remote runs share one code path.
All randomness flows from the explicit seeds in the run config; reruns with
--resume skip records already present in the output files.

Exit codes: 0 success, 1 partial failure (some records failed), 2 config error.
"""
from __future__ import annotations

import functools
import hashlib
import json
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import click
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from . import __version__, metrics
from .client import EngineClient, open_client
from .corpus import DescriptionRecord, InstanceRecord
from .errors import ConfigError, DimfitError
from .gateway import BackendSpec, spec_identity
from .metrics import RecordOutcome, SourceSummary
from .refiner import RefinementTrace, RefinerConfig
from .validity import ValidityJudgment


class CorpusConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    annotations: str
    image_root: str | None = None


class BackendsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    chat: BackendSpec
    itm: BackendSpec
    source: BackendSpec
    # The metrics-side judge is configured separately from the pipeline's
    # chat backend so a pipeline never grades itself with its own scripts.
    judge_chat: BackendSpec
    validity_chat: BackendSpec | None = None


class ValidityConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    enabled: bool = False
    subsample: int = 100


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    taxonomy: str
    corpus: CorpusConfig
    backends: BackendsConfig
    refiner: RefinerConfig = RefinerConfig()
    seeds: tuple[int, ...] = (0, 1, 2)
    intent_size: int = 2
    output_dir: str
    validity: ValidityConfig = ValidityConfig()
    workers: int = 4
    server_url: str | None = None

    @field_validator("seeds")
    @classmethod
    def _seeds_non_empty(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if not v:
            raise ValueError("seeds must be non-empty")
        return v

    @field_validator("workers")
    @classmethod
    def _workers_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("workers must be >= 1")
        return v


def load_run_config(path: str) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"config rejected: {exc}") from None

    for label, p in [("taxonomy", config.taxonomy), ("corpus.annotations", config.corpus.annotations)]:
        if not Path(p).exists():
            raise ConfigError(f"{label} path does not exist: {p}")
    for name, spec in _backend_specs(config).items():
        if spec and spec.path and not Path(spec.path).exists():
            raise ConfigError(f"backends.{name} path does not exist: {spec.path}")
    return config


def _backend_specs(config: RunConfig) -> dict[str, BackendSpec | None]:
    return {
        "chat": config.backends.chat,
        "itm": config.backends.itm,
        "source": config.backends.source,
        "judge_chat": config.backends.judge_chat,
        "validity_chat": config.backends.validity_chat,
    }


def config_hash(config: RunConfig) -> str:
    payload = json.dumps(config.model_dump(), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def write_manifest(command: str, config: RunConfig, outdir: Path, extra: dict) -> None:
    manifest = {
        "command": command,
        "code_version": __version__,
        "config_hash": config_hash(config),
        "seeds": list(config.seeds),
        "thresholds": {"tau_e": config.refiner.tau_e, "tau_c": config.refiner.tau_c},
        "backend_identities": {
            name: spec_identity(spec) if spec else None
            for name, spec in _backend_specs(config).items()
        },
        **extra,
    }
    _atomic_write(outdir / f"{command}_manifest.json", json.dumps(manifest, indent=2) + "\n")


def _atomic_write(path: Path, content: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(content)
    os.replace(tmp, path)


def read_jsonl(path: Path, model) -> list:
    rows = []
    for line in path.read_text().splitlines():
        if line.strip():
            rows.append(model.model_validate_json(line))
    return rows


def write_jsonl_sorted(path: Path, rows: Sequence, key: Callable) -> None:
    ordered = sorted(rows, key=key)
    _atomic_write(path, "".join(r.model_dump_json() + "\n" for r in ordered))


def pool_map(workers: int, func: Callable, items: Sequence) -> tuple[list, list[tuple[str, str]]]:
    """Run func over items; returns (results, failures as (record_id, error)).
    Item order in results follows input order for determinism."""
    results: list = [None] * len(items)
    failures: list[tuple[str, str]] = []

    def run(i: int, item) -> None:
        try:
            results[i] = func(item)
        except Exception as exc:  # noqa: BLE001 - reported per record
            failures.append((getattr(item, "record_id", str(i)), f"{type(exc).__name__}: {exc}"))

    if workers == 1:
        for i, item in enumerate(items):
            run(i, item)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda pair: run(*pair), enumerate(items)))
    failures.sort(key=lambda f: f[0])
    return [r for r in results if r is not None], failures


def _report_failures(failures: list[tuple[str, str]], outdir: Path, command: str) -> None:
    if not failures:
        return
    payload = [{"record_id": rid, "error": err} for rid, err in failures]
    _atomic_write(outdir / f"failures_{command}.json", json.dumps(payload, indent=2) + "\n")
    for rid, err in failures:
        click.echo(f"FAILED {rid}: {err}", err=True)


def trace_filename(seed: int, tau_e: float, tau_c: float, sweep: bool) -> str:
    if not sweep:
        return f"traces_seed{seed}.jsonl"
    return f"traces_seed{seed}_taue{tau_e:g}_tauc{tau_c:g}.jsonl"


class _Run:
    """Shared per-command state: config, output dir, engine client."""

    def __init__(self, config_path: str, server: str | None):
        self.config = load_run_config(config_path)
        self.outdir = Path(self.config.output_dir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.client = EngineClient(open_client(server or self.config.server_url))

    def corpus(self, seed: int | None) -> list[InstanceRecord]:
        records, missing = self.client.load_corpus(
            self.config.corpus.annotations,
            self.config.taxonomy,
            self.config.corpus.image_root,
            intent_k=self.config.intent_size if seed is not None else None,
            intent_seed=seed,
        )
        for rid in missing:
            click.echo(f"skipped {rid}: image missing", err=True)
        return records


def _command_guard(fn):
    """Map stray domain errors to exit codes: config problems exit 2,
    anything else from the engine exits 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except DimfitError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _fail_config(message: str) -> None:
    click.echo(f"config error: {message}", err=True)
    sys.exit(2)


@click.group()
def main() -> None:
    """Refine object descriptions against user-specified dimensions and
    evaluate dimensional controllability."""


def _config_options(fn):
    fn = click.option("--server", default=None, help="Engine service URL (default: in-process).")(fn)
    fn = click.option("--config", "config_path", required=True, type=click.Path(), help="Run config JSON.")(fn)
    return fn


def _seed_override(config: RunConfig, seeds: str | None) -> tuple[int, ...]:
    if not seeds:
        return config.seeds
    try:
        parsed = tuple(int(s) for s in seeds.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"bad --seeds value: {seeds!r}") from None
    if not parsed:
        raise ConfigError("--seeds must name at least one seed")
    return parsed


@main.command()
@_config_options
@click.option("--seeds", default=None, help="Comma-separated seed override.")
@click.option("--workers", type=int, default=None)
@click.option("--resume/--no-resume", default=True)
@_command_guard
def generate(config_path: str, server: str | None, seeds: str | None, workers: int | None, resume: bool) -> None:
    """Generate (or load fixture) descriptions for every corpus record."""
    run = _Run(config_path, server)
    config = run.config
    seed_list = _seed_override(config, seeds)
    pool_width = workers or config.workers
    all_failures: list[tuple[str, str]] = []

    for seed in seed_list:
        records = run.corpus(seed)
        out = run.outdir / f"descriptions_seed{seed}.jsonl"
        existing = {d.record_id: d for d in read_jsonl(out, DescriptionRecord)} if resume and out.exists() else {}
        todo = [r for r in records if r.record_id not in existing]

        def make(record: InstanceRecord) -> DescriptionRecord:
            prompt = run.client.prompt(config.taxonomy, record.object_label, list(record.user_intent or ()))
            return run.client.generate(config.backends.source, record, prompt)

        produced, failures = pool_map(pool_width, make, todo)
        all_failures.extend(failures)
        merged = list(existing.values()) + produced
        write_jsonl_sorted(out, merged, key=lambda d: d.record_id)
        click.echo(
            f"seed {seed}: {len(produced)} generated, {len(existing)} resumed, {len(failures)} failed -> {out}"
        )

    write_manifest("generate", config, run.outdir, {"seeds_run": list(seed_list)})
    _report_failures(all_failures, run.outdir, "generate")
    sys.exit(1 if all_failures else 0)


@main.command()
@_config_options
@click.option("--tau-e", "tau_es", type=float, multiple=True, help="Erase threshold(s); repeat to sweep.")
@click.option("--tau-c", "tau_cs", type=float, multiple=True, help="Supplement threshold(s); repeat to sweep.")
@click.option("--seeds", default=None, help="Comma-separated seed override.")
@click.option("--workers", type=int, default=None)
@click.option("--resume/--no-resume", default=True)
@_command_guard
def refine(
    config_path: str,
    server: str | None,
    tau_es: tuple[float, ...],
    tau_cs: tuple[float, ...],
    seeds: str | None,
    workers: int | None,
    resume: bool,
) -> None:
    """Run the refinement pipeline over generated descriptions; prints R_m."""
    run = _Run(config_path, server)
    config = run.config
    seed_list = _seed_override(config, seeds)
    pool_width = workers or config.workers
    tau_e_values = tau_es or (config.refiner.tau_e,)
    tau_c_values = tau_cs or (config.refiner.tau_c,)
    sweep = len(tau_e_values) > 1 or len(tau_c_values) > 1
    all_failures: list[tuple[str, str]] = []

    for seed in seed_list:
        records = run.corpus(seed)
        desc_path = run.outdir / f"descriptions_seed{seed}.jsonl"
        if not desc_path.exists():
            _fail_config(f"no descriptions for seed {seed}; run generate first ({desc_path})")
        descriptions = {d.record_id: d for d in read_jsonl(desc_path, DescriptionRecord)}

        for tau_e in tau_e_values:
            for tau_c in tau_c_values:
                refiner = config.refiner.model_copy(update={"tau_e": tau_e, "tau_c": tau_c})
                out = run.outdir / trace_filename(seed, tau_e, tau_c, sweep)
                existing = (
                    {t.record_id: t for t in read_jsonl(out, RefinementTrace)}
                    if resume and out.exists()
                    else {}
                )
                todo = []
                for record in records:
                    if record.record_id in existing:
                        continue
                    if record.record_id not in descriptions:
                        all_failures.append((record.record_id, "no description available"))
                        continue
                    todo.append(record)

                def refine_one(record: InstanceRecord) -> RefinementTrace:
                    desc = descriptions[record.record_id]
                    return run.client.refine(
                        config.taxonomy,
                        config.backends.chat,
                        config.backends.itm,
                        refiner,
                        record,
                        desc.text,
                        desc.source_name,
                    )

                produced, failures = pool_map(pool_width, refine_one, todo)
                all_failures.extend(failures)
                all_failures.extend(
                    (t.record_id, t.error) for t in produced if t.error
                )
                traces = list(existing.values()) + produced
                write_jsonl_sorted(out, traces, key=lambda t: t.record_id)
                if traces:
                    ratio = run.client.modified_ratio([t.modified for t in traces])
                    click.echo(
                        f"seed {seed} tau_e={tau_e:g} tau_c={tau_c:g}: "
                        f"{len(traces)} traces, R_m = {ratio * 100:.1f}% -> {out}"
                    )

    write_manifest(
        "refine",
        config,
        run.outdir,
        {"tau_e_values": list(tau_e_values), "tau_c_values": list(tau_c_values), "sweep": sweep},
    )
    _report_failures(all_failures, run.outdir, "refine")
    sys.exit(1 if all_failures else 0)


class _DetectionRow(BaseModel):
    record_id: str
    intent: tuple[str, ...]
    detected: tuple[str, ...]
    modified: bool | None = None


@main.command()
@_config_options
@click.option("--tau-e", type=float, default=None, help="Select a sweep trace file by tau_e.")
@click.option("--tau-c", type=float, default=None, help="Select a sweep trace file by tau_c.")
@click.option("--seeds", default=None, help="Comma-separated seed override.")
@click.option("--subsample", type=int, default=None, help="Validity subsample size override.")
@click.option("--workers", type=int, default=None)
@click.option("--resume/--no-resume", default=True)
@_command_guard
def evaluate(
    config_path: str,
    server: str | None,
    tau_e: float | None,
    tau_c: float | None,
    seeds: str | None,
    subsample: int | None,
    workers: int | None,
    resume: bool,
) -> None:
    """Score controllability of original and refined descriptions."""
    run = _Run(config_path, server)
    config = run.config
    seed_list = _seed_override(config, seeds)
    pool_width = workers or config.workers
    suffix = ""
    if tau_e is not None or tau_c is not None:
        e = tau_e if tau_e is not None else config.refiner.tau_e
        c = tau_c if tau_c is not None else config.refiner.tau_c
        suffix = f"_taue{e:g}_tauc{c:g}"

    rows: dict[str, dict[int, metrics.ControllabilityReport]] = {}
    gpt_a: dict[str, dict[int, float]] = {}
    row_order: list[str] = []
    validity_on = config.validity.enabled or subsample is not None
    sample_size = subsample or config.validity.subsample

    for seed in seed_list:
        records = {r.record_id: r for r in run.corpus(seed)}

        sources: list[tuple[str, dict[str, tuple[str, tuple[str, ...], bool | None]], str]] = []
        desc_path = run.outdir / f"descriptions_seed{seed}.jsonl"
        source_name = None
        if desc_path.exists():
            descriptions = read_jsonl(desc_path, DescriptionRecord)
            if descriptions:
                source_name = descriptions[0].source_name
                texts = {
                    d.record_id: (d.text, records[d.record_id].user_intent or (), None)
                    for d in descriptions
                    if d.record_id in records
                }
                sources.append((source_name, texts, "original"))
        trace_path = run.outdir / f"traces_seed{seed}{suffix}.jsonl"
        if trace_path.exists():
            traces = [t for t in read_jsonl(trace_path, RefinementTrace) if t.error is None]
            if traces:
                name = (traces[0].source_name or source_name or "source") + " + refined"
                texts = {
                    t.record_id: (t.final, t.user_intent, t.modified)
                    for t in traces
                    if t.record_id in records
                }
                sources.append((name, texts, "refined"))
        if not sources:
            _fail_config(f"seed {seed}: nothing to evaluate in {run.outdir}")

        for name, texts, kind in sources:
            if not texts:
                click.echo(f"seed {seed}: no usable records for {name}; skipped", err=True)
                continue
            if name not in row_order:
                row_order.append(name)
            cache = run.outdir / f"detections_{kind}_seed{seed}{suffix}.jsonl"
            existing = (
                {d.record_id: d for d in read_jsonl(cache, _DetectionRow)}
                if resume and cache.exists()
                else {}
            )
            todo = [rid for rid in sorted(texts) if rid not in existing]

            def detect(rid: str) -> _DetectionRow:
                text, intent, modified = texts[rid]
                extraction = run.client.extract(
                    config.taxonomy,
                    config.backends.judge_chat,
                    records[rid].object_label,
                    text,
                )
                return _DetectionRow(
                    record_id=rid,
                    intent=intent,
                    detected=extraction.contained_dimensions,
                    modified=modified,
                )

            detected_rows, failures = pool_map(pool_width, detect, todo)
            if failures:
                _report_failures(failures, run.outdir, "evaluate")
                sys.exit(1)
            all_rows = list(existing.values()) + detected_rows
            write_jsonl_sorted(cache, all_rows, key=lambda d: d.record_id)

            outcomes = [
                RecordOutcome(record_id=d.record_id, intent=d.intent, detected=d.detected)
                for d in sorted(all_rows, key=lambda d: d.record_id)
            ]
            modified_flags = None
            if kind == "refined":
                modified_flags = [bool(d.modified) for d in sorted(all_rows, key=lambda d: d.record_id)]
            report = run.client.aggregate(config.taxonomy, outcomes, modified_flags)
            rows.setdefault(name, {})[seed] = report

            if validity_on:
                score = _validity_score(run, records, texts, seed, sample_size, kind, suffix)
                if score is not None:
                    gpt_a.setdefault(name, {})[seed] = score

    summaries = [
        metrics.summarize_source(name, rows[name], gpt_a.get(name)) for name in row_order
    ]
    report_payload = {
        "report_version": 1,
        "code_version": __version__,
        "config_hash": config_hash(config),
        "seeds": list(seed_list),
        "thresholds": {
            "tau_e": tau_e if tau_e is not None else config.refiner.tau_e,
            "tau_c": tau_c if tau_c is not None else config.refiner.tau_c,
        },
        "backend_identities": {
            name: spec_identity(spec) if spec else None
            for name, spec in _backend_specs(config).items()
        },
        "rows": [
            {
                "summary": summaries[i].model_dump(),
                "per_seed": {str(s): rows[name][s].model_dump() for s in sorted(rows[name])},
            }
            for i, name in enumerate(row_order)
        ],
    }
    _atomic_write(
        run.outdir / f"evaluation_report{suffix}.json", json.dumps(report_payload, indent=2) + "\n"
    )
    write_manifest("evaluate", config, run.outdir, {"suffix": suffix, "validity": validity_on})
    click.echo(metrics.render_table(summaries))
    sys.exit(0)


def _validity_score(
    run: _Run,
    records: dict[str, InstanceRecord],
    texts: dict[str, tuple[str, tuple[str, ...], bool | None]],
    seed: int,
    sample_size: int,
    kind: str,
    suffix: str,
) -> float | None:
    import random

    spec = run.config.backends.validity_chat
    if spec is None:
        click.echo("validity requested but backends.validity_chat is not configured", err=True)
        return None
    eligible = sorted(rid for rid in texts if records[rid].gt_attributes)
    if not eligible:
        return None
    rng = random.Random(f"validity|{seed}")
    chosen = sorted(rng.sample(eligible, min(sample_size, len(eligible))))
    judgments: list[ValidityJudgment] = []
    for rid in chosen:
        record = records[rid]
        reference = run.client.validity_reference(spec, record)
        order_seed = zlib.crc32(f"{seed}|{rid}".encode())
        judgments.append(
            run.client.validity_judge(spec, texts[rid][0], reference, record, order_seed)
        )
    log = run.outdir / f"judgments_{kind}_seed{seed}{suffix}.jsonl"
    write_jsonl_sorted(log, judgments, key=lambda j: j.record_id)
    from .validity import relative_batch

    return relative_batch(judgments)


@main.command("audit-filter")
@_config_options
@_command_guard
def audit_filter(config_path: str, server: str | None) -> None:
    """Compare LLM-filtered object-attribute combinations against ground truth."""
    run = _Run(config_path, server)
    config = run.config
    info = run.client.taxonomy_info(config.taxonomy)
    dims_with_labels = sorted({a["dimension"] for a in info["attributes"]})
    records = run.corpus(None)

    gt: list[tuple[str, str, str]] = []
    for record in records:
        for attr in record.gt_attributes:
            gt.append((record.object_label, attr.dimension, attr.value))

    predicted: list[tuple[str, str, str]] = []
    objects = sorted({r.object_label for r in records})
    dim_order = [d["id"] for d in info["dimensions"] if d["id"] in dims_with_labels]
    for obj in objects:
        for dim in dim_order:
            kept, _fallback = run.client.filter_candidates(
                config.taxonomy, config.backends.chat, obj, dim
            )
            predicted.extend((obj, dim, attr) for attr in kept)

    iou = run.client.attribute_iou(gt, predicted)
    payload = {"mean": iou.mean, "per_object": iou.per_object}
    _atomic_write(run.outdir / "filter_audit.json", json.dumps(payload, indent=2) + "\n")
    write_manifest("audit-filter", config, run.outdir, {"objects": len(objects)})
    click.echo(metrics.render_iou_table(iou))
    sys.exit(0)


@main.command()
@click.option("--config", "config_path", default=None, type=click.Path())
@click.argument("report_path", required=False, type=click.Path())
@_command_guard
def report(config_path: str | None, report_path: str | None) -> None:
    """Render a stored evaluation report as a plain-text table."""
    if report_path is None:
        if config_path is None:
            _fail_config("report needs a report path or --config")
        config = load_run_config(config_path)
        report_path = str(Path(config.output_dir) / "evaluation_report.json")
    try:
        payload = json.loads(Path(report_path).read_text())
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        _fail_config(f"cannot read report {report_path}: {exc}")
    summaries = [SourceSummary.model_validate(row["summary"]) for row in payload["rows"]]
    click.echo(metrics.render_table(summaries))
    sys.exit(0)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8080)
def serve(host: str, port: int) -> None:
    """Run the engine service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
