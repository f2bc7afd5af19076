"""FastAPI application exposing the refinement engine.

The service is stateless per request: every call carries the taxonomy path
and backend specs it needs, so one running instance can serve unrelated
runs. Taxonomies and validity-reference texts are cached process-wide.
Domain errors surface as 400 responses shaped {"error": {"message", "type"}}.
"""
from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..corpus import load_corpus, prompt_for, sample_intents
from ..errors import DimfitError, SchemaError
from ..extractor import extract
from ..gateway import (
    build_chat_backend,
    build_description_source,
    build_itm_backend,
    generate_description,
    spec_identity,
)
from ..metrics import aggregate, attribute_iou, combination_frequency, modified_ratio
from ..refiner import filter_candidates, run_pipeline
from ..taxonomy import Taxonomy, load_taxonomy, taxonomy_to_document
from ..validity import ValidityEvaluator, relative_batch
from . import schemas as s


class _TaxonomyCache:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, float], Taxonomy] = {}

    def get(self, path: str) -> Taxonomy:
        try:
            mtime = Path(path).stat().st_mtime
        except OSError:
            raise SchemaError(f"taxonomy file not found: {path}") from None
        key = (str(Path(path).resolve()), mtime)
        with self._lock:
            cached = self._entries.get(key)
            if cached is not None:
                return cached
        taxonomy = load_taxonomy(path)
        with self._lock:
            self._entries[key] = taxonomy
        return taxonomy


class _BackendCache:
    """Backends are pure handles keyed by their identity (url, file hash, or
    config hash), so reusing them across requests is safe and keeps live
    HTTP connections pooled."""

    def __init__(self, builder) -> None:
        self._lock = threading.Lock()
        self._builder = builder
        self._entries: dict[str, object] = {}

    def get(self, spec: s.BackendSpec):
        key = spec_identity(spec)
        with self._lock:
            if key not in self._entries:
                self._entries[key] = self._builder(spec)
            return self._entries[key]


class _ValidityCache:
    """One evaluator per chat-backend identity, so reference descriptions
    are generated once per record."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._evaluators: dict[str, ValidityEvaluator] = {}

    def get(self, spec: s.BackendSpec) -> ValidityEvaluator:
        key = spec_identity(spec)
        with self._lock:
            if key not in self._evaluators:
                self._evaluators[key] = ValidityEvaluator(build_chat_backend(spec))
            return self._evaluators[key]


def create_app() -> FastAPI:
    app = FastAPI(title="dimfit engine", version=__version__)
    taxonomies = _TaxonomyCache()
    validity = _ValidityCache()
    chat_backends = _BackendCache(build_chat_backend)
    itm_backends = _BackendCache(build_itm_backend)

    @app.exception_handler(DimfitError)
    async def _domain_error(request: Request, exc: DimfitError):
        return JSONResponse(
            status_code=400,
            content={"error": {"message": str(exc), "type": type(exc).__name__}},
        )

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(
            status_code=400,
            content={"error": {"message": str(exc), "type": "ValueError"}},
        )

    @app.get("/health", response_model=s.HealthResponse)
    def health():
        return s.HealthResponse(status="ok", version=__version__)

    @app.post("/taxonomy/load", response_model=s.TaxonomyInfo)
    def taxonomy_load(req: s.TaxonomyLoadRequest):
        doc = taxonomy_to_document(taxonomies.get(req.path))
        return s.TaxonomyInfo(dimensions=doc["dimensions"], attributes=doc["attributes"])

    @app.post("/corpus/load", response_model=s.CorpusLoadResponse)
    def corpus_load(req: s.CorpusLoadRequest):
        taxonomy = taxonomies.get(req.taxonomy_path)
        load = load_corpus(req.annotation_path, req.image_root, taxonomy)
        records = list(load.records)
        if req.intent_k is not None:
            seed = req.intent_seed or 0
            records = [
                r
                if r.user_intent is not None
                else r.with_intent(sample_intents(r, req.intent_k, seed, taxonomy))
                for r in records
            ]
        return s.CorpusLoadResponse(records=records, missing_images=list(load.missing_images))

    @app.post("/prompt", response_model=s.PromptResponse)
    def prompt(req: s.PromptRequest):
        taxonomy = taxonomies.get(req.taxonomy_path)
        return s.PromptResponse(prompt=prompt_for(req.object_label, req.intent, taxonomy))

    @app.post("/generate", response_model=s.GenerateResponse)
    def generate(req: s.GenerateRequest):
        source = build_description_source(req.source)
        return s.GenerateResponse(description=generate_description(source, req.record, req.prompt))

    @app.post("/extract", response_model=s.ExtractionResult)
    def extract_endpoint(req: s.ExtractRequest):
        taxonomy = taxonomies.get(req.taxonomy_path)
        backend = chat_backends.get(req.chat)
        return extract(req.description, req.object_label, taxonomy, backend)

    @app.post("/refine", response_model=s.RefinementTrace)
    def refine(req: s.RefineRequest):
        taxonomy = taxonomies.get(req.taxonomy_path)
        return run_pipeline(
            req.record,
            req.description,
            taxonomy,
            chat_backends.get(req.chat),
            itm_backends.get(req.itm),
            config=req.refiner,
            source_name=req.source_name,
        )

    @app.post("/filter-candidates", response_model=s.FilterResponse)
    def filter_endpoint(req: s.FilterRequest):
        taxonomy = taxonomies.get(req.taxonomy_path)
        labels = list(taxonomy.labels_for(req.dimension))
        if req.candidates is not None:
            wanted = set(req.candidates)
            labels = [l for l in labels if l.canonical in wanted]
        kept, fallback = filter_candidates(
            req.object_label, req.dimension, labels, taxonomy, chat_backends.get(req.chat)
        )
        return s.FilterResponse(kept=[l.canonical for l in kept], fallback=fallback)

    @app.post("/metrics/aggregate", response_model=s.ControllabilityReport)
    def metrics_aggregate(req: s.AggregateRequest):
        taxonomy = taxonomies.get(req.taxonomy_path)
        return aggregate(req.outcomes, taxonomy, modified_flags=req.modified)

    @app.post("/metrics/modified-ratio", response_model=s.ModifiedRatioResponse)
    def metrics_modified_ratio(req: s.ModifiedRatioRequest):
        return s.ModifiedRatioResponse(ratio=modified_ratio(req.modified))

    @app.post("/metrics/attribute-iou", response_model=s.IouReport)
    def metrics_iou(req: s.IouRequest):
        return attribute_iou(req.gt, req.predicted)

    @app.post("/metrics/combination-frequency", response_model=s.FrequencyResponse)
    def metrics_frequency(req: s.FrequencyRequest):
        return s.FrequencyResponse(combinations=combination_frequency(req.items))

    @app.post("/validity/reference", response_model=s.ReferenceResponse)
    def validity_reference(req: s.ReferenceRequest):
        evaluator = validity.get(req.chat)
        cached = req.record.record_id in evaluator._reference_cache
        return s.ReferenceResponse(text=evaluator.build_reference(req.record), cached=cached)

    @app.post("/validity/judge", response_model=s.ValidityJudgment)
    def validity_judge(req: s.JudgeRequest):
        evaluator = validity.get(req.chat)
        return evaluator.judge(
            req.candidate, req.reference, req.record, order_seed=req.order_seed
        )

    @app.post("/validity/relative-batch", response_model=s.RelativeBatchResponse)
    def validity_relative(req: s.RelativeBatchRequest):
        return s.RelativeBatchResponse(score=relative_batch(req.pairs))

    return app
