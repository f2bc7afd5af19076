"""Request and response models for the engine service.

Domain payloads reuse the core pydantic models directly, so the wire format
and the library types cannot drift apart.
"""
from __future__ import annotations

from pydantic import BaseModel, ConfigDict

from ..corpus import DescriptionRecord, InstanceRecord
from ..extractor import ExtractionResult
from ..gateway import BackendSpec
from ..metrics import (
    CombinationCount,
    ControllabilityReport,
    IouReport,
    RecordOutcome,
)
from ..refiner import RefinementTrace, RefinerConfig
from ..validity import ValidityJudgment


class HealthResponse(BaseModel):
    status: str
    version: str


class TaxonomyLoadRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    path: str


class TaxonomyInfo(BaseModel):
    dimensions: list[dict]
    attributes: list[dict]


class CorpusLoadRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    annotation_path: str
    taxonomy_path: str
    image_root: str | None = None
    intent_k: int | None = None
    intent_seed: int | None = None


class CorpusLoadResponse(BaseModel):
    records: list[InstanceRecord]
    missing_images: list[str]


class PromptRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    taxonomy_path: str
    object_label: str
    intent: list[str]


class PromptResponse(BaseModel):
    prompt: str


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    source: BackendSpec
    record: InstanceRecord
    prompt: str


class GenerateResponse(BaseModel):
    description: DescriptionRecord


class ExtractRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    taxonomy_path: str
    chat: BackendSpec
    object_label: str
    description: str


class RefineRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    taxonomy_path: str
    chat: BackendSpec
    itm: BackendSpec
    refiner: RefinerConfig = RefinerConfig()
    record: InstanceRecord
    description: str
    source_name: str = ""


class FilterRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    taxonomy_path: str
    chat: BackendSpec
    object_label: str
    dimension: str
    candidates: list[str] | None = None


class FilterResponse(BaseModel):
    kept: list[str]
    fallback: bool


class AggregateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    taxonomy_path: str
    outcomes: list[RecordOutcome]
    modified: list[bool] | None = None


class ModifiedRatioRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    modified: list[bool]


class ModifiedRatioResponse(BaseModel):
    ratio: float


class IouRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    gt: list[tuple[str, str, str]]
    predicted: list[tuple[str, str, str]]


class FrequencyRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    items: list[tuple[str, list[str]]]


class FrequencyResponse(BaseModel):
    combinations: list[CombinationCount]


class ReferenceRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    chat: BackendSpec
    record: InstanceRecord


class ReferenceResponse(BaseModel):
    text: str
    cached: bool


class JudgeRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    chat: BackendSpec
    candidate: str
    reference: str
    record: InstanceRecord
    order_seed: int = 0


class RelativeBatchRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    pairs: list[tuple[int, int]]


class RelativeBatchResponse(BaseModel):
    score: float


__all__ = [
    "AggregateRequest",
    "BackendSpec",
    "CombinationCount",
    "ControllabilityReport",
    "CorpusLoadRequest",
    "CorpusLoadResponse",
    "DescriptionRecord",
    "ExtractRequest",
    "ExtractionResult",
    "FilterRequest",
    "FilterResponse",
    "FrequencyRequest",
    "FrequencyResponse",
    "GenerateRequest",
    "GenerateResponse",
    "HealthResponse",
    "InstanceRecord",
    "IouReport",
    "IouRequest",
    "JudgeRequest",
    "ModifiedRatioRequest",
    "ModifiedRatioResponse",
    "PromptRequest",
    "PromptResponse",
    "RecordOutcome",
    "ReferenceRequest",
    "ReferenceResponse",
    "RefineRequest",
    "RefinementTrace",
    "RelativeBatchRequest",
    "RelativeBatchResponse",
    "TaxonomyInfo",
    "TaxonomyLoadRequest",
    "ValidityJudgment",
]
