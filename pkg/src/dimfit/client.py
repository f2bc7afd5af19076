"""Thin HTTP client for the engine service.

The CLI talks to the engine exclusively through this client. With no server
URL configured it hosts the service in-process and speaks to it over an
ASGI-backed HTTP client, so the request path is identical either way.
"""
from __future__ import annotations

import httpx

from .corpus import DescriptionRecord, InstanceRecord
from .errors import ServiceError
from .extractor import ExtractionResult
from .gateway import BackendSpec
from .metrics import ControllabilityReport, IouReport, RecordOutcome
from .refiner import RefinementTrace, RefinerConfig
from .validity import ValidityJudgment


def open_client(server_url: str | None = None) -> httpx.Client:
    if server_url:
        return httpx.Client(base_url=server_url.rstrip("/"), timeout=300.0)
    import warnings

    with warnings.catch_warnings():
        # The in-process test client is the supported ASGI bridge; its
        # pending rename inside starlette is not actionable here.
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


class EngineClient:
    def __init__(self, http: httpx.Client):
        self.http = http

    def _post(self, path: str, payload: dict) -> dict:
        resp = self.http.post(path, json=payload)
        if resp.status_code != 200:
            try:
                detail = resp.json().get("error", {}).get("message", resp.text)
            except Exception:
                detail = resp.text
            raise ServiceError(f"{path} -> {resp.status_code}: {detail}")
        return resp.json()

    def taxonomy_info(self, taxonomy_path: str) -> dict:
        return self._post("/taxonomy/load", {"path": taxonomy_path})

    def load_corpus(
        self,
        annotation_path: str,
        taxonomy_path: str,
        image_root: str | None,
        intent_k: int | None = None,
        intent_seed: int | None = None,
    ) -> tuple[list[InstanceRecord], list[str]]:
        body = self._post(
            "/corpus/load",
            {
                "annotation_path": annotation_path,
                "taxonomy_path": taxonomy_path,
                "image_root": image_root,
                "intent_k": intent_k,
                "intent_seed": intent_seed,
            },
        )
        records = [InstanceRecord.model_validate(r) for r in body["records"]]
        return records, body["missing_images"]

    def prompt(self, taxonomy_path: str, object_label: str, intent: list[str]) -> str:
        return self._post(
            "/prompt",
            {"taxonomy_path": taxonomy_path, "object_label": object_label, "intent": intent},
        )["prompt"]

    def generate(self, source: BackendSpec, record: InstanceRecord, prompt: str) -> DescriptionRecord:
        body = self._post(
            "/generate",
            {
                "source": source.model_dump(),
                "record": record.model_dump(),
                "prompt": prompt,
            },
        )
        return DescriptionRecord.model_validate(body["description"])

    def extract(
        self, taxonomy_path: str, chat: BackendSpec, object_label: str, description: str
    ) -> ExtractionResult:
        body = self._post(
            "/extract",
            {
                "taxonomy_path": taxonomy_path,
                "chat": chat.model_dump(),
                "object_label": object_label,
                "description": description,
            },
        )
        return ExtractionResult.model_validate(body)

    def refine(
        self,
        taxonomy_path: str,
        chat: BackendSpec,
        itm: BackendSpec,
        refiner: RefinerConfig,
        record: InstanceRecord,
        description: str,
        source_name: str,
    ) -> RefinementTrace:
        body = self._post(
            "/refine",
            {
                "taxonomy_path": taxonomy_path,
                "chat": chat.model_dump(),
                "itm": itm.model_dump(),
                "refiner": refiner.model_dump(),
                "record": record.model_dump(),
                "description": description,
                "source_name": source_name,
            },
        )
        return RefinementTrace.model_validate(body)

    def filter_candidates(
        self, taxonomy_path: str, chat: BackendSpec, object_label: str, dimension: str
    ) -> tuple[list[str], bool]:
        body = self._post(
            "/filter-candidates",
            {
                "taxonomy_path": taxonomy_path,
                "chat": chat.model_dump(),
                "object_label": object_label,
                "dimension": dimension,
            },
        )
        return body["kept"], body["fallback"]

    def aggregate(
        self,
        taxonomy_path: str,
        outcomes: list[RecordOutcome],
        modified: list[bool] | None = None,
    ) -> ControllabilityReport:
        body = self._post(
            "/metrics/aggregate",
            {
                "taxonomy_path": taxonomy_path,
                "outcomes": [o.model_dump() for o in outcomes],
                "modified": modified,
            },
        )
        return ControllabilityReport.model_validate(body)

    def modified_ratio(self, modified: list[bool]) -> float:
        return self._post("/metrics/modified-ratio", {"modified": modified})["ratio"]

    def attribute_iou(
        self, gt: list[tuple[str, str, str]], predicted: list[tuple[str, str, str]]
    ) -> IouReport:
        body = self._post("/metrics/attribute-iou", {"gt": gt, "predicted": predicted})
        return IouReport.model_validate(body)

    def validity_reference(self, chat: BackendSpec, record: InstanceRecord) -> str:
        return self._post(
            "/validity/reference",
            {"chat": chat.model_dump(), "record": record.model_dump()},
        )["text"]

    def validity_judge(
        self,
        chat: BackendSpec,
        candidate: str,
        reference: str,
        record: InstanceRecord,
        order_seed: int,
    ) -> ValidityJudgment:
        body = self._post(
            "/validity/judge",
            {
                "chat": chat.model_dump(),
                "candidate": candidate,
                "reference": reference,
                "record": record.model_dump(),
                "order_seed": order_seed,
            },
        )
        return ValidityJudgment.model_validate(body)
