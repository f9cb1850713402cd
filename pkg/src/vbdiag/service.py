"""Deterministic HTTP inference service.

The service never trains: it serves frozen, digest-verified model
bundles. Requests carry raw measurements with units; the server
canonicalizes, derives NLR, validates, and answers with the bacterial
probability (and Shapley contributions on /explain). Identical requests
get identical responses: the explanation seed is fixed per loaded model.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .domain import (
    BloodPanel,
    DomainError,
    Sex,
    UnitRule,
    canonicalize,
    load_unit_rules,
    validate_panel,
)
from .explain import shapley_sampled
from .learners import FittedClassifier
from .persist import ModelBundle, load_model

BAND_LO_MG_L = 10.0
BAND_HI_MG_L = 40.0
EXPLAIN_PERMUTATIONS = 500


class Measurement(BaseModel):
    name: str
    value: float
    unit: str


class PredictRequest(BaseModel):
    measurements: list[Measurement]
    age: float
    sex: str
    model_id: str | None = None


class PredictResponse(BaseModel):
    p_bacteria: float
    label: str
    band_flag: bool
    model_id: str


class PhiEntry(BaseModel):
    feature: str
    feature_value: float
    phi: float


class ExplainResponse(BaseModel):
    phi: list[PhiEntry]
    base_value: float
    prediction: float
    residual: float
    p_bacteria: float
    label: str
    band_flag: bool
    model_id: str


class FieldError(Exception):
    def __init__(self, field: str, message: str) -> None:
        super().__init__(message)
        self.field = field
        self.message = message


class ValidationFailed(Exception):
    def __init__(self, errors: list[dict[str, str]]) -> None:
        super().__init__("validation failed")
        self.errors = errors


class UnknownModel(Exception):
    def __init__(self, model_id: str) -> None:
        super().__init__(model_id)
        self.model_id = model_id


@dataclass
class LoadedModel:
    bundle: ModelBundle
    classifier: FittedClassifier


class ModelRegistry:
    """Loaded bundles by model_id; swaps are atomic per id."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._models: dict[str, LoadedModel] = {}
        self._default_id: str | None = None

    def add(self, bundle: ModelBundle, default: bool = True) -> None:
        loaded = LoadedModel(bundle=bundle, classifier=bundle.to_classifier())
        with self._lock:
            self._models[bundle.model_id] = loaded
            if default or self._default_id is None:
                self._default_id = bundle.model_id

    def load_file(self, path: str, default: bool = True) -> str:
        bundle = load_model(path)
        self.add(bundle, default=default)
        return bundle.model_id

    def get(self, model_id: str | None) -> LoadedModel:
        with self._lock:
            key = model_id or self._default_id
            if key is None or key not in self._models:
                raise UnknownModel(model_id or "<default>")
            return self._models[key]

    @property
    def default_id(self) -> str | None:
        return self._default_id


def _panel_from_request(req: PredictRequest, rules: tuple[UnitRule, ...]) -> BloodPanel:
    raw: list[tuple[str, object, str]] = [
        (m.name, m.value, m.unit) for m in req.measurements
    ]
    raw.append(("age", req.age, "years"))
    raw.append(("sex", req.sex, "mf"))
    try:
        panel = canonicalize(raw, rules)
    except DomainError as exc:
        raise ValidationFailed([{"field": _offending_field(str(exc)), "message": str(exc)}]) from None
    report = validate_panel(panel)
    if not report.ok:
        errors = [{"field": v.split(" ")[0], "message": v} for v in report.violations]
        errors += [{"field": f, "message": f"{f} is missing"} for f in report.missing_fields]
        raise ValidationFailed(errors)
    return panel


def _offending_field(message: str) -> str:
    # canonicalize errors quote the offending name
    if "'" in message:
        return message.split("'")[1]
    return "body"


def _vector_for(panel: BloodPanel, feature_order: tuple[str, ...]) -> np.ndarray:
    values = []
    for name in feature_order:
        if name == "sex":
            values.append(1.0 if panel.sex is Sex.MALE else 0.0)
        else:
            values.append(float(getattr(panel, name)))
    return np.asarray(values, dtype=np.float64)


def create_app(registry: ModelRegistry, rules: tuple[UnitRule, ...] | None = None) -> FastAPI:
    if rules is None:
        rules = load_unit_rules()
    app = FastAPI(title="vbdiag inference service", version="1")

    # the what-if UI is served from its own origin
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(RequestValidationError)
    async def on_request_validation(request: Request, exc: RequestValidationError):
        # malformed JSON bodies are a 400; schema violations are a 422
        errors = exc.errors()
        if any(e.get("type", "").startswith("json") for e in errors):
            return JSONResponse(status_code=400, content={"detail": "malformed request body"})
        detail = [
            {"field": ".".join(str(p) for p in e.get("loc", [])[1:]) or "body",
             "message": e.get("msg", "invalid")}
            for e in errors
        ]
        return JSONResponse(status_code=422, content={"detail": detail})

    @app.exception_handler(ValidationFailed)
    async def on_validation_failed(request: Request, exc: ValidationFailed):
        return JSONResponse(status_code=422, content={"detail": exc.errors})

    @app.exception_handler(UnknownModel)
    async def on_unknown_model(request: Request, exc: UnknownModel):
        return JSONResponse(
            status_code=404, content={"detail": f"unknown model_id {exc.model_id!r}"}
        )

    @app.get("/health")
    def health() -> dict[str, Any]:
        return {"status": "ok", "model_id": registry.default_id}

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest) -> PredictResponse:
        loaded = registry.get(req.model_id)
        panel = _panel_from_request(req, rules)
        x = _vector_for(panel, loaded.bundle.feature_order)
        p = float(loaded.classifier.predict_proba(x.reshape(1, -1))[0])
        return PredictResponse(
            p_bacteria=round(p, 6),
            label="BACTERIA" if p >= 0.5 else "VIRUS",
            band_flag=BAND_LO_MG_L <= panel.crp <= BAND_HI_MG_L,
            model_id=loaded.bundle.model_id,
        )

    @app.post("/explain", response_model=ExplainResponse)
    def explain(req: PredictRequest) -> ExplainResponse:
        loaded = registry.get(req.model_id)
        panel = _panel_from_request(req, rules)
        x = _vector_for(panel, loaded.bundle.feature_order)
        result = shapley_sampled(
            loaded.classifier,
            x,
            loaded.bundle.background,
            n_permutations=EXPLAIN_PERMUTATIONS,
            seed=loaded.bundle.explanation_seed,
        )
        p = float(result.prediction)
        return ExplainResponse(
            phi=[
                PhiEntry(feature=name, feature_value=float(x[i]), phi=float(result.phi[i]))
                for i, name in enumerate(loaded.bundle.feature_order)
            ],
            base_value=result.base_value,
            prediction=p,
            residual=result.residual,
            p_bacteria=round(p, 6),
            label="BACTERIA" if p >= 0.5 else "VIRUS",
            band_flag=BAND_LO_MG_L <= panel.crp <= BAND_HI_MG_L,
            model_id=loaded.bundle.model_id,
        )

    return app


def serve(model_path: str, host: str = "127.0.0.1", port: int = 8000) -> None:
    """Load one bundle and run the service (blocking)."""
    import uvicorn

    registry = ModelRegistry()
    registry.load_file(model_path)
    uvicorn.run(create_app(registry), host=host, port=port)
