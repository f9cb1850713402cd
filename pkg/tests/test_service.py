import numpy as np
import pytest
from fastapi.testclient import TestClient

from vbdiag.domain import CANONICAL_UNITS, FEATURE_ORDER
from vbdiag.learners import ClassifierSpec, Family, fit_classifier
from vbdiag.persist import build_bundle
from vbdiag.service import ModelRegistry, create_app

from conftest import BASE_PANEL


@pytest.fixture(scope="module")
def client(cohort_2k):
    sub = cohort_2k.subset(range(600))
    X, y = sub.feature_matrix(), sub.label_vector()
    fitted = fit_classifier(
        ClassifierSpec(Family.GBT, {"n_rounds": 20, "max_depth": 3}),
        X, y, seed=1, feature_order=FEATURE_ORDER,
    )
    bundle = build_bundle(fitted, "VB_SVC_1", seed=1, background=X[:50],
                          explanation_seed=7)
    registry = ModelRegistry()
    registry.add(bundle)
    return TestClient(create_app(registry))


def request_body(crp=23.0, crp_unit="mg/L", skip=(), **overrides):
    measurements = []
    for name in FEATURE_ORDER:
        if name in ("age", "sex", "nlr") or name in skip:
            continue
        if name == "crp":
            measurements.append({"name": "crp", "value": crp, "unit": crp_unit})
            continue
        value = overrides.get(name, getattr(BASE_PANEL, name))
        measurements.append({"name": name, "value": value, "unit": CANONICAL_UNITS[name]})
    return {"measurements": measurements, "age": 62.0, "sex": "F"}


class TestHealth:
    def test_health(self, client):
        res = client.get("/health")
        assert res.status_code == 200
        body = res.json()
        assert body["status"] == "ok"
        assert body["model_id"] == "VB_SVC_1"


class TestPredict:
    def test_basic_shape(self, client):
        res = client.post("/predict", json=request_body())
        assert res.status_code == 200
        body = res.json()
        assert set(body) == {"p_bacteria", "label", "band_flag", "model_id"}
        assert 0.0 <= body["p_bacteria"] <= 1.0
        assert body["label"] in ("BACTERIA", "VIRUS")
        assert body["model_id"] == "VB_SVC_1"

    def test_unit_conversion_equivalence(self, client):
        in_mg_l = client.post("/predict", json=request_body(crp=23.0, crp_unit="mg/L")).json()
        in_mg_dl = client.post("/predict", json=request_body(crp=2.3, crp_unit="mg/dL")).json()
        assert in_mg_l == in_mg_dl

    def test_band_flag_boundaries(self, client):
        assert client.post("/predict", json=request_body(crp=10.0)).json()["band_flag"]
        assert client.post("/predict", json=request_body(crp=40.0)).json()["band_flag"]
        assert not client.post("/predict", json=request_body(crp=9.99)).json()["band_flag"]
        assert not client.post("/predict", json=request_body(crp=40.01)).json()["band_flag"]

    def test_deterministic(self, client):
        body = request_body(crp=17.0)
        r1 = client.post("/predict", json=body)
        r2 = client.post("/predict", json=body)
        assert r1.content == r2.content

    def test_missing_measurement_422_names_field(self, client):
        res = client.post("/predict", json=request_body(skip=("lymphocyte_count",)))
        assert res.status_code == 422
        assert any("lymphocyte_count" in e["message"] for e in res.json()["detail"])

    def test_invalid_value_422(self, client):
        res = client.post("/predict", json=request_body(crp=-3.0))
        assert res.status_code == 422
        assert any(e["field"] == "crp" for e in res.json()["detail"])

    def test_malformed_body_400(self, client):
        res = client.post("/predict", content=b"{oops", headers={"content-type": "application/json"})
        assert res.status_code == 400

    def test_schema_violation_422(self, client):
        res = client.post("/predict", json={"measurements": [], "sex": "F"})
        assert res.status_code == 422

    def test_unknown_model_404(self, client):
        body = request_body()
        body["model_id"] = "VB_NOPE"
        res = client.post("/predict", json=body)
        assert res.status_code == 404

    def test_six_decimal_rounding(self, client):
        p = client.post("/predict", json=request_body()).json()["p_bacteria"]
        assert p == round(p, 6)


class TestExplain:
    def test_fields_and_efficiency(self, client):
        res = client.post("/explain", json=request_body())
        assert res.status_code == 200
        body = res.json()
        assert set(body) == {
            "phi", "base_value", "prediction", "residual",
            "p_bacteria", "label", "band_flag", "model_id",
        }
        assert len(body["phi"]) == len(FEATURE_ORDER)
        total = sum(e["phi"] for e in body["phi"])
        assert abs(body["prediction"] - body["base_value"] - total - body["residual"]) < 1e-9
        assert abs(body["residual"]) <= 0.02

    def test_repeated_request_identical(self, client):
        body = request_body(crp=31.0)
        r1 = client.post("/explain", json=body)
        r2 = client.post("/explain", json=body)
        assert r1.content == r2.content

    def test_predict_and_explain_agree(self, client):
        body = request_body(crp=55.0)
        p = client.post("/predict", json=body).json()
        e = client.post("/explain", json=body).json()
        assert p["p_bacteria"] == e["p_bacteria"]
        assert p["label"] == e["label"]
        assert p["band_flag"] == e["band_flag"]

    def test_constant_model_bundle_gives_all_zero_phi(self, cohort_2k):
        # a tree trained on one class degenerates to a single leaf, so
        # the served model is constant and every contribution must be 0
        from vbdiag.domain import Label

        sub = cohort_2k.subset(
            [i for i, c in enumerate(cohort_2k.cases) if c.label is Label.BACTERIA][:50]
        )
        X = sub.feature_matrix()
        y = np.ones(len(X))
        fitted = fit_classifier(
            ClassifierSpec(Family.DT, {"max_depth": 3}), X, y,
            seed=0, feature_order=FEATURE_ORDER,
        )
        bundle = build_bundle(fitted, "VB_CONST", seed=0, background=X[:10])
        registry = ModelRegistry()
        registry.add(bundle)
        client = TestClient(create_app(registry))
        res = client.post("/explain", json=request_body())
        assert res.status_code == 200
        body = res.json()
        assert all(entry["phi"] == 0.0 for entry in body["phi"])
        assert abs(body["residual"]) <= 1e-12
