import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from stackd.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def _draws_payload(seed=0, n_models=2, n_draws=300, n_obs=12):
    rng = np.random.default_rng(seed)
    models = []
    for k in range(n_models):
        loglik = rng.normal(-1.0 - 0.2 * k, 0.6, size=(n_draws, n_obs))
        models.append({"model_id": f"m{k}", "loglik": loglik.tolist()})
    return models


class TestHealth:
    def test_health(self, client):
        resp = client.get("/v1/health")
        assert resp.status_code == 200
        assert resp.json()["status"] == "ok"


class TestWeightsEndpoint:
    def test_stacking_happy_path(self, client):
        resp = client.post(
            "/v1/weights", json={"method": "stacking", "models": _draws_payload()}
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["schema_version"] == "1"
        assert body["method"] == "stacking"
        assert body["model_ids"] == ["m0", "m1"]
        assert sum(body["weights"]) == pytest.approx(1.0, abs=1e-9)
        assert body["diagnostics"]["converged"] is True
        assert len(body["per_model"]) == 2
        assert len(body["per_model"][0]["khat_grades"]) == 12

    def test_identical_models_pseudobma_uniform(self, client):
        models = _draws_payload(n_models=1)
        duplicate = dict(models[0], model_id="copy")
        resp = client.post(
            "/v1/weights",
            json={"method": "pseudobma", "models": models + [duplicate]},
        )
        assert resp.status_code == 200
        assert resp.json()["weights"] == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_bma_requires_marginals(self, client):
        resp = client.post(
            "/v1/weights", json={"method": "bma", "models": _draws_payload()}
        )
        assert resp.status_code == 422
        assert "log_marginals" in resp.json()["detail"]

    def test_bma_with_marginals(self, client):
        resp = client.post(
            "/v1/weights",
            json={
                "method": "bma",
                "log_marginals": {"logml": {"a": 0.0, "b": -np.log(3.0)}},
            },
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["weights"] == pytest.approx([0.75, 0.25], abs=1e-12)
        assert body["model_ids"] == ["a", "b"]

    def test_unknown_method_rejected(self, client):
        resp = client.post(
            "/v1/weights", json={"method": "magic", "models": _draws_payload()}
        )
        assert resp.status_code == 422

    def test_empty_request_rejected(self, client):
        resp = client.post("/v1/weights", json={"method": "stacking"})
        assert resp.status_code == 422

    def test_densities_input(self, client):
        densities = [
            {"model_id": "a", "logdens": [-1.0, -1.0, -3.0]},
            {"model_id": "b", "logdens": [-3.0, -3.0, -1.0]},
        ]
        resp = client.post(
            "/v1/weights", json={"method": "pointwise", "densities": densities}
        )
        assert resp.status_code == 200
        assert resp.json()["weights"] == pytest.approx([2 / 3, 1 / 3], abs=1e-12)

    def test_byte_identical_responses(self, client):
        payload = {"method": "stacking", "models": _draws_payload(seed=5), "seed": 7}
        a = client.post("/v1/weights", json=payload)
        b = client.post("/v1/weights", json=payload)
        assert a.content == b.content

    def test_thread_cap_does_not_change_results(self, client, monkeypatch):
        payload = {"method": "stacking", "models": _draws_payload(seed=9, n_models=3)}
        monkeypatch.setenv("STACKD_THREADS", "1")
        serial = client.post("/v1/weights", json=payload)
        monkeypatch.setenv("STACKD_THREADS", "4")
        threaded = client.post("/v1/weights", json=payload)
        assert serial.content == threaded.content

    def test_r_eff_shrinks_tail_and_is_accepted(self, client):
        model = _draws_payload(seed=13, n_models=1, n_draws=500, n_obs=4)[0]
        model["r_eff"] = [0.5, 0.5, 0.5, 0.5]
        resp = client.post("/v1/psis", json={"model": model})
        assert resp.status_code == 200
        bad = dict(model, r_eff=[0.5])
        resp = client.post("/v1/psis", json={"model": bad})
        assert resp.status_code == 422


class TestSequentialEndpoint:
    def test_densities_tau_zero_vertices(self, client):
        densities = [
            {"model_id": "a", "logdens": [-1.0, -3.0, -3.0]},
            {"model_id": "b", "logdens": [-3.0, -1.0, -1.0]},
        ]
        resp = client.post(
            "/v1/sequential", json={"densities": densities, "tau": 0.0}
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["weight_path"] == [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]
        assert body["method"] == "sequential"

    def test_draws_input_emits_refit_flags(self, client):
        models = _draws_payload(seed=3, n_models=2, n_draws=400, n_obs=10)
        resp = client.post("/v1/sequential", json={"models": models, "tau": 1.0})
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["refit_flags"]) == 2
        assert len(body["refit_flags"][0]) == 10
        assert len(body["weight_path"]) == 10

    def test_requires_data(self, client):
        resp = client.post("/v1/sequential", json={"tau": 1.0})
        assert resp.status_code == 422


class TestPsisEndpoint:
    def test_single_model(self, client):
        model = _draws_payload(seed=11, n_models=1)[0]
        resp = client.post("/v1/psis", json={"model": model})
        assert resp.status_code == 200
        body = resp.json()
        assert body["model_id"] == "m0"
        assert len(body["pointwise"]) == 12
        assert body["elpd"] == pytest.approx(sum(body["pointwise"]), rel=1e-9)
        assert set(body["khat_grades"]) <= {"good", "ok", "bad"}


class TestSimlabEndpoint:
    def test_prior_sensitivity(self, client):
        resp = client.post(
            "/v1/simlab", json={"experiment": "prior_sensitivity", "seed": 0}
        )
        assert resp.status_code == 200
        body = resp.json()
        ratios = [r for r in body["records"] if r["kind"] == "marginal_ratio"]
        assert 9.0 < ratios[0]["value"] < 11.0

    def test_unknown_experiment(self, client):
        resp = client.post("/v1/simlab", json={"experiment": "nope"})
        assert resp.status_code == 422
