"""
Tests for the HTTP surface.
"""

import pytest
from fastapi.testclient import TestClient

from main import app


@pytest.fixture
def client():
    with TestClient(app) as test_client:
        yield test_client


def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["health"] == "/api/v1/experiments/health"


def test_list_experiments(client):
    response = client.get("/api/v1/experiments/")
    assert response.status_code == 200
    body = response.json()
    assert body["success"]
    ids = [item["id"] for item in body["data"]]
    assert "solve" in ids and "cordes" in ids
    assert len(ids) == 12


def test_health(client):
    response = client.get("/api/v1/experiments/health")
    assert response.status_code == 200
    data = response.json()["data"]
    assert data["status"] == "healthy"
    assert data["experiments"] == 12
    assert "X-Process-Time" in response.headers


def test_run_solve(client, tmp_path, solve_config):
    response = client.post(
        "/api/v1/experiments/run", json={"config": solve_config, "out": str(tmp_path / "api-run")}
    )
    assert response.status_code == 200
    manifest = response.json()["data"]
    assert manifest["exit_code"] == 0
    assert (tmp_path / "api-run" / "manifest.json").exists()


def test_run_rejects_bad_config(client, solve_config):
    solve_config["operator"]["sigma"] = 2.5
    response = client.post("/api/v1/experiments/run", json={"config": solve_config})
    assert response.status_code == 422
    body = response.json()
    assert not body["success"]
    assert body["error"] == "ConfigError"


def test_run_rejects_unknown_experiment(client, solve_config):
    solve_config["experiment"] = "nope"
    response = client.post("/api/v1/experiments/run", json={"config": solve_config})
    assert response.status_code == 422
