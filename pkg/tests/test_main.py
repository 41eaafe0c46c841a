import pytest

from xfer.main import create_app, sanitize_error_message
from xfer.run_log import RunLog


class StubService:
    def __init__(self, run_log):
        self.run_log = run_log
        self.result = {"status": "success", "results": [{"cell_id": "a", "status": "success", "mean_f1": 0.8}]}
        self.report = None
        self.started = 0
        self.stopped = 0

    def start_scheduler(self):
        self.started += 1

    def stop_scheduler(self):
        self.stopped += 1

    def run_configured_grid(self):
        return self.result

    def get_status(self):
        return {"status": "idle", "last_run": None, "results": []}

    def latest_report(self):
        return self.report


@pytest.fixture
def service(tmp_path):
    return StubService(RunLog(str(tmp_path / "run_log.json")))


@pytest.fixture
def client(small_config, service):
    app = create_app(small_config, service)
    app.testing = True
    return app.test_client()


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.get_json() == {"status": "healthy"}


def test_settings(client):
    data = client.get("/api/settings").get_json()
    assert data["model"]["d_model"] == 8
    assert data["schedule"]["cron"] == "0 2 * * *"


def test_schedule_update_validates_cron(client, service, small_config):
    response = client.post("/api/settings/schedule", json={"enabled": True, "cron": "not a cron"})
    assert response.status_code == 400
    assert small_config.get_schedule_config()["enabled"] is False

    response = client.post("/api/settings/schedule", json={"enabled": True, "cron": "0 3 * * 1"})
    assert response.status_code == 200
    assert small_config.get_schedule_config()["cron"] == "0 3 * * 1"
    assert service.stopped == 1
    assert service.started == 2


def test_manual_run(client, service):
    assert client.post("/api/experiments/run").get_json()["results"][0]["cell_id"] == "a"
    service.result = {"status": "error", "error": "No such file: /secret/path/grid.json"}
    response = client.post("/api/experiments/run")
    assert response.status_code == 500
    assert response.get_json()["error"] == "An internal error occurred"


def test_status_and_report(client, service):
    assert client.get("/api/experiments/status").get_json()["status"] == "idle"
    assert client.get("/api/experiments/report").status_code == 404
    service.report = {"kind": "grid", "cells": []}
    assert client.get("/api/experiments/report").get_json()["kind"] == "grid"


def test_run_logs(client, service):
    service.run_log.add_grid_run(["a"], "success", None, 1.0)
    service.run_log.add_cell_result("a", "success", 0.8, 1.0)
    data = client.get("/api/runs/logs?event_type=grid_run").get_json()
    assert len(data["logs"]) == 1
    assert data["stats"]["total_grid_runs"] == 1
    assert client.delete("/api/runs/logs").status_code == 200
    assert client.get("/api/runs/logs").get_json()["logs"] == []


@pytest.mark.parametrize("message,expected", [
    ("bad value", "bad value"),
    ("", "An error occurred"),
    ("open /etc/passwd failed", "An internal error occurred"),
    ("x" * 300, "x" * 200),
])
def test_sanitize_error_message(message, expected):
    assert sanitize_error_message(Exception(message)) == expected
