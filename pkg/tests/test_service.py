import json

import pytest

from xfer.config import Config
from xfer.run_log import RunLog
from xfer.service import ExperimentService


@pytest.fixture
def service(small_config, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps([{"cell_id": "only", "train_size": 10, "seeds": [0]}]))
    small_config.config["schedule"].update(grid=str(grid), out_dir=str(tmp_path / "results"))
    svc = ExperimentService(small_config, RunLog(str(tmp_path / "run_log.json")))
    yield svc
    svc.stop_scheduler()


def test_configured_grid_runs_and_reports(service):
    assert service.latest_report() is None
    result = service.run_configured_grid()
    assert result["status"] == "success"
    assert result["results"][0]["cell_id"] == "only"
    assert service.get_status()["status"] == "completed"
    assert service.latest_report()["cells"][0]["cell_id"] == "only"
    assert service.run_log.get_stats()["total_grid_runs"] == 1


def test_missing_grid_is_reported_not_raised(service, tmp_path):
    service.config.config["schedule"]["grid"] = str(tmp_path / "nope.json")
    result = service.run_configured_grid()
    assert result["status"] == "error"
    assert service.get_status()["status"] == "error"


def test_overlapping_runs_are_refused(service):
    service._lock.acquire()
    try:
        assert "already in progress" in service.run_configured_grid()["error"]
    finally:
        service._lock.release()


def test_scheduler_follows_the_schedule_settings(service):
    service.start_scheduler()
    assert not service.scheduler.running
    service.config.config["schedule"].update(enabled=True, cron="0 4 * * *")
    service.start_scheduler()
    assert service.scheduler.running
    assert service.scheduler.get_job("grid_run") is not None
    service.stop_scheduler()
    assert not service.scheduler.running


def test_default_run_log_sits_next_to_the_config(config_file):
    service = ExperimentService(Config(str(config_file)))
    assert service.run_log.log_file == str(config_file.parent / "run_log.json")
