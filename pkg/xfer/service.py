"""
Experiment runs on demand and on a schedule
"""
import os
import logging
import threading
from datetime import datetime
from typing import Dict, Optional

from apscheduler.schedulers.background import BackgroundScheduler
from apscheduler.triggers.cron import CronTrigger

from .config import Config
from .harness import LanguageSuite, load_grid, load_report, run_grid
from .run_log import RunLog

logger = logging.getLogger(__name__)


class ExperimentService:
    """Runs the configured grid and keeps its status"""

    def __init__(self, config: Config, run_log: Optional[RunLog] = None):
        """
        Initialize experiment service

        Args:
            config: Configuration manager
            run_log: Event log (defaults to run_log.json next to the config)
        """
        self.config = config
        self.scheduler = BackgroundScheduler()
        self.run_status = {
            "last_run": None,
            "status": "idle",
            "results": []
        }
        self.run_log = run_log or RunLog(os.path.join(config.config_dir, 'run_log.json'))
        self._lock = threading.Lock()

    def run_configured_grid(self) -> Dict:
        """
        Run the grid named in the schedule settings

        Returns:
            Dictionary with per-cell results
        """
        if not self._lock.acquire(blocking=False):
            return {"status": "error", "error": "A grid run is already in progress"}
        logger.info("Starting configured grid run")
        self.run_status["status"] = "running"

        try:
            schedule_config = self.config.get_schedule_config()
            grid_path = schedule_config.get("grid")
            if not grid_path:
                raise ValueError("No grid configured")
            out_dir = schedule_config.get("out_dir", "results/scheduled")

            grid = load_grid(grid_path)
            settings = self.config.get_harness_settings()
            suite = LanguageSuite.build(settings)
            report = run_grid(grid, suite, out_dir, settings, run_log=self.run_log)

            results = [{"cell_id": c.cell_id, "status": c.status, "mean_f1": c.mean_f1} for c in report.cells]
            self.run_status["last_run"] = datetime.now().isoformat()
            self.run_status["status"] = "completed"
            self.run_status["results"] = results

            succeeded = len([r for r in results if r["status"] == "success"])
            logger.info(f"Grid run completed. {succeeded} of {len(results)} cells succeeded")
            return {
                "status": report.status,
                "results": results
            }

        except Exception as e:
            logger.error(f"Grid run failed: {e}")
            self.run_status["status"] = "error"
            return {
                "status": "error",
                "error": str(e)
            }
        finally:
            self._lock.release()

    def start_scheduler(self):
        """Start the scheduler for automatic re-runs"""
        schedule_config = self.config.get_schedule_config()

        if not schedule_config.get("enabled", False):
            logger.info("Scheduler is disabled")
            return

        cron_expr = schedule_config.get("cron", "0 2 * * *")

        try:
            self.scheduler.remove_all_jobs()
            self.scheduler.add_job(
                self.run_configured_grid,
                CronTrigger.from_crontab(cron_expr),
                id='grid_run',
                name='Grid Run',
                replace_existing=True
            )

            if not self.scheduler.running:
                self.scheduler.start()

            logger.info(f"Scheduler started with cron: {cron_expr}")

        except Exception as e:
            logger.error(f"Failed to start scheduler: {e}")
            raise

    def stop_scheduler(self):
        if self.scheduler.running:
            self.scheduler.remove_all_jobs()
            self.scheduler.shutdown(wait=False)
            self.scheduler = BackgroundScheduler()
            logger.info("Scheduler stopped")

    def get_status(self) -> Dict:
        return self.run_status

    def latest_report(self) -> Optional[Dict]:
        """The report.json of the configured results directory, if one exists"""
        out_dir = self.config.get_schedule_config().get("out_dir", "results/scheduled")
        path = os.path.join(out_dir, "report.json")
        if not os.path.exists(path):
            return None
        return load_report(path).to_dict()
