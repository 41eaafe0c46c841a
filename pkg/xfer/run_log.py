"""
Experiment run logging module
"""
import os
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

from .config import DEFAULT_CONFIG_PATH

logger = logging.getLogger(__name__)

EVENT_TYPES = ("grid_run", "size_sweep", "cell_result")


class RunLog:
    """Manages experiment event logging"""

    def __init__(self, log_file: str = None):
        """
        Initialize run log manager

        Args:
            log_file: Path to log file (defaults to run_log.json next to the config file)
        """
        if log_file is None:
            config_path = os.environ.get('XFER_CONFIG', DEFAULT_CONFIG_PATH)
            log_file = os.path.join(os.path.dirname(config_path) or ".", 'run_log.json')

        self.log_file = log_file
        self.log_dir = Path(log_file).parent
        self.log_dir.mkdir(parents=True, exist_ok=True)

        if not Path(log_file).exists():
            self._save_logs([])

    def _load_logs(self) -> List[Dict]:
        try:
            with open(self.log_file, 'r') as f:
                return json.load(f)
        except (FileNotFoundError, json.JSONDecodeError) as e:
            logger.error(f"Failed to load run log: {e}")
            return []

    def _save_logs(self, logs: List[Dict]):
        try:
            with open(self.log_file, 'w') as f:
                json.dump(logs, f, indent=2, default=str)
        except Exception as e:
            logger.error(f"Failed to save run log: {e}")
            raise

    def _append(self, entry: Dict):
        logs = self._load_logs()
        logs.append({"timestamp": datetime.now().isoformat(), **entry})
        self._save_logs(logs)

    def add_grid_run(self, cell_ids: List[str], status: str, out_dir: Optional[str], wall_time: float):
        """
        Add a grid run event

        Args:
            cell_ids: Cells in the grid
            status: success, partial or error
            out_dir: Results directory (None when nothing was written)
            wall_time: Total seconds spent in cells
        """
        self._append({
            "event_type": "grid_run",
            "status": status,
            "cells": cell_ids,
            "out_dir": out_dir,
            "wall_time": round(wall_time, 3),
        })
        logger.info(f"Logged grid run of {len(cell_ids)} cells: {status}")

    def add_size_sweep(self, cell_id: str, sizes: List[int], status: str, out_dir: Optional[str]):
        self._append({
            "event_type": "size_sweep",
            "status": status,
            "cell_id": cell_id,
            "sizes": sizes,
            "out_dir": out_dir,
        })
        logger.info(f"Logged size sweep of {cell_id}: {status}")

    def add_cell_result(self, cell_id: str, status: str, mean_f1: Optional[float], wall_time: float,
                        errors: List[str] = None):
        self._append({
            "event_type": "cell_result",
            "cell_id": cell_id,
            "status": status,
            "mean_f1": mean_f1,
            "wall_time": round(wall_time, 3),
            "errors": errors or [],
        })

    def get_logs(self, limit: int = 100, event_type: str = None) -> List[Dict]:
        """
        Get logs with optional filtering

        Args:
            limit: Maximum number of logs to return
            event_type: Filter by event type (grid_run, size_sweep, cell_result)

        Returns:
            List of log entries (most recent first)
        """
        logs = self._load_logs()
        if event_type:
            logs = [log for log in logs if log.get("event_type") == event_type]
        logs.sort(key=lambda x: x.get("timestamp", ""), reverse=True)
        return logs[:limit]

    def clear_logs(self):
        self._save_logs([])
        logger.info("Cleared run log")

    def get_stats(self) -> Dict:
        logs = self._load_logs()
        cells = [log for log in logs if log.get("event_type") == "cell_result"]
        return {
            "total_grid_runs": len([log for log in logs if log.get("event_type") == "grid_run"]),
            "total_size_sweeps": len([log for log in logs if log.get("event_type") == "size_sweep"]),
            "successful_cells": len([c for c in cells if c.get("status") == "success"]),
            "failed_cells": len([c for c in cells if c.get("status") == "error"]),
        }
