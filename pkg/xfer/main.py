"""
Flask application for the xfer experiment service
"""
import logging
from typing import Optional

from apscheduler.triggers.cron import CronTrigger
from flask import Flask, jsonify, request

from .config import Config
from .service import ExperimentService

logger = logging.getLogger(__name__)

MAX_ERROR_LENGTH = 200


def sanitize_error_message(error: Exception) -> str:
    """
    Sanitize error messages to prevent stack trace exposure.

    Args:
        error: The exception to sanitize

    Returns:
        A safe error message string
    """
    error_str = str(error)
    if '/' in error_str or '\\' in error_str or 'Traceback' in error_str:
        return "An internal error occurred"
    if len(error_str) > MAX_ERROR_LENGTH:
        return error_str[:MAX_ERROR_LENGTH]
    return error_str if error_str else "An error occurred"


def create_app(config: Optional[Config] = None, service: Optional[ExperimentService] = None) -> Flask:
    """
    Build the Flask app

    Args:
        config: Configuration manager (loaded from $XFER_CONFIG when omitted)
        service: Experiment service (built from config when omitted)
    """
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    app = Flask(__name__)
    config = config or Config()
    service = service or ExperimentService(config)
    app.extensions["xfer_service"] = service

    try:
        service.start_scheduler()
    except Exception as e:
        logger.error(f"Failed to start scheduler: {e}")

    @app.route('/health')
    def health():
        """Health check endpoint"""
        return jsonify({"status": "healthy"}), 200

    @app.route('/api/settings', methods=['GET'])
    def get_settings():
        try:
            return jsonify({
                "model": config.section("model"),
                "tokenizer": config.section("tokenizer"),
                "harness": config.section("harness"),
                "schedule": config.get_schedule_config()
            })
        except Exception as e:
            logger.error(f"Failed to get settings: {e}")
            return jsonify({"error": "Failed to load settings"}), 500

    @app.route('/api/settings/schedule', methods=['POST'])
    def update_schedule_settings():
        try:
            data = request.get_json(silent=True) or {}
            enabled = bool(data.get('enabled', False))
            cron = data.get('cron', '0 2 * * *')
            try:
                CronTrigger.from_crontab(cron)
            except ValueError as e:
                return jsonify({"error": f"Invalid cron expression: {sanitize_error_message(e)}"}), 400

            config.update_schedule_config(enabled, cron, data.get('grid'), data.get('out_dir'))

            service.stop_scheduler()
            if enabled:
                service.start_scheduler()

            return jsonify({"status": "success", "message": "Schedule settings updated"})
        except Exception as e:
            logger.error(f"Failed to update schedule settings: {e}")
            return jsonify({"error": "Failed to update schedule settings"}), 500

    @app.route('/api/experiments/run', methods=['POST'])
    def trigger_run():
        """Manually run the configured grid"""
        try:
            result = service.run_configured_grid()
            if result.get("status") == "error" and "error" in result:
                logger.error(f"Grid run error: {result.get('error')}")
                return jsonify({"status": "error", "error": sanitize_error_message(Exception(result["error"]))}), 500
            return jsonify(result)
        except Exception as e:
            logger.error(f"Grid run failed: {e}")
            return jsonify({"error": "Grid run failed"}), 500

    @app.route('/api/experiments/status', methods=['GET'])
    def get_run_status():
        try:
            return jsonify(service.get_status())
        except Exception as e:
            logger.error(f"Failed to get run status: {e}")
            return jsonify({"error": "Failed to get run status"}), 500

    @app.route('/api/experiments/report', methods=['GET'])
    def get_report():
        try:
            report = service.latest_report()
            if report is None:
                return jsonify({"error": "No report available"}), 404
            return jsonify(report)
        except Exception as e:
            logger.error(f"Failed to load report: {e}")
            return jsonify({"error": "Failed to load report"}), 500

    @app.route('/api/runs/logs', methods=['GET'])
    def get_run_logs():
        try:
            limit = request.args.get('limit', 100, type=int)
            event_type = request.args.get('event_type', None)
            return jsonify({
                "logs": service.run_log.get_logs(limit=limit, event_type=event_type),
                "stats": service.run_log.get_stats()
            })
        except Exception as e:
            logger.error(f"Failed to get run logs: {e}")
            return jsonify({"error": "Failed to load run logs"}), 500

    @app.route('/api/runs/logs', methods=['DELETE'])
    def clear_run_logs():
        try:
            service.run_log.clear_logs()
            return jsonify({"status": "success", "message": "Run log cleared"})
        except Exception as e:
            logger.error(f"Failed to clear run logs: {e}")
            return jsonify({"error": "Failed to clear run logs"}), 500

    return app
