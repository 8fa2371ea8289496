from flask import Blueprint, current_app, jsonify, request
import logging

from .monitor import CONTROL_VERBS, QUERY_VERBS, Monitor, MonitorResponse

logger = logging.getLogger(__name__)

monitor_bp = Blueprint("monitor", __name__)

CONFLICT_CODES = {"already-paused", "not-paused"}


def get_monitor() -> Monitor:
    return current_app.extensions["weaves_monitor"]


def status_for(response: MonitorResponse) -> int:
    """Map a protocol error code onto an HTTP status."""
    if response.ok:
        return 200
    if response.code.startswith("unknown-") and response.code != "unknown-verb":
        return 404
    if response.code in CONFLICT_CODES:
        return 409
    if response.code == "timeout":
        return 503
    if response.code == "internal":
        return 500
    return 400


def to_json(response: MonitorResponse) -> dict:
    if not response.ok:
        return {"error": response.message, "code": response.code}
    payload = list(response.payload)
    body = {"status": "ok"}
    if payload and payload[0].startswith("generation "):
        body["generation"] = int(payload.pop(0).split()[1])
    body["lines"] = payload
    return body


def run_verb(line: str, query_only: bool = True):
    monitor = get_monitor()
    response = monitor.handle_query(line) if query_only else monitor.handle_line(line)
    return jsonify(to_json(response)), status_for(response)


@monitor_bp.route("/health", methods=["GET"])
def health_check():
    """Health check endpoint"""
    monitor = get_monitor()
    return jsonify({
        "status": "healthy",
        "service": "weaves-monitor",
        "tapestry": monitor.tapestry.name,
        "running": monitor.runtime.running,
        "paused": monitor.runtime.paused,
        "verbs": list(QUERY_VERBS + CONTROL_VERBS),
    })


@monitor_bp.route("/modules", methods=["GET"])
def list_modules():
    return run_verb("LIST-MODULES")


@monitor_bp.route("/beads", methods=["GET"])
def list_beads():
    return run_verb("LIST-BEADS")


@monitor_bp.route("/weaves", methods=["GET"])
def list_weaves():
    return run_verb("LIST-WEAVES")


@monitor_bp.route("/strings", methods=["GET"])
def list_strings():
    return run_verb("LIST-STRINGS")


@monitor_bp.route("/stats", methods=["GET"])
def stats():
    return run_verb("STATS")


@monitor_bp.route("/tapestry", methods=["GET"])
def show_tapestry():
    return run_verb("SHOW-TAPESTRY")


@monitor_bp.route("/snapshot/<weave>", methods=["GET"])
def snapshot(weave):
    if not weave or any(c.isspace() for c in weave):
        return jsonify({"error": "Invalid weave name", "code": "parse"}), 400
    return run_verb(f"SNAPSHOT {weave}")


@monitor_bp.route("/monitor", methods=["POST"])
def monitor_line():
    """Run any protocol verb, control verbs included."""
    if not request.is_json:
        return jsonify({"error": "Content-Type must be application/json", "code": "parse"}), 400
    data = request.get_json(silent=True) or {}
    line = data.get("line")
    if not isinstance(line, str) or not line.strip():
        return jsonify({"error": "Missing required field: line", "code": "parse"}), 400
    if "\n" in line:
        return jsonify({"error": "One request per call", "code": "parse"}), 400
    logger.info(f"HTTP monitor request: {line}")
    return run_verb(line, query_only=False)
