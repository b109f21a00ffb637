"""Scripted mock servers for the three auxiliary agents.

One server handles all three path families (/pdm/, /xai/, /iot/) from a
fixtures mapping, so tests and demos run hermetically. Fault injection
is in-process: add an agent kind to `fail` to make it answer 503, or set
a delay to simulate a slow backend. A fully "down" agent is simulated by
pointing its endpoint at a closed port or stopping its server.

Fixture shape (JSON): {"pdm": {asset_id: body}, "xai": {prediction_id:
body}, "iot": {device_id: {"readings": [...]}}}. Bodies are served
verbatim with the path id injected. IoT windowing is relative to the
newest fixture timestamp so scripted data never ages out.
"""

from __future__ import annotations

import json
import re
import threading
import time
from datetime import datetime
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .errors import ConfigError

_ROUTE = re.compile(r"^/(pdm|xai|iot)/([A-Za-z0-9_.-]+)$")

_ID_FIELD = {"pdm": "asset_id", "xai": "prediction_id", "iot": "device_id"}


def demo_fixtures() -> dict:
    return {
        "pdm": {
            "a1": {
                "health_score": 0.42,
                "predicted_failure_mode": "bearing wear",
                "horizon_days": 12,
            },
            "a2": {"health_score": 0.93},
        },
        "xai": {
            "p1": {
                "top_features": [
                    {"name": "vibration_rms", "attribution": 0.7},
                    {"name": "oil_temp", "attribution": -0.3},
                ],
                "narrative": "Vibration growth dominates the prediction.",
            },
        },
        "iot": {
            "d1": {
                "readings": [
                    {
                        "sensor": "pressure",
                        "timestamp": "2025-06-01T10:00:00",
                        "value": 2.0,
                        "unit": "bar",
                    },
                    {
                        "sensor": "pressure",
                        "timestamp": "2025-06-01T10:05:00",
                        "value": 3.0,
                        "unit": "bar",
                    },
                ],
            },
        },
    }


def load_fixtures(path: str) -> dict:
    """Load fixtures from a JSON file or a directory of per-agent files."""
    p = Path(path)
    if p.is_dir():
        fixtures = {}
        for agent in ("pdm", "xai", "iot"):
            f = p / f"{agent}.json"
            if f.exists():
                fixtures[agent] = json.loads(f.read_text("utf-8"))
        if not fixtures:
            raise ConfigError(f"no agent fixture files under {path}")
        return fixtures
    try:
        fixtures = json.loads(p.read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load fixtures from {path}: {exc}") from exc
    if not isinstance(fixtures, dict):
        raise ConfigError("fixtures must be a JSON object")
    return fixtures


def _window_readings(body: dict, window_s: float) -> dict:
    readings = body.get("readings", [])
    if not readings:
        return {"readings": []}
    try:
        stamps = [datetime.fromisoformat(r["timestamp"]) for r in readings]
    except (KeyError, TypeError, ValueError):
        return dict(body)  # malformed fixtures are served verbatim
    newest = max(stamps)
    kept = [
        r for r, ts in zip(readings, stamps)
        if (newest - ts).total_seconds() <= window_s
    ]
    out = dict(body)
    out["readings"] = kept
    return out


class _Handler(BaseHTTPRequestHandler):
    server_version = "MockAgents/1"

    def log_message(self, *args):  # keep test output clean
        pass

    def _send(self, status: int, obj: dict):
        data = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        parsed = urlparse(self.path)
        match = _ROUTE.match(parsed.path)
        if not match:
            self._send(404, {"error": "unknown_path"})
            return
        agent, entity_id = match.groups()
        owner: MockAgentServer = self.server.owner  # type: ignore[attr-defined]
        delay = owner.delays.get(agent, 0.0)
        if delay:
            time.sleep(delay)
        if agent in owner.fail:
            self._send(503, {"error": "scripted_failure"})
            return
        with owner._fail_lock:
            remaining = owner.fail_times.get(agent, 0)
            if remaining > 0:
                owner.fail_times[agent] = remaining - 1
                self._send(503, {"error": "scripted_failure"})
                return
        body = owner.fixtures.get(agent, {}).get(entity_id)
        if body is None:
            self._send(404, {"error": "unknown_id"})
            return
        body = dict(body)
        body[_ID_FIELD[agent]] = entity_id
        if agent == "iot":
            query = parse_qs(parsed.query)
            if "window_s" in query:
                try:
                    window_s = float(query["window_s"][0])
                except ValueError:
                    self._send(400, {"error": "bad_window"})
                    return
                windowed = _window_readings(body, window_s)
                windowed[_ID_FIELD[agent]] = entity_id
                body = windowed
        self._send(200, body)


class MockAgentServer:
    """In-process HTTP server scripting all three agents from fixtures."""

    def __init__(self, fixtures: dict | None = None, port: int = 0):
        self.fixtures = demo_fixtures() if fixtures is None else fixtures
        self.fail: set[str] = set()
        self.fail_times: dict[str, int] = {}
        self._fail_lock = threading.Lock()
        self.delays: dict[str, float] = {}
        self._httpd = ThreadingHTTPServer(("127.0.0.1", port), _Handler)
        self._httpd.owner = self  # type: ignore[attr-defined]
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, daemon=True
        )

    @property
    def endpoint(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockAgentServer":
        self._thread.start()
        return self

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def serve_forever(self):  # CLI entry: block until interrupted
        try:
            self._httpd.serve_forever()
        finally:
            self._httpd.server_close()
