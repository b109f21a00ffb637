"""Clients for the three auxiliary agents: predictive maintenance (PdM),
model explanation (XAI), and sensor readings (IoT).

Each client wraps one HTTP endpoint, validates the response body against
the agent's wire schema, and renders a plain-text summary for prompt
inclusion. Rendering is a pure function of the body so the same payload
always produces the same prompt block.

Failure policy: a request is retried while budget remains inside the
configured timeout, and every failure surfaces as AgentUnavailable or
BadPayload. Callers that fan out to several agents use fetch_selected,
which runs the fetches concurrently under a joint deadline of the
largest per-agent timeout; an agent that misses the deadline is reported
as a failure, never as a hang.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from datetime import datetime

import requests

from .errors import AgentUnavailable, BadPayload, ConfigError

AGENT_KINDS = ("pdm", "xai", "iot")

DEFAULT_TIMEOUT_MS = 3000
DEFAULT_RETRIES = 2
DEFAULT_IOT_WINDOW_S = 3600.0

AGENT_DESCRIPTIONS = {
    "pdm": "pdm: predictive maintenance outputs for an asset "
           "(health score, predicted failure mode, horizon)",
    "xai": "xai: feature attributions and narrative explaining a model "
           "prediction",
    "iot": "iot: current and recent sensor readings from a device",
}


@dataclass(frozen=True)
class AgentEndpointConfig:
    agent: str
    base_url: str
    auth_env_var: str | None = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    retries: int = DEFAULT_RETRIES

    def __post_init__(self):
        if self.agent not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind: {self.agent!r}")
        if self.timeout_ms <= 0:
            raise ConfigError("timeout_ms must be positive")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")


@dataclass
class AgentPayload:
    agent: str
    fetched_at: float
    body: dict
    summary_text: str = field(default="")

    def __post_init__(self):
        if not self.summary_text:
            self.summary_text = render_summary(self.agent, self.body)


def _fmt(x) -> str:
    return f"{float(x):g}"


def _require(body: dict, key: str, types) -> object:
    if key not in body:
        raise BadPayload(f"missing field {key!r}")
    value = body[key]
    if not isinstance(value, types):
        raise BadPayload(f"field {key!r} has wrong type")
    return value


def _validate_pdm(body: dict) -> dict:
    asset_id = _require(body, "asset_id", str)
    score = _require(body, "health_score", (int, float))
    if isinstance(score, bool) or not 0.0 <= float(score) <= 1.0:
        raise BadPayload("health_score outside [0, 1]")
    out = {"asset_id": asset_id, "health_score": float(score)}
    if body.get("predicted_failure_mode") is not None:
        mode = body["predicted_failure_mode"]
        if not isinstance(mode, str):
            raise BadPayload("predicted_failure_mode must be text")
        out["predicted_failure_mode"] = mode
    if body.get("horizon_days") is not None:
        horizon = body["horizon_days"]
        if isinstance(horizon, bool) or not isinstance(horizon, int):
            raise BadPayload("horizon_days must be an integer")
        out["horizon_days"] = horizon
    return out


def _validate_xai(body: dict) -> dict:
    prediction_id = _require(body, "prediction_id", str)
    raw = _require(body, "top_features", list)
    features = []
    for item in raw:
        if not isinstance(item, dict):
            raise BadPayload("top_features entries must be objects")
        name = _require(item, "name", str)
        attribution = _require(item, "attribution", (int, float))
        if isinstance(attribution, bool):
            raise BadPayload("attribution must be numeric")
        features.append({"name": name, "attribution": float(attribution)})
    narrative = body.get("narrative")
    if narrative is not None and not isinstance(narrative, str):
        raise BadPayload("narrative must be text")
    if not features and not narrative:
        raise BadPayload("explanation has no features and no narrative")
    out = {"prediction_id": prediction_id, "top_features": features}
    if narrative:
        out["narrative"] = narrative
    return out


def _validate_iot(body: dict) -> dict:
    device_id = _require(body, "device_id", str)
    raw = _require(body, "readings", list)
    readings = []
    for item in raw:
        if not isinstance(item, dict):
            raise BadPayload("readings entries must be objects")
        sensor = _require(item, "sensor", str)
        stamp = _require(item, "timestamp", str)
        try:
            datetime.fromisoformat(stamp)
        except ValueError as exc:
            raise BadPayload(f"malformed timestamp {stamp!r}") from exc
        value = _require(item, "value", (int, float))
        if isinstance(value, bool):
            raise BadPayload("value must be numeric")
        unit = _require(item, "unit", str)
        readings.append({
            "sensor": sensor,
            "timestamp": stamp,
            "value": float(value),
            "unit": unit,
        })
    return {"device_id": device_id, "readings": readings}


def render_summary(agent: str, body: dict) -> str:
    """Render an agent body as the plain-text block a prompt embeds.

    Pure function of the body: no clock, no randomness.
    """
    if agent == "pdm":
        parts = [
            f"PdM assessment for asset {body['asset_id']}: "
            f"health score {_fmt(body['health_score'])}"
        ]
        if "predicted_failure_mode" in body:
            parts.append(
                f"predicted failure mode: {body['predicted_failure_mode']}"
            )
        if "horizon_days" in body:
            parts.append(f"horizon: {body['horizon_days']} days")
        return "; ".join(parts)
    if agent == "xai":
        ranked = sorted(
            body["top_features"],
            key=lambda f: (-abs(f["attribution"]), f["name"]),
        )
        rendered = ", ".join(
            f"{f['name']} {f['attribution']:+g}" for f in ranked
        )
        text = f"Explanation for prediction {body['prediction_id']}"
        if rendered:
            text += f": top features {rendered}"
        if body.get("narrative"):
            text += f". {body['narrative']}"
        return text
    if agent == "iot":
        if not body["readings"]:
            return (
                f"Sensor readings for device {body['device_id']}: "
                "no readings in window"
            )
        per_sensor: dict[str, list[dict]] = {}
        for r in body["readings"]:
            per_sensor.setdefault(r["sensor"], []).append(r)
        lines = [f"Sensor readings for device {body['device_id']}:"]
        for sensor in sorted(per_sensor):
            rows = sorted(per_sensor[sensor], key=lambda r: r["timestamp"])
            values = [r["value"] for r in rows]
            latest = rows[-1]
            lines.append(
                f"  {sensor}: latest {_fmt(latest['value'])} {latest['unit']}"
                f" (min {_fmt(min(values))}, max {_fmt(max(values))},"
                f" n={len(values)})"
            )
        return "\n".join(lines)
    raise ConfigError(f"unknown agent kind: {agent!r}")


_VALIDATORS = {"pdm": _validate_pdm, "xai": _validate_xai, "iot": _validate_iot}


def _get_json(url: str, config: AgentEndpointConfig) -> dict:
    headers = {}
    if config.auth_env_var:
        token = os.environ.get(config.auth_env_var)
        if not token:
            raise ConfigError(
                f"auth env var {config.auth_env_var} is not set"
            )
        headers["Authorization"] = f"Bearer {token}"
    deadline = time.monotonic() + config.timeout_ms / 1000.0
    last: str = "no attempt made"
    for _ in range(config.retries + 1):
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            break
        try:
            resp = requests.get(url, headers=headers, timeout=remaining)
        except requests.RequestException as exc:
            last = str(exc)
            continue
        if resp.status_code >= 500:
            last = f"HTTP {resp.status_code}"
            continue
        if resp.status_code != 200:
            raise AgentUnavailable(
                f"{config.agent} returned HTTP {resp.status_code}"
            )
        try:
            body = resp.json()
        except ValueError as exc:
            raise BadPayload(f"{config.agent} returned non-JSON body") from exc
        if not isinstance(body, dict):
            raise BadPayload(f"{config.agent} body must be a JSON object")
        return body
    raise AgentUnavailable(f"{config.agent} unreachable: {last}")


def _fetch(config: AgentEndpointConfig, path: str) -> AgentPayload:
    body = _get_json(config.base_url.rstrip("/") + path, config)
    validated = _VALIDATORS[config.agent](body)
    return AgentPayload(
        agent=config.agent, fetched_at=time.time(), body=validated
    )


def fetch_pdm(asset_id: str, config: AgentEndpointConfig) -> AgentPayload:
    if not asset_id:
        raise ValueError("asset_id must be non-empty")
    return _fetch(config, f"/pdm/{asset_id}")


def fetch_xai(prediction_id: str, config: AgentEndpointConfig) -> AgentPayload:
    if not prediction_id:
        raise ValueError("prediction_id must be non-empty")
    return _fetch(config, f"/xai/{prediction_id}")


def fetch_iot(
    device_id: str, window_s: float, config: AgentEndpointConfig
) -> AgentPayload:
    if not device_id:
        raise ValueError("device_id must be non-empty")
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    return _fetch(config, f"/iot/{device_id}?window_s={_fmt(window_s)}")


def fetch_selected(
    entities: dict[str, str],
    configs: dict[str, AgentEndpointConfig],
    *,
    iot_window_s: float = DEFAULT_IOT_WINDOW_S,
) -> tuple[dict[str, AgentPayload], dict[str, str]]:
    """Fetch payloads for the selected agents concurrently.

    entities maps agent kind to the id it should query. Returns
    (payloads, failures): an agent lands in exactly one of the two, so a
    failed agent degrades the answer instead of failing it.
    """
    selected = [a for a in AGENT_KINDS if a in entities]
    for agent in selected:
        if agent not in configs:
            raise ConfigError(f"no endpoint configured for agent {agent!r}")
    if not selected:
        return {}, {}

    def call(agent: str) -> AgentPayload:
        if agent == "pdm":
            return fetch_pdm(entities[agent], configs[agent])
        if agent == "xai":
            return fetch_xai(entities[agent], configs[agent])
        return fetch_iot(entities[agent], iot_window_s, configs[agent])

    # joint deadline: the slowest configured agent bounds the whole batch
    deadline_s = max(configs[a].timeout_ms for a in selected) / 1000.0
    payloads: dict[str, AgentPayload] = {}
    failures: dict[str, str] = {}
    pool = ThreadPoolExecutor(max_workers=len(selected))
    try:
        futures = {pool.submit(call, a): a for a in selected}
        done, pending = wait(futures, timeout=deadline_s + 0.05)
        for fut in done:
            agent = futures[fut]
            try:
                payloads[agent] = fut.result()
            except (AgentUnavailable, BadPayload) as exc:
                failures[agent] = str(exc)
        for fut in pending:
            fut.cancel()
            failures[futures[fut]] = "joint deadline exceeded"
    finally:
        # never join stragglers here: their own HTTP timeouts reap them
        pool.shutdown(wait=False, cancel_futures=True)
    return payloads, failures


def load_agent_configs(raw: dict) -> dict[str, AgentEndpointConfig]:
    """Build per-agent endpoint configs from a config mapping.

    raw maps agent kind to {base_url, auth_env_var?, timeout_ms?,
    retries?}. Unknown agent kinds are rejected.
    """
    configs = {}
    for agent, section in raw.items():
        if agent not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind: {agent!r}")
        if not isinstance(section, dict) or "base_url" not in section:
            raise ConfigError(f"agent {agent!r} needs a base_url")
        configs[agent] = AgentEndpointConfig(
            agent=agent,
            base_url=str(section["base_url"]),
            auth_env_var=section.get("auth_env_var"),
            timeout_ms=int(section.get("timeout_ms", DEFAULT_TIMEOUT_MS)),
            retries=int(section.get("retries", DEFAULT_RETRIES)),
        )
    return configs


def to_json(payload: AgentPayload) -> str:
    return json.dumps(
        {
            "agent": payload.agent,
            "fetched_at": payload.fetched_at,
            "body": payload.body,
            "summary_text": payload.summary_text,
        },
        sort_keys=True,
    )
