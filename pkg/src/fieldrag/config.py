"""Service configuration: one TOML-or-JSON file mapping onto every
subsystem, validated up front so the service refuses to start rather
than fail mid-request.

Value precedence everywhere: CLI flag > environment variable > file.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agents import load_agent_configs
from .embedding import (
    DEFAULT_TEST_DIM,
    TEST_PROVIDER_ID,
    EmbeddingProviderSpec,
)
from .errors import ConfigError
from .index import IndexBackendSpec
from .ingest import ChunkerConfig
from .llm import EchoLLM, RemoteLLM
from .router import DEFAULT_REFUSAL, RouterConfig

ENV_PREFIX = "FIELDRAG_"


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    data_dir: str = "./fieldrag_data"
    keys_file: str = "./keys.json"
    cors_origins: list = field(default_factory=list)
    grounding_required: bool = True
    top_k: int = 5
    history_window: int = 6
    routing_policy: str = "llm"
    refusal_text: str = DEFAULT_REFUSAL
    temperature: float = 0.0
    iot_window_s: float = 3600.0
    embedding: dict = field(default_factory=dict)
    llm: dict = field(default_factory=dict)
    index: dict = field(default_factory=dict)
    agents: dict = field(default_factory=dict)
    chunker: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.port < 65536:
            raise ConfigError(f"port out of range: {self.port}")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.history_window < 0:
            raise ConfigError("history_window must be >= 0")
        if self.routing_policy not in ("llm", "lexical"):
            raise ConfigError(
                f"routing_policy must be llm or lexical, got "
                f"{self.routing_policy!r}"
            )
        for name in ("embedding", "llm", "index", "agents", "chunker"):
            if not isinstance(getattr(self, name), dict):
                raise ConfigError(f"config section {name!r} must be a table")

    # -- builders -------------------------------------------------------------

    def embedding_spec(self) -> EmbeddingProviderSpec:
        section = self.embedding
        try:
            return EmbeddingProviderSpec(
                provider_id=section.get("provider_id", TEST_PROVIDER_ID),
                dim=int(section.get("dim", DEFAULT_TEST_DIM)),
                endpoint=section.get("endpoint"),
                auth_env_var=section.get("auth_env_var"),
                batch_limit=int(section.get("batch_limit", 64)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad embedding config: {exc}") from exc

    def index_spec(self) -> IndexBackendSpec:
        section = self.index
        dim = self.embedding_spec().dim
        try:
            return IndexBackendSpec(
                kind=section.get("kind", "exact"),
                dim=int(section.get("dim", dim)),
                m=int(section.get("m", 16)),
                ef_construction=int(section.get("ef_construction", 200)),
                ef_search=int(section.get("ef_search", 64)),
                seed=int(section.get("seed", 2025)),
                endpoint=section.get("endpoint"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad index config: {exc}") from exc

    def chunker_config(self) -> ChunkerConfig:
        section = self.chunker
        try:
            return ChunkerConfig(
                strategy=section.get("strategy", "semantic"),
                max_chars=int(section.get("max_chars", 1024)),
                overlap_chars=int(section.get("overlap_chars", 0)),
                semantic_overflow=section.get(
                    "semantic_overflow", "split-fixed"
                ),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad chunker config: {exc}") from exc

    def router_config(self) -> RouterConfig:
        return RouterConfig(
            top_k=self.top_k,
            history_window=self.history_window,
            grounding_required=self.grounding_required,
            refusal_text=self.refusal_text,
            routing_policy=self.routing_policy,
            temperature=self.temperature,
            iot_window_s=self.iot_window_s,
        )

    def agent_configs(self) -> dict:
        try:
            return load_agent_configs(self.agents)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad agents config: {exc}") from exc

    def build_llm(self):
        kind = self.llm.get("kind", "echo")
        if kind == "echo":
            return EchoLLM()
        if kind == "remote":
            endpoint = self.llm.get("endpoint")
            if not endpoint:
                raise ConfigError("remote llm needs an endpoint")
            return RemoteLLM(
                endpoint,
                auth_env_var=self.llm.get("auth_env_var"),
                timeout=float(self.llm.get("timeout", 60.0)),
            )
        raise ConfigError(f"unknown llm kind: {kind!r}")


_KNOWN_KEYS = {f.name for f in ServiceConfig.__dataclass_fields__.values()}


def _parse_file(path: str) -> dict:
    """Accept TOML or JSON; the extension is a hint, not a requirement."""
    raw = Path(path).read_bytes()
    errors = []
    order = (
        ("json", "toml") if path.endswith(".json") else ("toml", "json")
    )
    for fmt in order:
        try:
            if fmt == "toml":
                return tomllib.loads(raw.decode("utf-8"))
            return json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            errors.append(f"{fmt}: {exc}")
    raise ConfigError(
        f"config file {path} is neither valid TOML nor JSON "
        f"({'; '.join(errors)})"
    )


def load_config(
    path: str | None = None,
    *,
    env: dict | None = None,
    overrides: dict | None = None,
) -> ServiceConfig:
    """Assemble config with precedence: overrides (flags) > env > file.

    Env vars are FIELDRAG_<FIELD> for scalar fields, e.g. FIELDRAG_PORT.
    """
    import os

    env = os.environ if env is None else env
    data: dict = {}
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        parsed = _parse_file(path)
        if not isinstance(parsed, dict):
            raise ConfigError("config root must be a table/object")
        unknown = set(parsed) - _KNOWN_KEYS
        if unknown:
            raise ConfigError(
                f"unknown config keys: {', '.join(sorted(unknown))}"
            )
        data.update(parsed)

    scalar_casts = {
        "host": str, "port": int, "data_dir": str, "keys_file": str,
        "grounding_required": _parse_bool, "top_k": int,
        "history_window": int, "routing_policy": str, "refusal_text": str,
        "temperature": float, "iot_window_s": float,
    }
    for name, cast in scalar_casts.items():
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            try:
                data[name] = cast(env[env_key])
            except ValueError as exc:
                raise ConfigError(f"bad {env_key}: {exc}") from exc

    for name, value in (overrides or {}).items():
        if value is not None:
            data[name] = value

    try:
        return ServiceConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def build_engine(config: ServiceConfig, *, llm=None):
    """Construct the engine a service or CLI run shares."""
    from .engine import ChatEngine
    from .index import VectorIndex

    return ChatEngine(
        data_dir=config.data_dir,
        embedding_spec=config.embedding_spec(),
        index=VectorIndex(config.index_spec()),
        llm=llm if llm is not None else config.build_llm(),
        agent_configs=config.agent_configs(),
        router_config=config.router_config(),
        chunker_config=config.chunker_config(),
    )
