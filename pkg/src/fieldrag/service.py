"""HTTP facade over the chat engine.

Every endpoint except /v1/health requires an X-API-Key header that
hashes to an enabled record in the keys file. Authentication runs
before any handler touches disk, so a rejected request leaves the data
directory byte-identical.

Wire conventions: timestamps are UTC ISO-8601, error bodies are
{"error": code, "detail": optional text}, and one JSON line per request
goes to stdout (key label only, never the raw key).
"""

from __future__ import annotations

import hashlib
import hmac
import json
import secrets
import threading
import time
from datetime import datetime, timezone
from pathlib import Path

import requests as _requests
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .config import ServiceConfig, build_engine
from .engine import ChatEngine
from .errors import (
    ConfigError,
    EmptyDocument,
    FieldragError,
    InvalidEncoding,
    OversizeSection,
    ProviderUnavailable,
    UnknownSession,
)
from .router import AGENT_KINDS

MAX_DOCUMENT_BYTES = 20 * 1024 * 1024
HEALTH_CACHE_S = 30.0
PROBE_TIMEOUT_S = 1.0


class ApiError(Exception):
    """Carries an HTTP status plus the wire error body."""

    def __init__(self, status: int, error: str, detail: str | None = None):
        super().__init__(detail or error)
        self.status = status
        self.error = error
        self.detail = detail

    def response(self) -> JSONResponse:
        body: dict = {"error": self.error}
        if self.detail:
            body["detail"] = self.detail
        return JSONResponse(status_code=self.status, content=body)


# -- API keys -------------------------------------------------------------------


def hash_key(raw_key: str) -> str:
    return hashlib.sha256(raw_key.encode("utf-8")).hexdigest()


def generate_key(keys_file: str, label: str) -> str:
    """Mint a key, append its hash record, and return the raw key.

    The raw key is shown exactly once; only the hash is persisted.
    """
    raw = secrets.token_urlsafe(32)
    path = Path(keys_file)
    records = []
    if path.exists():
        records = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(records, list):
            raise ConfigError(f"keys file {keys_file} must hold a JSON list")
    records.append({"label": label, "key_hash": hash_key(raw), "enabled": True})
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(records, indent=1) + "\n", encoding="utf-8")
    tmp.replace(path)
    return raw


class KeyBook:
    """Keys file reader that picks up edits without a restart.

    Reload is keyed on (mtime, size); comparisons use compare_digest so
    lookup time does not leak hash prefixes.
    """

    def __init__(self, path: str):
        self.path = Path(path)
        self._stamp = None
        self._records: list[dict] = []
        self._lock = threading.Lock()

    def _refresh(self) -> None:
        try:
            stat = self.path.stat()
            stamp = (stat.st_mtime_ns, stat.st_size)
        except OSError:
            self._stamp, self._records = None, []
            return
        if stamp == self._stamp:
            return
        try:
            loaded = json.loads(self.path.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            self._stamp, self._records = None, []
            return
        if not isinstance(loaded, list):
            loaded = []
        self._records = [r for r in loaded if isinstance(r, dict)]
        self._stamp = stamp

    def label_for(self, raw_key: str) -> str | None:
        """Return the record label when the key is valid, else None."""
        digest = hash_key(raw_key)
        with self._lock:
            self._refresh()
            records = list(self._records)
        label = None
        for record in records:
            stored = str(record.get("key_hash", ""))
            # constant-time scan: check every record even after a match
            if hmac.compare_digest(stored, digest) and record.get("enabled"):
                label = str(record.get("label", ""))
        return label


# -- helpers --------------------------------------------------------------------


def _iso(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat()


def _turn_record(turn) -> dict:
    return {
        "role": turn.role,
        "text": turn.text,
        "citations": [list(pair) for pair in turn.citations],
        "tool_trace": list(turn.tool_trace),
        "created_at": _iso(turn.created_at),
    }


def _split_trace(trace) -> tuple[list, list]:
    tools = [ref for ref in trace if ref not in AGENT_KINDS]
    agents = [ref for ref in trace if ref in AGENT_KINDS]
    return tools, agents


def _probe(url: str) -> str:
    """Any HTTP response counts as reachable; only transport failure does not."""
    try:
        _requests.get(url, timeout=PROBE_TIMEOUT_S)
        return "ok"
    except _requests.RequestException:
        return "unreachable"


class _HealthCache:
    def __init__(self, config: ServiceConfig, engine: ChatEngine):
        self.config = config
        self.engine = engine
        self._lock = threading.Lock()
        self._stamp = 0.0
        self._body: dict | None = None

    def body(self) -> dict:
        with self._lock:
            now = time.monotonic()
            if self._body is None or now - self._stamp > HEALTH_CACHE_S:
                self._body = self._compute()
                self._stamp = now
            return self._body

    def _compute(self) -> dict:
        providers: dict = {}
        emb = self.config.embedding_spec()
        providers["embedding"] = _probe(emb.endpoint) if emb.endpoint else "local"
        llm_endpoint = self.config.llm.get("endpoint")
        providers["llm"] = _probe(llm_endpoint) if llm_endpoint else "local"
        idx = self.config.index_spec()
        providers["vector_store"] = _probe(idx.endpoint) if idx.endpoint else "local"
        for kind, agent_cfg in sorted(self.config.agent_configs().items()):
            providers[f"agent_{kind}"] = _probe(agent_cfg.base_url)
        return {
            "status": "ok",
            "index_count": self.engine.index.count(),
            "providers": providers,
        }


# -- document upload parsing ------------------------------------------------------

_FORMAT_BY_SUFFIX = {".md": "markdown", ".markdown": "markdown", ".txt": "plain"}
_FORMAT_ALIASES = {"text": "plain", "txt": "plain", "md": "markdown"}


def _canonical_format(fmt: str) -> str:
    return _FORMAT_ALIASES.get(fmt, fmt)


def _coerce_keywords(value) -> tuple:
    if value is None or value == "":
        return ()
    if isinstance(value, str):
        try:
            parsed = json.loads(value)
        except ValueError:
            parsed = [part.strip() for part in value.split(",") if part.strip()]
        value = parsed
    if not isinstance(value, (list, tuple)):
        raise ApiError(400, "bad_request", "keywords must be a list")
    return tuple(str(item) for item in value)


async def _document_upload(request: Request) -> tuple[bytes, str, dict]:
    """Read either JSON {text, format, metadata} or a multipart form."""
    content_type = request.headers.get("content-type", "")
    if content_type.startswith("multipart/form-data"):
        form = await request.form()
        upload = form.get("file")
        if upload is None or isinstance(upload, str):
            raise ApiError(400, "bad_request", "multipart upload needs a file part")
        raw = await upload.read()
        fmt = form.get("format")
        if not fmt:
            suffix = Path(upload.filename or "").suffix.lower()
            fmt = _FORMAT_BY_SUFFIX.get(suffix, "markdown")
        meta = {
            key: form.get(key)
            for key in ("title", "author", "doc_type", "version",
                        "page_count", "summary", "keywords")
            if form.get(key) is not None
        }
        if "title" not in meta and upload.filename:
            meta["title"] = Path(upload.filename).stem
        return raw, _canonical_format(str(fmt)), meta

    try:
        body = json.loads(await request.body())
    except ValueError as exc:
        raise ApiError(400, "bad_request", f"body is not valid JSON: {exc}")
    if not isinstance(body, dict) or not isinstance(body.get("text"), str):
        raise ApiError(400, "bad_request", 'JSON body needs a string "text" field')
    meta = body.get("metadata", {})
    if not isinstance(meta, dict):
        raise ApiError(400, "bad_request", "metadata must be an object")
    return (
        body["text"].encode("utf-8"),
        _canonical_format(str(body.get("format", "markdown"))),
        dict(meta),
    )


# -- app factory ----------------------------------------------------------------


def create_app(
    config: ServiceConfig,
    *,
    engine: ChatEngine | None = None,
    llm=None,
) -> FastAPI:
    """Build the FastAPI app; pass a prebuilt engine to share state in tests."""
    if engine is None:
        engine = build_engine(config, llm=llm)
        engine.load_state()
    key_book = KeyBook(config.keys_file)
    health = _HealthCache(config, engine)

    app = FastAPI(title="fieldrag", docs_url=None, redoc_url=None)
    app.state.engine = engine
    app.state.config = config

    if config.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(config.cors_origins),
            allow_methods=["*"],
            allow_headers=["*", "X-API-Key"],
        )

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return exc.response()

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return ApiError(422, "validation", str(exc.errors())).response()

    @app.exception_handler(FieldragError)
    async def _fieldrag_error(request: Request, exc: FieldragError):
        return ApiError(500, "internal", str(exc)).response()

    @app.middleware("http")
    async def _log_requests(request: Request, call_next):
        started = time.monotonic()
        try:
            response = await call_next(request)
            status = response.status_code
        except Exception:
            self_status = 500
            line = {
                "ts": datetime.now(timezone.utc).isoformat(),
                "method": request.method,
                "path": request.url.path,
                "status": self_status,
                "latency_ms": round((time.monotonic() - started) * 1000.0, 2),
                "key": getattr(request.state, "key_label", None),
            }
            print(json.dumps(line), flush=True)
            raise
        line = {
            "ts": datetime.now(timezone.utc).isoformat(),
            "method": request.method,
            "path": request.url.path,
            "status": status,
            "latency_ms": round((time.monotonic() - started) * 1000.0, 2),
            "key": getattr(request.state, "key_label", None),
        }
        print(json.dumps(line), flush=True)
        return response

    def require_key(request: Request) -> str:
        raw = request.headers.get("x-api-key")
        if not raw:
            raise ApiError(401, "unauthorized", "missing X-API-Key header")
        label = key_book.label_for(raw)
        if label is None:
            raise ApiError(401, "unauthorized", "unknown or disabled API key")
        request.state.key_label = label
        return label

    # -- documents ---------------------------------------------------------------

    @app.post("/v1/documents")
    async def post_document(request: Request):
        require_key(request)
        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > MAX_DOCUMENT_BYTES:
            raise ApiError(413, "oversize", "document exceeds 20 MiB")
        raw, fmt, meta = await _document_upload(request)
        if len(raw) > MAX_DOCUMENT_BYTES:
            raise ApiError(413, "oversize", "document exceeds 20 MiB")
        title = str(meta.get("title", "")).strip()
        if not title:
            raise ApiError(400, "bad_request", "metadata.title is required")
        try:
            page_count = int(meta.get("page_count", 0) or 0)
        except (TypeError, ValueError):
            raise ApiError(400, "bad_request", "page_count must be an integer")
        try:
            # sync engine work leaves the event loop free for other requests
            result = await run_in_threadpool(
                lambda: engine.ingest_document(
                    raw,
                    title=title,
                    author=str(meta.get("author", "") or ""),
                    doc_type=str(meta.get("doc_type", "") or ""),
                    version=str(meta.get("version", "1") or "1"),
                    format=fmt,
                    page_count=page_count,
                    summary=meta.get("summary") or None,
                    keywords=_coerce_keywords(meta.get("keywords")),
                )
            )
        except ProviderUnavailable as exc:
            raise ApiError(502, "embedding_unavailable", str(exc))
        except (InvalidEncoding, EmptyDocument, OversizeSection, ValueError) as exc:
            raise ApiError(400, "bad_request", str(exc))
        return {
            "doc_id": result.doc_id,
            "chunk_count": result.chunk_count,
            "tool_id": result.tool_id,
        }

    # -- sessions ----------------------------------------------------------------

    @app.post("/v1/sessions")
    async def post_session(request: Request):
        require_key(request)
        system_prompt = None
        body_bytes = await request.body()
        if body_bytes:
            try:
                body = json.loads(body_bytes)
            except ValueError as exc:
                raise ApiError(400, "bad_request", f"invalid JSON: {exc}")
            if not isinstance(body, dict):
                raise ApiError(400, "bad_request", "body must be an object")
            system_prompt = body.get("system_prompt")
            if system_prompt is not None and not isinstance(system_prompt, str):
                raise ApiError(400, "bad_request", "system_prompt must be a string")
        session = await run_in_threadpool(engine.create_session, system_prompt)
        return {"session_id": session.session_id}

    @app.get("/v1/sessions/{session_id}")
    async def get_session(session_id: str, request: Request):
        require_key(request)
        try:
            session = await run_in_threadpool(engine.get_session, session_id)
        except UnknownSession as exc:
            raise ApiError(404, "unknown_session", str(exc))
        return {
            "session_id": session.session_id,
            "system_prompt": session.system_prompt,
            "created_at": _iso(session.created_at),
            "last_active": _iso(session.last_active),
            "turns": [_turn_record(turn) for turn in session.turns],
        }

    @app.delete("/v1/sessions/{session_id}", status_code=204)
    async def delete_session(session_id: str, request: Request):
        require_key(request)
        try:
            await run_in_threadpool(engine.delete_session, session_id)
        except UnknownSession:
            pass  # idempotent: a session that cannot exist is already gone
        return Response(status_code=204)

    @app.post("/v1/sessions/{session_id}/query")
    async def post_query(session_id: str, request: Request):
        require_key(request)
        try:
            body = json.loads(await request.body())
        except ValueError as exc:
            raise ApiError(400, "bad_request", f"invalid JSON: {exc}")
        if not isinstance(body, dict):
            raise ApiError(400, "bad_request", "body must be an object")
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ApiError(422, "validation", "text must be a non-empty string")
        entities = body.get("entities")
        if entities is not None and not isinstance(entities, dict):
            raise ApiError(422, "validation", "entities must be an object")
        started = time.monotonic()
        try:
            turn = await run_in_threadpool(
                engine.answer, session_id, text, entities=entities
            )
        except UnknownSession as exc:
            raise ApiError(404, "unknown_session", str(exc))
        except ProviderUnavailable as exc:
            raise ApiError(503, "llm_unavailable", str(exc))
        latency_ms = round((time.monotonic() - started) * 1000.0, 2)
        citations = []
        for doc_id, chunk_id in turn.citations:
            entry = engine.get_document(doc_id) or {}
            citations.append(
                {
                    "doc_id": doc_id,
                    "chunk_id": chunk_id,
                    "title": entry.get("title", ""),
                }
            )
        tools_used, agents_used = _split_trace(turn.tool_trace)
        return {
            "answer": turn.text,
            "citations": citations,
            "agents_used": agents_used,
            "tools_used": tools_used,
            "latency_ms": latency_ms,
        }

    # -- tools / health ------------------------------------------------------------

    @app.get("/v1/tools")
    async def get_tools(request: Request):
        require_key(request)
        tools = []
        for tool in engine.registry.list_tools():
            tools.append(
                {
                    "tool_id": tool.tool_id,
                    "doc_id": tool.doc_id,
                    "title": tool.title,
                    "version": tool.version,
                    "summary": tool.summary,
                    "keywords": list(tool.keywords),
                    "created_at": _iso(tool.created_at),
                }
            )
        return {"tools": tools}

    @app.get("/v1/health")
    async def get_health():
        return await run_in_threadpool(health.body)

    return app


# -- embedded server (tests, chat REPL) -------------------------------------------


class ServiceHandle:
    """Run the app in a background uvicorn thread; port 0 picks a free port."""

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = 0):
        import uvicorn

        self._config = uvicorn.Config(
            app, host=host, port=port, log_level="warning", access_log=False
        )
        self._server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self.host = host
        self.port = port

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self, timeout_s: float = 10.0) -> "ServiceHandle":
        self._thread.start()
        deadline = time.monotonic() + timeout_s
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("service failed to start in time")
            time.sleep(0.01)
        sockets = self._server.servers[0].sockets
        self.port = sockets[0].getsockname()[1]
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10.0)
