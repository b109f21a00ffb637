"""HTTP service tests: auth, document lifecycle, sessions, query wiring,
health caching, request logs, and error-body shape."""

from __future__ import annotations

import hashlib
import http.server
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from fieldrag.config import ServiceConfig
from fieldrag.llm import RemoteLLM
from fieldrag.service import KeyBook, ServiceHandle, create_app, generate_key

ROBOT_DOC = """# Arm maintenance

## Torque settings

Tighten the arm joint to 42 Nm. Never exceed the torque limit.

## Gripper care

Clean the gripper pads weekly with isopropyl alcohol.
"""


def make_config(tmp_path, **over) -> ServiceConfig:
    defaults = dict(
        data_dir=str(tmp_path / "data"),
        keys_file=str(tmp_path / "keys.json"),
        routing_policy="lexical",
    )
    defaults.update(over)
    return ServiceConfig(**defaults)


@pytest.fixture()
def service(tmp_path):
    config = make_config(tmp_path)
    raw_key = generate_key(config.keys_file, "tests")
    app = create_app(config)
    with TestClient(app, raise_server_exceptions=False) as client:
        client.headers["X-API-Key"] = raw_key
        yield client, config, raw_key


def ingest_robot(client, title="Robot arm manual", version="1"):
    resp = client.post(
        "/v1/documents",
        json={
            "text": ROBOT_DOC,
            "format": "markdown",
            "metadata": {
                "title": title,
                "version": version,
                "keywords": ["torque", "gripper"],
            },
        },
    )
    assert resp.status_code == 200, resp.text
    return resp.json()


def tree_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class TestAuth:
    def test_missing_key_rejected(self, service):
        client, _, _ = service
        resp = client.post("/v1/sessions", headers={"X-API-Key": ""})
        assert resp.status_code == 401
        assert resp.json()["error"] == "unauthorized"

    def test_wrong_key_rejected(self, service):
        client, _, _ = service
        resp = client.get("/v1/tools", headers={"X-API-Key": "nope"})
        assert resp.status_code == 401

    def test_failed_auth_has_no_side_effects(self, service):
        client, config, _ = service
        ingest_robot(client)
        before = tree_bytes(Path(config.data_dir))
        resp = client.post(
            "/v1/documents",
            headers={"X-API-Key": "wrong"},
            json={"text": "# X\n\nBody.", "metadata": {"title": "X"}},
        )
        assert resp.status_code == 401
        assert tree_bytes(Path(config.data_dir)) == before

    def test_keys_file_reload_on_change(self, service):
        client, config, raw_key = service
        assert client.get("/v1/tools").status_code == 200
        records = json.loads(Path(config.keys_file).read_text())
        records[0]["enabled"] = False
        Path(config.keys_file).write_text(json.dumps(records))
        assert client.get("/v1/tools").status_code == 401
        records[0]["enabled"] = True
        Path(config.keys_file).write_text(json.dumps(records))
        assert client.get("/v1/tools").status_code == 200

    def test_second_key_works(self, service):
        client, config, _ = service
        other = generate_key(config.keys_file, "second")
        resp = client.get("/v1/tools", headers={"X-API-Key": other})
        assert resp.status_code == 200

    def test_health_needs_no_key(self, service):
        client, _, _ = service
        resp = client.get("/v1/health", headers={"X-API-Key": "wrong"})
        assert resp.status_code == 200

    def test_keys_file_stores_hash_not_raw(self, service):
        _, config, raw_key = service
        stored = Path(config.keys_file).read_text()
        assert raw_key not in stored
        digest = hashlib.sha256(raw_key.encode()).hexdigest()
        assert digest in stored

    def test_key_book_missing_file(self, tmp_path):
        book = KeyBook(str(tmp_path / "absent.json"))
        assert book.label_for("anything") is None


class TestDocuments:
    def test_ingest_roundtrip(self, service):
        client, _, _ = service
        body = ingest_robot(client)
        assert body["chunk_count"] >= 2
        assert body["tool_id"] == f"tool-{body['doc_id']}"
        tools = client.get("/v1/tools").json()["tools"]
        assert [t["doc_id"] for t in tools] == [body["doc_id"]]
        # wire timestamps must parse as timezone-aware ISO-8601
        parsed = datetime.fromisoformat(tools[0]["created_at"])
        assert parsed.tzinfo is not None

    def test_reingest_same_title_version_is_idempotent(self, service):
        client, _, _ = service
        first = ingest_robot(client)
        second = ingest_robot(client)
        assert second["doc_id"] == first["doc_id"]
        assert second["chunk_count"] == first["chunk_count"]
        tools = client.get("/v1/tools").json()["tools"]
        assert len(tools) == 1

    def test_new_version_is_a_new_document(self, service):
        client, _, _ = service
        first = ingest_robot(client, version="1")
        second = ingest_robot(client, version="2")
        assert second["doc_id"] != first["doc_id"]
        assert len(client.get("/v1/tools").json()["tools"]) == 2

    def test_multipart_upload(self, service):
        client, _, _ = service
        resp = client.post(
            "/v1/documents",
            files={"file": ("pump-guide.md", ROBOT_DOC.encode(), "text/markdown")},
            data={"title": "Pump guide", "keywords": "pump, seal"},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["chunk_count"] >= 2

    def test_multipart_title_defaults_to_filename(self, service):
        client, _, _ = service
        resp = client.post(
            "/v1/documents",
            files={"file": ("valve-notes.md", b"# Valve\n\nSeat the valve.", "text/markdown")},
        )
        assert resp.status_code == 200
        tools = client.get("/v1/tools").json()["tools"]
        assert any(t["title"] == "valve-notes" for t in tools)

    def test_missing_title_rejected(self, service):
        client, _, _ = service
        resp = client.post("/v1/documents", json={"text": "# A\n\nBody."})
        assert resp.status_code == 400
        assert resp.json()["error"] == "bad_request"

    def test_malformed_json_rejected(self, service):
        client, _, _ = service
        resp = client.post(
            "/v1/documents",
            content=b"{not json",
            headers={"Content-Type": "application/json"},
        )
        assert resp.status_code == 400

    def test_empty_text_rejected(self, service):
        client, _, _ = service
        resp = client.post(
            "/v1/documents",
            json={"text": "   ", "metadata": {"title": "Blank"}},
        )
        assert resp.status_code == 400

    def test_oversize_rejected(self, service):
        client, _, _ = service
        huge = "a" * (20 * 1024 * 1024 + 1)
        resp = client.post(
            "/v1/documents",
            json={"text": huge, "metadata": {"title": "Huge"}},
        )
        assert resp.status_code == 413
        assert resp.json()["error"] == "oversize"

    def test_embedding_provider_down_maps_to_502(self, tmp_path):
        config = make_config(
            tmp_path,
            embedding={
                "provider_id": "remote:embed",
                "dim": 64,
                "endpoint": "http://127.0.0.1:9",
            },
        )
        key = generate_key(config.keys_file, "t")
        app = create_app(config)
        with TestClient(app, raise_server_exceptions=False) as client:
            resp = client.post(
                "/v1/documents",
                headers={"X-API-Key": key},
                json={"text": "# D\n\nBody.", "metadata": {"title": "D"}},
            )
        assert resp.status_code == 502
        assert resp.json()["error"] == "embedding_unavailable"


class TestSessions:
    def test_lifecycle(self, service):
        client, _, _ = service
        sid = client.post("/v1/sessions").json()["session_id"]
        got = client.get(f"/v1/sessions/{sid}").json()
        assert got["session_id"] == sid
        assert got["turns"] == []
        assert datetime.fromisoformat(got["created_at"]).tzinfo is not None
        assert client.delete(f"/v1/sessions/{sid}").status_code == 204
        assert client.delete(f"/v1/sessions/{sid}").status_code == 204
        assert client.get(f"/v1/sessions/{sid}").status_code == 404

    def test_unknown_session_404(self, service):
        client, _, _ = service
        resp = client.get("/v1/sessions/doesnotexist00aa")
        assert resp.status_code == 404
        assert resp.json()["error"] == "unknown_session"

    def test_custom_system_prompt(self, service):
        client, _, _ = service
        sid = client.post(
            "/v1/sessions", json={"system_prompt": "Answer in French."}
        ).json()["session_id"]
        got = client.get(f"/v1/sessions/{sid}").json()
        assert got["system_prompt"] == "Answer in French."


class TestQuery:
    def test_grounded_answer_with_citations(self, service):
        client, _, _ = service
        doc = ingest_robot(client)
        sid = client.post("/v1/sessions").json()["session_id"]
        resp = client.post(
            f"/v1/sessions/{sid}/query",
            json={"text": "What torque for the arm joint?"},
        )
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert "42 Nm" in body["answer"]
        assert body["citations"], body
        top = body["citations"][0]
        assert top["doc_id"] == doc["doc_id"]
        assert top["title"] == "Robot arm manual"
        assert top["chunk_id"]
        assert body["tools_used"] == [doc["tool_id"]]
        assert body["agents_used"] == []
        assert body["latency_ms"] >= 0

    def test_history_accumulates(self, service):
        client, _, _ = service
        ingest_robot(client)
        sid = client.post("/v1/sessions").json()["session_id"]
        for text in ("torque for the arm?", "gripper cleaning?"):
            assert (
                client.post(f"/v1/sessions/{sid}/query", json={"text": text})
                .status_code
                == 200
            )
        turns = client.get(f"/v1/sessions/{sid}").json()["turns"]
        assert [t["role"] for t in turns] == ["user", "assistant"] * 2
        assert turns[0]["text"] == "torque for the arm?"

    def test_empty_text_422(self, service):
        client, _, _ = service
        sid = client.post("/v1/sessions").json()["session_id"]
        for payload in ({"text": ""}, {"text": "   "}, {}):
            resp = client.post(f"/v1/sessions/{sid}/query", json=payload)
            assert resp.status_code == 422
            assert resp.json()["error"] == "validation"

    def test_unknown_session_404(self, service):
        client, _, _ = service
        resp = client.post(
            "/v1/sessions/doesnotexist00aa/query", json={"text": "hi"}
        )
        assert resp.status_code == 404

    def test_refusal_when_nothing_matches(self, service):
        client, _, _ = service
        ingest_robot(client)
        sid = client.post("/v1/sessions").json()["session_id"]
        resp = client.post(
            f"/v1/sessions/{sid}/query",
            json={"text": "zzqx vwpl unrelatedese"},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["citations"] == []
        assert body["tools_used"] == []
        assert "cannot answer" in body["answer"]

    def test_llm_down_maps_to_503(self, tmp_path):
        config = make_config(tmp_path)
        key = generate_key(config.keys_file, "t")
        app = create_app(
            config, llm=RemoteLLM("http://127.0.0.1:9", retries=0)
        )
        with TestClient(app, raise_server_exceptions=False) as client:
            client.headers["X-API-Key"] = key
            ingest_robot(client)
            sid = client.post("/v1/sessions").json()["session_id"]
            resp = client.post(
                f"/v1/sessions/{sid}/query",
                json={"text": "torque for the arm joint?"},
            )
        assert resp.status_code == 503
        assert resp.json()["error"] == "llm_unavailable"


class _CountingProbeTarget(http.server.ThreadingHTTPServer):
    hits = 0


class _CountingHandler(http.server.BaseHTTPRequestHandler):
    def do_GET(self):
        type(self.server).hits += 1
        self.send_response(404)
        self.end_headers()

    def log_message(self, *args):
        pass


class TestHealth:
    def test_health_body_local_providers(self, service):
        client, _, _ = service
        body = client.get("/v1/health").json()
        assert body["status"] == "ok"
        assert body["index_count"] == 0
        assert body["providers"]["embedding"] == "local"
        assert body["providers"]["llm"] == "local"
        assert body["providers"]["vector_store"] == "local"

    def test_probe_results_are_cached(self, tmp_path):
        class Target(_CountingProbeTarget):
            hits = 0

        server = Target(("127.0.0.1", 0), _CountingHandler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            endpoint = f"http://127.0.0.1:{server.server_address[1]}"
            config = make_config(
                tmp_path, agents={"pdm": {"base_url": endpoint}}
            )
            app = create_app(config)
            with TestClient(app) as client:
                first = client.get("/v1/health").json()
                second = client.get("/v1/health").json()
            assert first["providers"]["agent_pdm"] == "ok"
            assert second == first
            assert Target.hits == 1
        finally:
            server.shutdown()
            thread.join()

    def test_unreachable_agent_reported(self, tmp_path):
        config = make_config(
            tmp_path, agents={"pdm": {"base_url": "http://127.0.0.1:9"}}
        )
        app = create_app(config)
        with TestClient(app) as client:
            body = client.get("/v1/health").json()
        assert body["providers"]["agent_pdm"] == "unreachable"


class TestRequestLogs:
    def test_json_line_per_request(self, service, capsys):
        client, _, raw_key = service
        capsys.readouterr()
        client.get("/v1/tools")
        out = capsys.readouterr().out
        lines = [json.loads(l) for l in out.strip().splitlines() if l]
        record = next(r for r in lines if r["path"] == "/v1/tools")
        assert record["method"] == "GET"
        assert record["status"] == 200
        assert record["latency_ms"] >= 0
        assert record["key"] == "tests"
        assert raw_key not in out

    def test_rejected_request_logged_without_label(self, service, capsys):
        client, _, _ = service
        capsys.readouterr()
        client.get("/v1/tools", headers={"X-API-Key": "bad"})
        out = capsys.readouterr().out
        record = json.loads(out.strip().splitlines()[-1])
        assert record["status"] == 401
        assert record["key"] is None
        assert "bad" != record["key"]


class TestCors:
    def test_preflight_honors_allowlist(self, tmp_path):
        config = make_config(tmp_path, cors_origins=["http://app.example"])
        generate_key(config.keys_file, "t")
        app = create_app(config)
        with TestClient(app) as client:
            resp = client.options(
                "/v1/tools",
                headers={
                    "Origin": "http://app.example",
                    "Access-Control-Request-Method": "GET",
                },
            )
            assert resp.headers["access-control-allow-origin"] == "http://app.example"
            denied = client.options(
                "/v1/tools",
                headers={
                    "Origin": "http://evil.example",
                    "Access-Control-Request-Method": "GET",
                },
            )
            assert "access-control-allow-origin" not in denied.headers


class TestConcurrentSessions:
    def test_parallel_queries_do_not_interleave(self, service):
        client, _, _ = service
        ingest_robot(client)
        sids = [client.post("/v1/sessions").json()["session_id"] for _ in range(5)]

        def drive(sid):
            for i in range(4):
                resp = client.post(
                    f"/v1/sessions/{sid}/query",
                    json={"text": f"torque round {i} for session {sid}?"},
                )
                assert resp.status_code == 200

        with ThreadPoolExecutor(max_workers=5) as pool:
            list(pool.map(drive, sids))

        for sid in sids:
            turns = client.get(f"/v1/sessions/{sid}").json()["turns"]
            assert [t["role"] for t in turns] == ["user", "assistant"] * 4
            for user_turn in turns[0::2]:
                assert sid in user_turn["text"]


class TestServiceHandle:
    def test_real_socket_roundtrip(self, tmp_path):
        import requests

        config = make_config(tmp_path)
        key = generate_key(config.keys_file, "t")
        handle = ServiceHandle(create_app(config)).start()
        try:
            health = requests.get(f"{handle.base_url}/v1/health", timeout=5)
            assert health.status_code == 200
            created = requests.post(
                f"{handle.base_url}/v1/sessions",
                headers={"X-API-Key": key},
                timeout=5,
            )
            assert created.status_code == 200
            assert "session_id" in created.json()
        finally:
            handle.stop()
