"""Reference HTTP server for the vector store wire protocol.

Wraps a local VectorIndex behind the same endpoints the remote backend
speaks: POST /upsert, POST /query, DELETE /docs/{doc_id}, GET /health.
Used in tests to exercise the remote client and handy as a single-host
store for small deployments. Not a public-internet service: no auth.
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .errors import DimensionMismatch, DuplicateChunk, InvalidVector
from .index import IndexBackendSpec, MetadataFilter, VectorIndex

_DOC_PATH = re.compile(r"^/docs/([A-Za-z0-9_.-]+)$")

_ERROR_NAMES = {
    DimensionMismatch: "dimension_mismatch",
    InvalidVector: "invalid_vector",
    DuplicateChunk: "duplicate_chunk",
}


class _Handler(BaseHTTPRequestHandler):
    index: VectorIndex  # assigned by serve()

    def log_message(self, *args) -> None:  # silence default stderr chatter
        pass

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, exc: Exception) -> None:
        name = _ERROR_NAMES.get(type(exc), "bad_request")
        self._send(400, {"error": name, "detail": str(exc)})

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        return json.loads(self.rfile.read(length) or b"{}")

    def do_GET(self) -> None:
        if self.path == "/health":
            self._send(200, {"status": "ok", "count": self.index.count()})
        else:
            self._send(404, {"error": "not_found", "detail": self.path})

    def do_POST(self) -> None:
        try:
            body = self._read_json()
        except (ValueError, json.JSONDecodeError) as exc:
            self._send(400, {"error": "bad_request", "detail": str(exc)})
            return
        if self.path == "/upsert":
            self._handle_upsert(body)
        elif self.path == "/query":
            self._handle_query(body)
        else:
            self._send(404, {"error": "not_found", "detail": self.path})

    def do_DELETE(self) -> None:
        match = _DOC_PATH.match(self.path)
        if not match:
            self._send(404, {"error": "not_found", "detail": self.path})
            return
        removed = self.index.delete_document(match.group(1))
        self._send(200, {"removed": removed})

    def _handle_upsert(self, body: dict) -> None:
        item_ids = []
        try:
            for item in body.get("items", []):
                item_ids.append(
                    self.index.upsert(
                        item["doc_id"],
                        item["chunk_id"],
                        np.asarray(item["vector"], dtype=np.float64),
                        item.get("metadata") or {},
                    )
                )
        except (DimensionMismatch, InvalidVector, DuplicateChunk) as exc:
            self._send_error(exc)
            return
        except (KeyError, TypeError, ValueError) as exc:
            self._send(400, {"error": "bad_request", "detail": str(exc)})
            return
        self._send(200, {"item_ids": item_ids})

    def _handle_query(self, body: dict) -> None:
        try:
            vector = np.asarray(body["vector"], dtype=np.float64)
            k = int(body.get("k", 5))
            mfilter = MetadataFilter.from_json(body.get("filter"))
            hits = self.index.top_k(vector, k, mfilter)
        except (DimensionMismatch, InvalidVector) as exc:
            self._send_error(exc)
            return
        except (KeyError, TypeError, ValueError) as exc:
            self._send(400, {"error": "bad_request", "detail": str(exc)})
            return
        self._send(
            200,
            {
                "hits": [
                    {
                        "item_id": h.item_id,
                        "score": h.score,
                        "doc_id": h.doc_id,
                        "chunk_id": h.chunk_id,
                        "metadata": h.metadata,
                    }
                    for h in hits
                ]
            },
        )


class IndexStoreServer:
    """Threaded store server bound to 127.0.0.1; port 0 picks a free port."""

    def __init__(
        self, spec: IndexBackendSpec | None = None, port: int = 0
    ) -> None:
        self.index = VectorIndex(spec or IndexBackendSpec())
        handler = type("BoundHandler", (_Handler,), {"index": self.index})
        self._httpd = ThreadingHTTPServer(("127.0.0.1", port), handler)
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "IndexStoreServer":
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
