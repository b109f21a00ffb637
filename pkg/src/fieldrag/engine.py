"""Engine composition root: wires ingestion, embeddings, the vector
index, the tool registry, sessions, and the router into one object the
service and CLI share.

Ingestion is idempotent per (title, version): the derived doc_id is
stable, so re-ingesting replaces the previous chunks and tool spec
instead of accumulating duplicates. The document catalog (title,
version, summary, keywords, chunk count) persists next to the index
snapshot so a restarted process can serve what an earlier one ingested.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

from .embedding import (
    DEFAULT_TEST_DIM,
    TEST_PROVIDER_ID,
    EmbeddingCache,
    EmbeddingProviderSpec,
    embed_batch,
)
from .errors import SnapshotError
from .index import IndexBackendSpec, VectorIndex
from .ingest import ChunkerConfig, Document, chunk_document, parse_document
from .llm import EchoLLM
from .router import ChatRouter, RouterConfig, ToolRegistry
from .sessions import SessionStore

CATALOG_FILE = "catalog.json"
INDEX_FILE = "index.snap"


@dataclass
class IngestResult:
    doc_id: str
    tool_id: str
    chunk_count: int
    replaced: bool


def default_summary(body: str, limit: int = 400) -> str:
    """First words of the body, capped, as the tool summary fallback."""
    words = body.split()
    out = ""
    for word in words:
        if len(out) + len(word) + 1 > limit:
            break
        out = f"{out} {word}" if out else word
    return out or body[:limit]


class ChatEngine:
    def __init__(
        self,
        *,
        data_dir: str,
        embedding_spec: EmbeddingProviderSpec | None = None,
        index: VectorIndex | None = None,
        llm=None,
        agent_configs=None,
        router_config: RouterConfig | None = None,
        chunker_config: ChunkerConfig | None = None,
        use_embedding_cache: bool = False,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.embedding_spec = embedding_spec or EmbeddingProviderSpec(
            provider_id=TEST_PROVIDER_ID, dim=DEFAULT_TEST_DIM
        )
        self.index = index or VectorIndex(
            IndexBackendSpec(dim=self.embedding_spec.dim)
        )
        self.cache = (
            EmbeddingCache(str(self.data_dir / "emb_cache"))
            if use_embedding_cache
            else None
        )
        self.chunker_config = chunker_config or ChunkerConfig()
        self.sessions = SessionStore(str(self.data_dir))
        self.registry = ToolRegistry(self.index)
        self.llm = llm or EchoLLM()
        self.router = ChatRouter(
            index=self.index,
            registry=self.registry,
            sessions=self.sessions,
            llm=self.llm,
            embed_query=self.embed_query,
            agent_configs=agent_configs,
            config=router_config,
        )
        self._catalog: dict[str, dict] = {}
        self._ingest_lock = threading.Lock()

    # -- embeddings -----------------------------------------------------------

    def embed_query(self, text: str):
        return embed_batch([text], self.embedding_spec, cache=self.cache)[0].values

    # -- documents ------------------------------------------------------------

    def ingest_document(
        self,
        raw: bytes,
        *,
        title: str,
        author: str = "",
        doc_type: str = "",
        version: str = "1",
        format: str = "markdown",
        page_count: int = 0,
        summary: str | None = None,
        keywords=(),
        chunker_config: ChunkerConfig | None = None,
    ) -> IngestResult:
        doc = parse_document(
            raw,
            format=format,
            title=title,
            author=author,
            doc_type=doc_type,
            version=version,
            page_count=page_count,
        )
        chunks = chunk_document(doc, chunker_config or self.chunker_config)
        vectors = embed_batch(
            [c.text for c in chunks], self.embedding_spec, cache=self.cache
        )
        with self._ingest_lock:
            replaced = self.index.delete_document(doc.doc_id) > 0
            for chunk, vec in zip(chunks, vectors):
                self.index.add_unique(
                    doc.doc_id,
                    chunk.chunk_id,
                    vec.values,
                    {
                        "text": chunk.text,
                        "title": doc.title,
                        "ordinal": chunk.ordinal,
                        "heading_path": list(chunk.heading_path),
                        "doc_type": doc.doc_type,
                        "version": doc.version,
                    },
                )
            tool_summary = (summary or "").strip() or default_summary(doc.body)
            tool = self.registry.register_tool(
                doc, tool_summary, keywords=keywords
            )
            self._catalog[doc.doc_id] = {
                "doc_id": doc.doc_id,
                "title": doc.title,
                "author": doc.author,
                "doc_type": doc.doc_type,
                "version": doc.version,
                "page_count": doc.page_count,
                "summary": tool_summary,
                "keywords": list(tool.keywords),
                "chunk_count": len(chunks),
                "tool_id": tool.tool_id,
            }
        return IngestResult(
            doc_id=doc.doc_id,
            tool_id=tool.tool_id,
            chunk_count=len(chunks),
            replaced=replaced,
        )

    def delete_document(self, doc_id: str) -> int:
        with self._ingest_lock:
            removed = self.index.delete_document(doc_id)
            self.registry.unregister_document(doc_id)
            self._catalog.pop(doc_id, None)
        return removed

    def list_documents(self) -> list:
        return sorted(self._catalog.values(), key=lambda d: d["doc_id"])

    def get_document(self, doc_id: str):
        return self._catalog.get(doc_id)

    # -- sessions / answers -----------------------------------------------------

    def create_session(self, system_prompt: str | None = None):
        return self.sessions.create_session(system_prompt)

    def get_session(self, session_id: str):
        return self.sessions.get_session(session_id)

    def delete_session(self, session_id: str) -> None:
        self.sessions.delete_session(session_id)

    def answer(self, session_id: str, query: str, *, entities=None):
        return self.router.answer(session_id, query, entities=entities)

    # -- persistence ------------------------------------------------------------

    def save_state(self) -> None:
        """Write the index snapshot and document catalog under data_dir."""
        self.index.save(str(self.data_dir / INDEX_FILE))
        payload = json.dumps(self._catalog, sort_keys=True, indent=1)
        (self.data_dir / CATALOG_FILE).write_text(payload, encoding="utf-8")

    def load_state(self) -> bool:
        """Restore index and catalog saved by save_state; False if absent."""
        index_path = self.data_dir / INDEX_FILE
        catalog_path = self.data_dir / CATALOG_FILE
        if not index_path.exists():
            return False
        self.index = VectorIndex.load(str(index_path))
        if self.index.spec.dim != self.embedding_spec.dim:
            raise SnapshotError(
                "snapshot dimension does not match the embedding provider"
            )
        self.registry = ToolRegistry(self.index)
        self.router.index = self.index
        self.router.registry = self.registry
        if catalog_path.exists():
            try:
                self._catalog = json.loads(catalog_path.read_text("utf-8"))
            except ValueError as exc:
                raise SnapshotError(f"catalog file corrupt: {exc}") from exc
            for entry in self._catalog.values():
                doc = Document(
                    doc_id=entry["doc_id"],
                    title=entry["title"],
                    author=entry.get("author", ""),
                    doc_type=entry.get("doc_type", ""),
                    version=entry.get("version", "1"),
                    body="",
                    page_count=entry.get("page_count", 0),
                )
                self.registry.register_tool(
                    doc, entry["summary"], keywords=entry.get("keywords", ())
                )
        return True
