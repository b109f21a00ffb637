"""Vector index over embedded chunks.

One facade, three backends:

- ``exact``: brute-force scan over a contiguous matrix. Ground truth.
- ``hnsw``: approximate graph search (see hnsw.py) for large corpora.
- ``remote``: thin HTTP client speaking the store wire protocol, for a
  hosted index. The other two run in-process.

Items are (vector, metadata) pairs keyed by a monotonically increasing
item_id that is never reused, so snapshots and remote stores can be
reconciled by id. Metadata filters are exact string-equality conjunctions
applied before ranking: a filtered query ranks only matching items, it never
truncates an unfiltered result list. Concurrent use is safe: reads share,
writes exclude.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
import threading
from dataclasses import dataclass, field

import numpy as np
import requests

from .embedding import EmbeddingVector
from .errors import (
    DimensionMismatch,
    DuplicateChunk,
    InvalidVector,
    ProviderUnavailable,
    SnapshotError,
)
from .hnsw import DEFAULT_EF_CONSTRUCTION, DEFAULT_EF_SEARCH, DEFAULT_M, HnswGraph

SNAPSHOT_MAGIC = b"FRIDX1"


@dataclass(frozen=True)
class IndexBackendSpec:
    """Construction-time choice of backend and its knobs."""

    kind: str = "exact"  # exact | hnsw | remote
    dim: int = 256
    m: int = DEFAULT_M
    ef_construction: int = DEFAULT_EF_CONSTRUCTION
    ef_search: int = DEFAULT_EF_SEARCH
    seed: int = 2025
    endpoint: str | None = None  # required for kind="remote"

    def __post_init__(self) -> None:
        if self.kind not in ("exact", "hnsw", "remote"):
            raise ValueError(f"unknown index kind: {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote index requires an endpoint")


@dataclass(frozen=True)
class Hit:
    """One ranked retrieval result."""

    item_id: int
    score: float
    doc_id: str
    chunk_id: str
    metadata: dict = field(compare=False, default_factory=dict)


class MetadataFilter:
    """Conjunction of exact string-equality constraints on item metadata."""

    def __init__(self, equals: dict[str, str] | None = None) -> None:
        self.equals = dict(equals or {})

    def is_empty(self) -> bool:
        return not self.equals

    def matches(self, metadata: dict) -> bool:
        return all(metadata.get(k) == v for k, v in self.equals.items())

    def to_json(self) -> dict:
        return {"equals": dict(self.equals)}

    @classmethod
    def from_json(cls, payload: dict | None) -> "MetadataFilter":
        if not payload:
            return cls()
        return cls(equals=payload.get("equals") or {})

    def __repr__(self) -> str:
        return f"MetadataFilter(equals={self.equals!r})"


class _RWLock:
    """Writer-preference readers-writer lock."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0

    def acquire_read(self) -> None:
        with self._cond:
            while self._writer or self._writers_waiting:
                self._cond.wait()
            self._readers += 1

    def release_read(self) -> None:
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self) -> None:
        with self._cond:
            self._writers_waiting += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._writers_waiting -= 1
            self._writer = True

    def release_write(self) -> None:
        with self._cond:
            self._writer = False
            self._cond.notify_all()


class _ReadGuard:
    def __init__(self, lock: _RWLock) -> None:
        self._lock = lock

    def __enter__(self) -> None:
        self._lock.acquire_read()

    def __exit__(self, *exc) -> None:
        self._lock.release_read()


class _WriteGuard:
    def __init__(self, lock: _RWLock) -> None:
        self._lock = lock

    def __enter__(self) -> None:
        self._lock.acquire_write()

    def __exit__(self, *exc) -> None:
        self._lock.release_write()


class _VectorArray:
    """Growable row matrix; row index == item_id."""

    def __init__(self, dim: int) -> None:
        self._rows = np.zeros((64, dim), dtype=np.float64)
        self.count = 0

    def append(self, vector: np.ndarray) -> int:
        if self.count == self._rows.shape[0]:
            grown = np.zeros(
                (self._rows.shape[0] * 2, self._rows.shape[1]), dtype=np.float64
            )
            grown[: self.count] = self._rows[: self.count]
            self._rows = grown
        self._rows[self.count] = vector
        self.count += 1
        return self.count - 1

    @property
    def matrix(self) -> np.ndarray:
        return self._rows[: self.count]


@dataclass
class _Item:
    item_id: int
    doc_id: str
    chunk_id: str
    metadata: dict
    deleted: bool = False


class VectorIndex:
    """Upsert, query, delete, snapshot. See module docstring for backends."""

    def __init__(self, spec: IndexBackendSpec | None = None) -> None:
        self.spec = spec or IndexBackendSpec()
        self._lock = _RWLock()
        if self.spec.kind == "remote":
            self._remote = _RemoteStoreClient(self.spec)
            return
        self._vectors = _VectorArray(self.spec.dim)
        self._items: dict[int, _Item] = {}
        self._by_chunk: dict[tuple[str, str], int] = {}
        self._deleted_mask = np.zeros(64, dtype=bool)
        self._graph: HnswGraph | None = None
        if self.spec.kind == "hnsw":
            self._graph = HnswGraph(
                m=self.spec.m,
                ef_construction=self.spec.ef_construction,
                seed=self.spec.seed,
            )

    # -- write path ---------------------------------------------------------

    def upsert(
        self,
        doc_id: str,
        chunk_id: str,
        vector: EmbeddingVector | np.ndarray,
        metadata: dict | None = None,
    ) -> int:
        """Insert one chunk vector; replaces an existing (doc_id, chunk_id).

        Returns the assigned item_id. Replacement tombstones the old item and
        assigns a fresh id so readers holding old hits stay consistent.
        """
        values = vector.values if isinstance(vector, EmbeddingVector) else vector
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] != self.spec.dim:
            raise DimensionMismatch(
                f"expected dim {self.spec.dim}, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidVector("vector contains non-finite values")
        meta = dict(metadata or {})
        meta["doc_id"] = doc_id
        meta["chunk_id"] = chunk_id
        if self.spec.kind == "remote":
            return self._remote.upsert(doc_id, chunk_id, values, meta)
        with _WriteGuard(self._lock):
            key = (doc_id, chunk_id)
            old = self._by_chunk.get(key)
            if old is not None:
                self._tombstone(old)
            item_id = self._vectors.append(values)
            self._grow_deleted_mask()
            self._items[item_id] = _Item(item_id, doc_id, chunk_id, meta)
            self._by_chunk[key] = item_id
            if self._graph is not None:
                self._graph.insert(self._vectors.matrix, item_id)
            return item_id

    def add_unique(
        self,
        doc_id: str,
        chunk_id: str,
        vector: EmbeddingVector | np.ndarray,
        metadata: dict | None = None,
    ) -> int:
        """Like upsert but refuses to overwrite an existing chunk."""
        if self.spec.kind != "remote":
            with _ReadGuard(self._lock):
                if (doc_id, chunk_id) in self._by_chunk:
                    raise DuplicateChunk(f"{doc_id}:{chunk_id} already indexed")
        return self.upsert(doc_id, chunk_id, vector, metadata)

    def delete_document(self, doc_id: str) -> int:
        """Tombstone every chunk of a document; returns how many were live."""
        if self.spec.kind == "remote":
            return self._remote.delete_document(doc_id)
        with _WriteGuard(self._lock):
            victims = [
                item.item_id
                for item in self._items.values()
                if item.doc_id == doc_id and not item.deleted
            ]
            for item_id in victims:
                self._tombstone(item_id)
            return len(victims)

    def _tombstone(self, item_id: int) -> None:
        item = self._items[item_id]
        item.deleted = True
        self._deleted_mask[item_id] = True
        self._by_chunk.pop((item.doc_id, item.chunk_id), None)

    def _grow_deleted_mask(self) -> None:
        needed = self._vectors.count
        if needed > self._deleted_mask.shape[0]:
            grown = np.zeros(max(needed, self._deleted_mask.shape[0] * 2), dtype=bool)
            grown[: self._deleted_mask.shape[0]] = self._deleted_mask
            self._deleted_mask = grown

    # -- read path ----------------------------------------------------------

    def count(self) -> int:
        """Number of live (non-deleted) items."""
        if self.spec.kind == "remote":
            return self._remote.count()
        with _ReadGuard(self._lock):
            return len(self._by_chunk)

    def has_document(self, doc_id: str) -> bool:
        """True if the document has at least one live chunk."""
        if self.spec.kind == "remote":
            return self._remote.has_document(doc_id)
        with _ReadGuard(self._lock):
            return any(key[0] == doc_id for key in self._by_chunk)

    def top_k(
        self,
        query: EmbeddingVector | np.ndarray,
        k: int,
        metadata_filter: MetadataFilter | None = None,
    ) -> list[Hit]:
        """Top-k by cosine similarity, descending; ties break on item_id.

        With a filter, candidates are restricted before ranking. The HNSW
        backend answers filtered queries by exact scan over the (already
        narrowed) candidate set, keeping filter semantics exact.
        """
        if k < 1:
            return []
        values = query.values if isinstance(query, EmbeddingVector) else query
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] != self.spec.dim:
            raise DimensionMismatch(
                f"expected dim {self.spec.dim}, got shape {values.shape}"
            )
        mfilter = metadata_filter or MetadataFilter()
        if self.spec.kind == "remote":
            return self._remote.top_k(values, k, mfilter)
        with _ReadGuard(self._lock):
            if not self._by_chunk:
                return []
            if self._graph is not None and mfilter.is_empty():
                exclude = self._deleted_mask[: self._vectors.count]
                pairs = self._graph.search(
                    self._vectors.matrix,
                    values,
                    k,
                    ef_search=self.spec.ef_search,
                    exclude=exclude,
                )
                return [self._hit(item_id, score) for score, item_id in pairs]
            if mfilter.is_empty():
                ids = np.fromiter(
                    sorted(self._by_chunk.values()), dtype=np.int64
                )
            else:
                ids = np.fromiter(
                    sorted(
                        item_id
                        for item_id, item in self._items.items()
                        if not item.deleted and mfilter.matches(item.metadata)
                    ),
                    dtype=np.int64,
                )
            if ids.size == 0:
                return []
            scores = self._vectors.matrix[ids] @ values
            # lexsort's last key is primary: descending score, ascending id
            order = np.lexsort((ids, -scores))[:k]
            return [
                self._hit(int(ids[pos]), float(scores[pos])) for pos in order
            ]

    def _hit(self, item_id: int, score: float) -> Hit:
        item = self._items[item_id]
        return Hit(
            item_id=item_id,
            score=score,
            doc_id=item.doc_id,
            chunk_id=item.chunk_id,
            metadata=dict(item.metadata),
        )

    # -- persistence --------------------------------------------------------

    def save(self, path: str) -> None:
        """Write live items to a snapshot file (atomic replace).

        Layout: magic, u32 header length, header JSON, then per item a u32
        record length, record JSON, and dim float64 little-endian values.
        Tombstones are not persisted.
        """
        if self.spec.kind == "remote":
            raise SnapshotError("remote index does not snapshot locally")
        with _ReadGuard(self._lock):
            live = [
                self._items[item_id]
                for item_id in sorted(self._by_chunk.values())
            ]
            header = {
                "dim": self.spec.dim,
                "kind": self.spec.kind,
                "count": len(live),
                "next_item_id": self._vectors.count,
                "m": self.spec.m,
                "ef_construction": self.spec.ef_construction,
                "ef_search": self.spec.ef_search,
                "seed": self.spec.seed,
            }
            buf = io.BytesIO()
            buf.write(SNAPSHOT_MAGIC)
            header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
            buf.write(struct.pack("<I", len(header_bytes)))
            buf.write(header_bytes)
            for item in live:
                meta_bytes = json.dumps(
                    {
                        "item_id": item.item_id,
                        "doc_id": item.doc_id,
                        "chunk_id": item.chunk_id,
                        "metadata": item.metadata,
                    },
                    sort_keys=True,
                ).encode("utf-8")
                vec_bytes = (
                    self._vectors.matrix[item.item_id]
                    .astype("<f8", copy=False)
                    .tobytes()
                )
                record = struct.pack("<I", len(meta_bytes)) + meta_bytes + vec_bytes
                buf.write(struct.pack("<I", len(record)))
                buf.write(record)
            payload = buf.getvalue()
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str, spec: IndexBackendSpec | None = None) -> "VectorIndex":
        """Rebuild an index from a snapshot.

        The backend kind/knobs come from the stored header unless `spec`
        overrides them. The HNSW graph is reconstructed by reinserting live
        items in item_id order, which is deterministic for a fixed seed.
        """
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise SnapshotError(f"cannot read snapshot: {exc}") from exc
        if blob[: len(SNAPSHOT_MAGIC)] != SNAPSHOT_MAGIC:
            raise SnapshotError("bad snapshot magic")
        offset = len(SNAPSHOT_MAGIC)
        try:
            (header_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            header = json.loads(blob[offset : offset + header_len])
            offset += header_len
            if spec is None:
                spec = IndexBackendSpec(
                    kind=header["kind"],
                    dim=header["dim"],
                    m=header.get("m", DEFAULT_M),
                    ef_construction=header.get(
                        "ef_construction", DEFAULT_EF_CONSTRUCTION
                    ),
                    ef_search=header.get("ef_search", DEFAULT_EF_SEARCH),
                    seed=header.get("seed", 2025),
                )
            if spec.dim != header["dim"]:
                raise DimensionMismatch(
                    f"snapshot dim {header['dim']} != requested {spec.dim}"
                )
            index = cls(spec)
            dim = header["dim"]
            vec_nbytes = dim * 8
            for _ in range(header["count"]):
                (record_len,) = struct.unpack_from("<I", blob, offset)
                offset += 4
                record = blob[offset : offset + record_len]
                if len(record) != record_len:
                    raise SnapshotError("truncated snapshot record")
                offset += record_len
                (meta_len,) = struct.unpack_from("<I", record, 0)
                meta = json.loads(record[4 : 4 + meta_len])
                vec = np.frombuffer(
                    record[4 + meta_len : 4 + meta_len + vec_nbytes], dtype="<f8"
                ).astype(np.float64)
                index.upsert(
                    meta["doc_id"], meta["chunk_id"], vec, meta["metadata"]
                )
        except (struct.error, KeyError, ValueError, json.JSONDecodeError) as exc:
            raise SnapshotError(f"corrupt snapshot: {exc}") from exc
        return index


class _RemoteStoreClient:
    """HTTP client for a hosted vector store speaking the store protocol.

    Endpoints: POST {base}/upsert, POST {base}/query,
    DELETE {base}/docs/{doc_id}, GET {base}/health. Bodies are JSON; errors
    come back as {"error": name, "detail": text} and are re-raised as the
    matching local exception type.
    """

    _ERRORS = {
        "dimension_mismatch": DimensionMismatch,
        "invalid_vector": InvalidVector,
        "duplicate_chunk": DuplicateChunk,
    }

    def __init__(self, spec: IndexBackendSpec, timeout: float = 10.0) -> None:
        self.base = (spec.endpoint or "").rstrip("/")
        self.timeout = timeout
        self._session = requests.Session()

    def _raise_for_error(self, response: requests.Response) -> None:
        if response.status_code < 400:
            return
        try:
            body = response.json()
        except ValueError:
            body = {}
        name = body.get("error", "")
        detail = body.get("detail", f"store returned {response.status_code}")
        exc_type = self._ERRORS.get(name, ProviderUnavailable)
        raise exc_type(detail)

    def upsert(
        self, doc_id: str, chunk_id: str, values: np.ndarray, metadata: dict
    ) -> int:
        try:
            response = self._session.post(
                f"{self.base}/upsert",
                json={
                    "items": [
                        {
                            "doc_id": doc_id,
                            "chunk_id": chunk_id,
                            "vector": values.tolist(),
                            "metadata": metadata,
                        }
                    ]
                },
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ProviderUnavailable(f"vector store unreachable: {exc}") from exc
        self._raise_for_error(response)
        return int(response.json()["item_ids"][0])

    def top_k(
        self, values: np.ndarray, k: int, mfilter: MetadataFilter
    ) -> list[Hit]:
        payload: dict = {"vector": values.tolist(), "k": k}
        if not mfilter.is_empty():
            payload["filter"] = mfilter.to_json()
        try:
            response = self._session.post(
                f"{self.base}/query", json=payload, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise ProviderUnavailable(f"vector store unreachable: {exc}") from exc
        self._raise_for_error(response)
        return [
            Hit(
                item_id=int(h["item_id"]),
                score=float(h["score"]),
                doc_id=h["doc_id"],
                chunk_id=h["chunk_id"],
                metadata=h.get("metadata", {}),
            )
            for h in response.json()["hits"]
        ]

    def delete_document(self, doc_id: str) -> int:
        try:
            response = self._session.delete(
                f"{self.base}/docs/{doc_id}", timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise ProviderUnavailable(f"vector store unreachable: {exc}") from exc
        self._raise_for_error(response)
        return int(response.json().get("removed", 0))

    def count(self) -> int:
        try:
            response = self._session.get(
                f"{self.base}/health", timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise ProviderUnavailable(f"vector store unreachable: {exc}") from exc
        self._raise_for_error(response)
        return int(response.json().get("count", 0))

    def has_document(self, doc_id: str) -> bool:
        # the wire protocol has no presence op; a filtered 1-NN probe with a
        # basis vector answers it without extending the protocol
        probe = np.zeros(self.spec.dim)
        probe[0] = 1.0
        payload = {
            "vector": probe.tolist(),
            "k": 1,
            "filter": {"equals": {"doc_id": doc_id}},
        }
        try:
            response = self._session.post(
                f"{self.base}/query", json=payload, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise ProviderUnavailable(f"vector store unreachable: {exc}") from exc
        self._raise_for_error(response)
        return bool(response.json().get("hits"))
