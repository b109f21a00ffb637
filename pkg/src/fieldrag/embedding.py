"""Text embedding providers, vector type, cosine similarity and caching.

All vectors are L2-normalized at creation so cosine similarity reduces to a
dot product everywhere downstream; the index and the evaluation harness rely
on that. Two provider families exist:

* ``test:hash-ngram``: a deterministic, offline provider hashing word and
  character-trigram counts into a fixed number of buckets. It needs no
  network and is byte-stable across runs, which is what the hermetic test
  and benchmark paths run on.
* ``remote:<name>``: a thin HTTP client for a hosted embedding model:
  one POST per batch with ``{"texts": [...]}`` returning
  ``{"vectors": [[...]]}``, with exponential-backoff retries.

Embeddings are cached keyed by (provider_id, SHA-256 of text) so re-running
ingestion or benchmark sweeps does not re-pay network costs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from .errors import (
    DimensionMismatch,
    EmptyText,
    InvalidVector,
    ProviderUnavailable,
)

logger = logging.getLogger(__name__)

TEST_PROVIDER_ID = "test:hash-ngram"
DEFAULT_TEST_DIM = 256

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


@dataclass
class EmbeddingVector:
    """A unit-norm vector with the id of the provider that produced it."""

    values: np.ndarray
    provider_id: str

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class EmbeddingProviderSpec:
    provider_id: str
    dim: int
    endpoint: str | None = None
    auth_env_var: str | None = None
    batch_limit: int = 64

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise ValueError("embedding dim must be positive")
        if self.batch_limit <= 0:
            raise ValueError("batch_limit must be positive")


def _finalize_vector(raw: Sequence[float] | np.ndarray, provider_id: str) -> EmbeddingVector:
    values = np.asarray(raw, dtype=np.float64)
    if values.ndim != 1:
        raise InvalidVector(f"expected a flat vector, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InvalidVector("vector has non-finite components")
    norm = float(np.linalg.norm(values))
    if norm == 0.0:
        raise InvalidVector("zero vector cannot be normalized")
    return EmbeddingVector(values=values / norm, provider_id=provider_id)


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


def test_embed(
    text: str, dim: int = DEFAULT_TEST_DIM, provider_id: str = TEST_PROVIDER_ID
) -> EmbeddingVector:
    """Deterministic offline embedding.

    Lowercase, split on whitespace; every token and every character trigram
    of a token is hashed with FNV-1a into one of ``dim`` buckets; the bucket
    count vector is then L2-normalized.
    """
    tokens = text.lower().split()
    if not tokens:
        raise EmptyText("cannot embed empty text")
    counts = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        counts[fnv1a64(token.encode("utf-8")) % dim] += 1.0
        for i in range(len(token) - 2):
            counts[fnv1a64(token[i : i + 3].encode("utf-8")) % dim] += 1.0
    return _finalize_vector(counts, provider_id)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity; inputs are unit-norm so this is the dot product."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"cosine over dims {a.dim} and {b.dim}")
    return float(np.dot(a.values, b.values))


class EmbeddingCache:
    """File-per-key embedding cache with atomic writes.

    Keys are SHA-256 over provider_id and text, so distinct providers never
    collide. Each value is written to a temp file and renamed into place,
    which keeps concurrent read-modify-write per key safe.
    """

    def __init__(self, cache_dir: str | Path | None = None) -> None:
        self._dir = Path(cache_dir) if cache_dir is not None else None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
        self._mem: dict[str, np.ndarray] = {}

    @staticmethod
    def _key(provider_id: str, text: str) -> str:
        h = hashlib.sha256()
        h.update(provider_id.encode("utf-8"))
        h.update(b"\x00")
        h.update(text.encode("utf-8"))
        return h.hexdigest()

    def get(self, provider_id: str, text: str) -> np.ndarray | None:
        key = self._key(provider_id, text)
        if key in self._mem:
            return self._mem[key]
        if self._dir is None:
            return None
        path = self._dir / f"{key}.json"
        if not path.exists():
            return None
        try:
            payload = json.loads(path.read_text("utf-8"))
            values = np.asarray(payload["values"], dtype=np.float64)
        except (ValueError, KeyError, OSError):
            return None  # treat a torn/corrupt entry as a miss
        self._mem[key] = values
        return values

    def put(self, provider_id: str, text: str, values: np.ndarray) -> None:
        key = self._key(provider_id, text)
        self._mem[key] = values
        if self._dir is None:
            return
        payload = json.dumps(
            {"provider_id": provider_id, "values": values.tolist()}
        )
        fd, tmp = tempfile.mkstemp(dir=self._dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, self._dir / f"{key}.json")
        except OSError:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise


def _remote_embed_batch(
    texts: list[str],
    spec: EmbeddingProviderSpec,
    *,
    retries: int = 3,
    backoff_base: float = 0.5,
    timeout: float = 30.0,
) -> list[list[float]]:
    headers = {"Content-Type": "application/json"}
    if spec.auth_env_var:
        secret = os.environ.get(spec.auth_env_var)
        if not secret:
            raise ProviderUnavailable(
                f"auth env var {spec.auth_env_var} is not set for {spec.provider_id}"
            )
        headers["Authorization"] = f"Bearer {secret}"
    last_error: Exception | None = None
    for attempt in range(retries + 1):
        if attempt:
            time.sleep(backoff_base * (2 ** (attempt - 1)))
        try:
            resp = requests.post(
                spec.endpoint, json={"texts": texts}, headers=headers, timeout=timeout
            )
            if resp.status_code >= 500:
                last_error = ProviderUnavailable(
                    f"{spec.provider_id} returned {resp.status_code}"
                )
                continue
            if resp.status_code != 200:
                raise ProviderUnavailable(
                    f"{spec.provider_id} returned {resp.status_code}: {resp.text[:200]}"
                )
            vectors = resp.json().get("vectors")
            if not isinstance(vectors, list) or len(vectors) != len(texts):
                raise ProviderUnavailable(
                    f"{spec.provider_id} returned a malformed vectors payload"
                )
            return vectors
        except requests.RequestException as exc:
            last_error = exc
    raise ProviderUnavailable(
        f"{spec.provider_id} unreachable after {retries + 1} attempts: {last_error}"
    )


def embed_batch(
    texts: Sequence[str],
    provider: EmbeddingProviderSpec,
    *,
    cache: EmbeddingCache | None = None,
    retries: int = 3,
    backoff_base: float = 0.5,
) -> list[EmbeddingVector]:
    """Embed texts in input order, re-batching internally to batch_limit.

    Identical texts always get identical vectors within one provider; cached
    entries are reused without touching the provider.
    """
    texts = list(texts)
    for text in texts:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")

    out: list[EmbeddingVector | None] = [None] * len(texts)
    pending: list[int] = []
    for i, text in enumerate(texts):
        if cache is not None:
            hit = cache.get(provider.provider_id, text)
            if hit is not None:
                out[i] = EmbeddingVector(values=hit, provider_id=provider.provider_id)
                continue
        pending.append(i)

    for start in range(0, len(pending), provider.batch_limit):
        batch = pending[start : start + provider.batch_limit]
        batch_texts = [texts[i] for i in batch]
        if provider.provider_id.startswith("test:"):
            vectors = [
                test_embed(t, provider.dim, provider.provider_id) for t in batch_texts
            ]
        else:
            if not provider.endpoint:
                raise ProviderUnavailable(
                    f"provider {provider.provider_id} has no endpoint configured"
                )
            raw = _remote_embed_batch(
                batch_texts, provider, retries=retries, backoff_base=backoff_base
            )
            vectors = []
            for values in raw:
                if len(values) != provider.dim:
                    raise DimensionMismatch(
                        f"{provider.provider_id} returned dim {len(values)}, "
                        f"expected {provider.dim}"
                    )
                vectors.append(_finalize_vector(values, provider.provider_id))
        for i, vec in zip(batch, vectors):
            if vec.dim != provider.dim:
                raise DimensionMismatch(
                    f"provider dim {provider.dim} but produced {vec.dim}"
                )
            out[i] = vec
            if cache is not None:
                cache.put(provider.provider_id, texts[i], vec.values)

    assert all(v is not None for v in out)
    return out  # type: ignore[return-value]
