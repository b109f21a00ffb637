"""Exception hierarchy shared across the package.

Every error raised on a contract boundary derives from FieldragError so
callers (CLI, HTTP service) can map failures to exit codes / status codes
in one place.
"""

from __future__ import annotations


class FieldragError(Exception):
    """Base class for all package errors."""


class ConfigError(FieldragError):
    """Invalid or unreadable configuration."""


# --- ingestion ---------------------------------------------------------------

class InvalidEncoding(FieldragError):
    """Raw document bytes are not valid UTF-8."""


class EmptyDocument(FieldragError):
    """Document body is empty after normalization."""


class OversizeSection(FieldragError):
    """A heading section exceeds max_chars and overflow policy is 'error'."""


# --- embedding ---------------------------------------------------------------

class EmptyText(FieldragError):
    """Empty (or whitespace-only) text cannot be embedded."""


class ProviderUnavailable(FieldragError):
    """A remote provider could not be reached after exhausting retries."""


class DimensionMismatch(FieldragError):
    """Vector dimension does not match what the consumer expects."""


class InvalidVector(FieldragError):
    """Vector has non-finite components or zero norm."""


# --- index -------------------------------------------------------------------

class DuplicateChunk(FieldragError):
    """(doc_id, chunk_id) already present in the index."""


class SnapshotError(FieldragError):
    """Index snapshot file is corrupt or has an unsupported format."""


# --- router / sessions -------------------------------------------------------

class UnknownDocument(FieldragError):
    """Referenced document has no indexed chunks."""


class UnknownSession(FieldragError):
    """No session exists with the given id."""


# --- auxiliary agents ----------------------------------------------------------

class AgentUnavailable(FieldragError):
    """Agent service unreachable within its timeout/retry budget."""


class BadPayload(FieldragError):
    """Agent response violates its wire schema."""


# --- evaluation ----------------------------------------------------------------

class OracleUnavailable(FieldragError):
    """LLM-backed claim oracle could not produce a judgment."""


class EmptyGroundTruth(FieldragError):
    """Ground-truth text yields zero claims; the QA item cannot be scored."""
