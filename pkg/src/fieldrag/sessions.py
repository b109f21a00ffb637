"""Append-only session persistence.

Each session is one JSON-lines file under <root>/sessions: a header
record followed by one record per turn. Files are replayed on read, so a
restart loses nothing. Writes to one session serialize behind a
per-session lock; distinct sessions do not contend.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FieldragError, UnknownSession

DEFAULT_SYSTEM_PROMPT = (
    "You are a field assistant for industrial equipment. Answer from the "
    "provided context and cite excerpts by their bracketed tags."
)

_ID_OK = re.compile(r"^[A-Za-z0-9_-]{1,64}$")


@dataclass
class Turn:
    role: str
    text: str
    citations: list = field(default_factory=list)
    tool_trace: list = field(default_factory=list)
    created_at: float = 0.0

    def __post_init__(self):
        if self.role not in ("user", "assistant"):
            raise FieldragError(f"invalid turn role: {self.role!r}")
        self.citations = [tuple(c) for c in self.citations]
        if not self.created_at:
            self.created_at = time.time()

    def to_record(self) -> dict:
        return {
            "role": self.role,
            "text": self.text,
            "citations": [list(c) for c in self.citations],
            "tool_trace": list(self.tool_trace),
            "created_at": self.created_at,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Turn":
        return cls(
            role=record["role"],
            text=record["text"],
            citations=record.get("citations", []),
            tool_trace=record.get("tool_trace", []),
            created_at=record.get("created_at", 0.0),
        )


@dataclass
class Session:
    session_id: str
    system_prompt: str
    turns: list
    created_at: float
    last_active: float


class SessionStore:
    def __init__(self, root_dir: str):
        self.dir = Path(root_dir) / "sessions"
        self.dir.mkdir(parents=True, exist_ok=True)
        # RLock so answer() can hold the session lock across append_turns
        self._locks: dict[str, threading.RLock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, session_id: str) -> threading.RLock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.RLock())

    def _path(self, session_id: str) -> Path:
        if not _ID_OK.match(session_id):
            raise UnknownSession(f"malformed session id: {session_id!r}")
        return self.dir / f"{session_id}.jsonl"

    def create_session(self, system_prompt: str | None = None) -> Session:
        session_id = uuid.uuid4().hex[:16]
        now = time.time()
        header = {
            "session_id": session_id,
            "system_prompt": system_prompt or DEFAULT_SYSTEM_PROMPT,
            "created_at": now,
        }
        path = self._path(session_id)
        with self._lock_for(session_id):
            with open(path, "x", encoding="utf-8") as fh:
                fh.write(json.dumps(header, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        return Session(session_id, header["system_prompt"], [], now, now)

    def get_session(self, session_id: str) -> Session:
        path = self._path(session_id)
        try:
            raw = path.read_text("utf-8")
        except FileNotFoundError:
            raise UnknownSession(session_id) from None
        lines = [ln for ln in raw.splitlines() if ln.strip()]
        if not lines:
            raise UnknownSession(f"session file empty: {session_id}")
        header = json.loads(lines[0])
        turns = [Turn.from_record(json.loads(ln)) for ln in lines[1:]]
        last = turns[-1].created_at if turns else header["created_at"]
        return Session(
            session_id=header["session_id"],
            system_prompt=header["system_prompt"],
            turns=turns,
            created_at=header["created_at"],
            last_active=last,
        )

    def session_exists(self, session_id: str) -> bool:
        try:
            return self._path(session_id).exists()
        except UnknownSession:
            return False

    def delete_session(self, session_id: str) -> None:
        """Idempotent: deleting a missing session succeeds."""
        with self._lock_for(session_id):
            try:
                self._path(session_id).unlink(missing_ok=True)
            except UnknownSession:
                pass

    def list_sessions(self) -> list[str]:
        return sorted(p.stem for p in self.dir.glob("*.jsonl"))

    def append_turns(self, session_id: str, turns: list) -> None:
        """Append under the session lock, enforcing role alternation."""
        with self._lock_for(session_id):
            session = self.get_session(session_id)
            expect = "user" if len(session.turns) % 2 == 0 else "assistant"
            with open(self._path(session_id), "a", encoding="utf-8") as fh:
                for turn in turns:
                    if turn.role != expect:
                        raise FieldragError(
                            f"turn role {turn.role!r} breaks alternation "
                            f"(expected {expect!r})"
                        )
                    expect = "assistant" if expect == "user" else "user"
                    fh.write(json.dumps(turn.to_record(), sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    def lock_for_answer(self, session_id: str) -> threading.RLock:
        """Exclusive lock so concurrent answers on one session serialize."""
        return self._lock_for(session_id)
