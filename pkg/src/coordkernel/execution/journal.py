"""Append-only checksummed journal and the workflow state it persists.

Record layout: ``u32 length | u32 type | payload | sha256(payload)``, all
integers little-endian. Snapshots carry the full :class:`WorkflowState`;
event records carry what the loop consumed between snapshots.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterator

from ..orchestration import TaskDag

HEADER = struct.Struct("<II")
DIGEST_LEN = 32


class RecordType(IntEnum):
    SNAPSHOT = 1
    EVENT = 2


class JournalError(RuntimeError):
    pass


class JournalCorrupt(JournalError):
    def __init__(self, index: int, offset: int, reason: str):
        super().__init__(f"journal record {index} at offset {offset}: {reason}")
        self.index = index
        self.offset = offset


class JournalWriteError(JournalError):
    pass


class UnknownSession(KeyError):
    pass


class Status(Enum):
    RUNNING = "Running"
    DORMANT = "Dormant"
    COMPLETED = "Completed"
    FAILED_TERMINAL = "FailedTerminal"


@dataclass
class WorkflowState:
    session_id: str
    dag: TaskDag
    context: list[dict] = field(default_factory=list)
    retry_counts: dict[str, int] = field(default_factory=dict)
    status: Status = Status.RUNNING
    attempts: dict[str, int] = field(default_factory=dict)
    assignments: dict[str, int | None] = field(default_factory=dict)
    exclusions: dict[str, list[int]] = field(default_factory=dict)
    notes: dict[str, str] = field(default_factory=dict)
    handled: list[str] = field(default_factory=list)
    outputs: dict[str, list[str]] = field(default_factory=dict)
    dispatches: int = 0
    audits: int = 0
    fallbacks: int = 0
    errors: int = 0
    steps: int = 0

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "dag": self.dag.to_dict(),
            "context": self.context,
            "retry_counts": self.retry_counts,
            "status": self.status.value,
            "attempts": self.attempts,
            "assignments": self.assignments,
            "exclusions": self.exclusions,
            "notes": self.notes,
            "handled": self.handled,
            "outputs": self.outputs,
            "dispatches": self.dispatches,
            "audits": self.audits,
            "fallbacks": self.fallbacks,
            "errors": self.errors,
            "steps": self.steps,
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "WorkflowState":
        return cls(
            session_id=d["session_id"],
            dag=TaskDag.from_dict(d["dag"]),
            context=list(d["context"]),
            retry_counts=dict(d["retry_counts"]),
            status=Status(d["status"]),
            attempts=dict(d["attempts"]),
            assignments=dict(d["assignments"]),
            exclusions={k: list(v) for k, v in d["exclusions"].items()},
            notes=dict(d["notes"]),
            handled=list(d["handled"]),
            outputs={k: list(v) for k, v in d["outputs"].items()},
            dispatches=d["dispatches"],
            audits=d["audits"],
            fallbacks=d["fallbacks"],
            errors=d["errors"],
            steps=d["steps"],
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, WorkflowState) and self.to_text() == other.to_text()


class Journal:
    """Append-only record log, on disk when ``path`` is given, else in memory.

    ``crash_after`` makes every append beyond that many successful ones raise
    :class:`JournalWriteError` without writing, modelling a process crash.
    """

    def __init__(self, path: str | Path | None = None, crash_after: int | None = None):
        self.path = Path(path) if path is not None else None
        self._buf = io.BytesIO()
        self.crash_after = crash_after
        self.appends = 0
        if self.path is not None and self.path.exists():
            self._buf.write(self.path.read_bytes())

    def raw(self) -> bytes:
        return self._buf.getvalue()

    def append(self, rtype: RecordType, payload: bytes) -> int:
        if self.crash_after is not None and self.appends >= self.crash_after:
            raise JournalWriteError(f"write refused after {self.appends} appends")
        rec = HEADER.pack(len(payload), int(rtype)) + payload + hashlib.sha256(payload).digest()
        self._buf.seek(0, io.SEEK_END)
        self._buf.write(rec)
        if self.path is not None:
            with open(self.path, "ab") as fh:
                fh.write(rec)
                fh.flush()
                os.fsync(fh.fileno())
        self.appends += 1
        return self.appends - 1

    def records(self) -> Iterator[tuple[int, RecordType, bytes]]:
        yield from iter_records(self.raw())

    def append_json(self, rtype: RecordType, obj: dict) -> int:
        return self.append(rtype, json.dumps(obj, sort_keys=True, separators=(",", ":")).encode())

    @classmethod
    def open(cls, path: str | Path) -> "Journal":
        return cls(path)


def iter_records(data: bytes) -> Iterator[tuple[int, RecordType, bytes]]:
    off = 0
    idx = 0
    n = len(data)
    while off < n:
        if off + HEADER.size > n:
            raise JournalCorrupt(idx, off, "truncated header")
        length, rtype = HEADER.unpack_from(data, off)
        end = off + HEADER.size + length + DIGEST_LEN
        if end > n:
            raise JournalCorrupt(idx, off, "truncated record")
        payload = data[off + HEADER.size : off + HEADER.size + length]
        if hashlib.sha256(payload).digest() != data[end - DIGEST_LEN : end]:
            raise JournalCorrupt(idx, off, "checksum mismatch")
        try:
            kind = RecordType(rtype)
        except ValueError:
            raise JournalCorrupt(idx, off, f"unknown record type {rtype}") from None
        yield idx, kind, payload
        off = end
        idx += 1


def persist(state: WorkflowState, journal: Journal) -> int:
    """Write a full snapshot; the returned record index is the durable token."""
    return journal.append(RecordType.SNAPSHOT, state.to_text().encode())


def rehydrate(journal: Journal | bytes, session_id: str) -> WorkflowState:
    """Rebuild the latest durable state of ``session_id`` from the journal alone."""
    data = journal if isinstance(journal, (bytes, bytearray)) else journal.raw()
    last = None
    for _, rtype, payload in iter_records(bytes(data)):
        if rtype is RecordType.SNAPSHOT:
            d = json.loads(payload)
            if d["session_id"] == session_id:
                last = d
    if last is None:
        raise UnknownSession(session_id)
    return WorkflowState.from_dict(last)


def sessions(journal: Journal | bytes) -> list[str]:
    data = journal if isinstance(journal, (bytes, bytearray)) else journal.raw()
    seen = {}
    for _, rtype, payload in iter_records(bytes(data)):
        if rtype is RecordType.SNAPSHOT:
            seen.setdefault(json.loads(payload)["session_id"], None)
    return list(seen)
