"""Logical artifact paths and their mapping onto physical storage."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path


class NotReady(LookupError):
    """The logical path has not been materialized yet."""


class Topology(Enum):
    INTRA_SESSION = "IntraSession"
    INTER_AGENT = "InterAgent"


@dataclass(frozen=True)
class LogicalPath:
    session_id: str
    task_id: str
    artifact_kind: str
    name: str

    def __post_init__(self):
        for part in (self.session_id, self.task_id, self.artifact_kind, self.name):
            if not part or "/" in part:
                raise ValueError(f"invalid path component {part!r}")
        for attr in ("session_id", "task_id", "artifact_kind", "name"):
            object.__setattr__(self, attr, getattr(self, attr).lower())

    def __str__(self) -> str:
        return "/".join((self.session_id, self.task_id, self.artifact_kind, self.name))

    @classmethod
    def parse(cls, text: str) -> "LogicalPath":
        parts = text.strip("/").split("/")
        if len(parts) != 4:
            raise ValueError(f"expected session/task/kind/name, got {text!r}")
        return cls(*parts)

    @classmethod
    def for_output(cls, session_id: str, task_id: str, output: str) -> "LogicalPath":
        kind, _, name = output.partition("/")
        return cls(session_id, task_id, kind, name)


@dataclass(frozen=True)
class ArtifactRecord:
    logical: LogicalPath
    physical: str
    topology: Topology
    checksum: str
    size: int


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class ArtifactManager:
    """Resolves logical paths to workspace files (intra-session) or transfer handles.

    With ``root=None`` the workspace lives in memory; otherwise files are
    written under ``root/workspace/{session}/{task}/{kind}/{name}``.
    """

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else None
        self._mem: dict[str, bytes] = {}
        self._records: dict[LogicalPath, ArtifactRecord] = {}
        self.handles: dict[str, bytes] = {}

    def locator(self, logical: LogicalPath) -> str:
        rel = f"workspace/{logical}"
        return str(self.root / rel) if self.root is not None else rel

    def materialize(self, logical: LogicalPath, data: bytes, topology: Topology = Topology.INTRA_SESSION) -> ArtifactRecord:
        if topology is Topology.INTER_AGENT:
            handle = "xfer:" + digest(str(logical).encode())[:32]
            self.handles[handle] = bytes(data)
            physical = handle
        else:
            physical = self.locator(logical)
            if self.root is not None:
                path = Path(physical)
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(data)
            else:
                self._mem[physical] = bytes(data)
        rec = ArtifactRecord(logical, physical, topology, digest(data), len(data))
        self._records[logical] = rec
        return rec

    def resolve(self, logical: LogicalPath, topology: Topology | None = None) -> ArtifactRecord:
        rec = self._records.get(logical)
        if rec is None:
            if self.root is not None and topology is not Topology.INTER_AGENT:
                path = Path(self.locator(logical))
                if path.exists():
                    data = path.read_bytes()
                    rec = ArtifactRecord(logical, str(path), Topology.INTRA_SESSION, digest(data), len(data))
                    self._records[logical] = rec
                    return rec
            raise NotReady(str(logical))
        return rec

    def read(self, record: ArtifactRecord) -> bytes:
        if record.topology is Topology.INTER_AGENT:
            return self.pull(record.physical)
        if self.root is not None:
            return Path(record.physical).read_bytes()
        return self._mem[record.physical]

    def push(self, logical: LogicalPath, data: bytes) -> str:
        return self.materialize(logical, data, Topology.INTER_AGENT).physical

    def pull(self, handle: str) -> bytes:
        try:
            return self.handles[handle]
        except KeyError:
            raise NotReady(handle) from None

    def tamper(self, logical: LogicalPath, data: bytes) -> None:
        """Overwrite stored bytes without updating the record (fault injection)."""
        rec = self._records[logical]
        if rec.topology is Topology.INTER_AGENT:
            self.handles[rec.physical] = data
        elif self.root is not None:
            Path(rec.physical).write_bytes(data)
        else:
            self._mem[rec.physical] = data

    def checksums(self) -> dict[str, str]:
        return {str(k): v.checksum for k, v in sorted(self._records.items(), key=lambda kv: str(kv[0]))}
