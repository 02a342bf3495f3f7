"""Durable execution: artifacts, simulated workers, audit, journal and the work loop."""

from .artifacts import ArtifactManager, ArtifactRecord, LogicalPath, NotReady, Topology, digest
from .evaluation import EvaluationReport, EvaluatorConfig, ParseFailure, audit, parse_score
from .journal import (
    Journal,
    JournalCorrupt,
    JournalError,
    JournalWriteError,
    RecordType,
    Status,
    UnknownSession,
    WorkflowState,
    iter_records,
    persist,
    rehydrate,
    sessions,
)
from .loop import Deadlock, EventQueue, LoopCounters, LoopRuntime, SimExecutor, WorkerFinished, resume, run_loop
from .worker import HashStream, WorkerOutput, draw_quality, simulate_worker

__all__ = [
    "ArtifactManager", "ArtifactRecord", "Deadlock", "EvaluationReport", "EvaluatorConfig", "EventQueue",
    "HashStream", "Journal", "JournalCorrupt", "JournalError", "JournalWriteError", "LogicalPath",
    "LoopCounters", "LoopRuntime", "NotReady", "ParseFailure", "RecordType", "SimExecutor", "Status",
    "Topology", "UnknownSession", "WorkerFinished", "WorkerOutput", "WorkflowState", "audit", "digest",
    "draw_quality", "iter_records", "parse_score", "persist", "rehydrate", "resume", "run_loop",
    "sessions", "simulate_worker",
]
