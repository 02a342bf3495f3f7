"""Shared builders for workflow tests."""

from pathlib import Path

from coordkernel.dispatch import canonical_model, dispatch
from coordkernel.execution import (
    ArtifactManager,
    EvaluatorConfig,
    EventQueue,
    Journal,
    JournalWriteError,
    LogicalPath,
    LoopRuntime,
    SimExecutor,
    UnknownSession,
    WorkflowState,
    audit,
    resume,
    run_loop,
)
from coordkernel.execution.loop import ORCHESTRATOR, WorkerFinished
from coordkernel.orchestration import plan
from coordkernel.substrate import Archetype, PopulationSpec, domain_center, synthesize_population

_MODEL = None


def model():
    global _MODEL
    if _MODEL is None:
        _MODEL = canonical_model()
    return _MODEL


class ScriptedExecutor:
    """Replies to every submission with a fixed score; records who was asked."""

    def __init__(self, queue, score=10, fallback_score=None):
        self.queue = queue
        self.score = score
        self.fallback_score = score if fallback_score is None else fallback_score
        self.submissions = []

    def submit(self, session_id, node, worker, attempt, note):
        self.submissions.append((node.node_id, worker, attempt))
        s = self.fallback_score if worker is ORCHESTRATOR else self.score
        self.queue.push(WorkerFinished(session_id, node.node_id, attempt, worker, f"Score-Hint: {s}/10"))


def scripted_runtime(score=10, fallback_score=None, worker=1):
    queue = EventQueue()
    ex = ScriptedExecutor(queue, score, fallback_score)
    arts = ArtifactManager()
    rt = LoopRuntime(lambda node, exclude: worker, ex, lambda n, a, t: audit(n, a, t), Journal(), queue, arts)
    return rt, ex


def excellent_registry(n=12, seed=0):
    return synthesize_population(n, 1, seed, spec=PopulationSpec(archetypes=(Archetype.EXCELLENT,)))


def sim_runtime(reg, journal, root=None, seed=0, chooser=None):
    q = domain_center(0, reg.dim)
    queue = EventQueue(chooser)
    arts = ArtifactManager(root)
    ex = SimExecutor(reg, arts, queue, seed)
    ev = EvaluatorConfig(seed=seed)
    dispatcher = lambda node, exclude: dispatch(node, q, reg, {}, model(), exclude).winner  # noqa: E731
    return LoopRuntime(dispatcher, ex, lambda n, a, t: audit(n, a, t, ev), journal, queue, arts)


def terminal_checksums(state, arts):
    out = {}
    for nid in sorted(state.outputs):
        for p in state.outputs[nid]:
            out[p] = arts.resolve(LogicalPath.parse(p)).checksum
    return out


def chain_run(reg, workdir: Path, crash_after=None):
    """Run a chain3 workflow with an on-disk journal; on a crash, restart and resume.

    Returns (final state, terminal artifact checksums, appends before the crash).
    """
    workdir.mkdir(parents=True, exist_ok=True)
    jpath = workdir / "journal.bin"
    root = workdir / "ws"
    journal = Journal(jpath, crash_after=crash_after)
    rt = sim_runtime(reg, journal, root)
    state = WorkflowState("s1", plan("chain3: crash sweep", {"format": ".md"}))
    try:
        final = run_loop(state, rt)
        return final, terminal_checksums(final, rt.artifacts), journal.appends
    except JournalWriteError:
        pass
    crashed_at = journal.appends
    reopened = Journal.open(jpath)
    rt2 = sim_runtime(reg, reopened, root)
    try:
        final = resume(reopened, "s1", rt2)
    except UnknownSession:
        final = run_loop(WorkflowState("s1", plan("chain3: crash sweep", {"format": ".md"})), rt2)
    return final, terminal_checksums(final, rt2.artifacts), crashed_at
