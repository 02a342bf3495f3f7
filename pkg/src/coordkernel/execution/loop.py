"""Event-driven persistent work loop.

The loop dispatches every executable node, persists, and then sleeps until a
worker-finished event arrives. It never polls executors: all progress comes
from the event queue.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Protocol

from ..orchestration import (
    ControlPolicy,
    DecisionKind,
    NodeState,
    TaskNode,
    decide,
    executable_nodes,
    modify_graph,
    synthesize_directive,
)
from ..substrate import AgentProfile, AgentRegistry
from .artifacts import ArtifactManager, LogicalPath, NotReady
from .evaluation import EvaluationReport
from .journal import Journal, RecordType, Status, WorkflowState, persist, rehydrate
from .worker import WorkerOutput, simulate_worker

log = logging.getLogger(__name__)

ORCHESTRATOR = None  # assignment marker for the orchestrator's own fallback execution


@dataclass(frozen=True)
class WorkerFinished:
    session_id: str
    node_id: str
    attempt: int
    worker: int | None
    text: str
    outputs: tuple[str, ...] = ()

    @property
    def key(self) -> str:
        return f"{self.node_id}#{self.attempt}"


class EventQueue:
    """Ordered in-process event queue; ``chooser`` picks which pending event is delivered next."""

    def __init__(self, chooser: Callable[[list[WorkerFinished]], int] | None = None):
        self._items: deque[WorkerFinished] = deque()
        self.chooser = chooser

    def push(self, event: WorkerFinished) -> None:
        self._items.append(event)

    def pop(self) -> WorkerFinished | None:
        if not self._items:
            return None
        if self.chooser is None:
            return self._items.popleft()
        i = self.chooser(list(self._items))
        ev = self._items[i]
        del self._items[i]
        return ev

    def __len__(self) -> int:
        return len(self._items)


class Dispatcher(Protocol):
    def __call__(self, node: TaskNode, exclude: set[int]) -> int | None: ...


class Executor(Protocol):
    def submit(self, session_id: str, node: TaskNode, worker: int | None, attempt: int, note: str | None) -> None: ...


Evaluator = Callable[[TaskNode, list, str], EvaluationReport]


@dataclass
class LoopCounters:
    executor_calls: int = 0
    evaluator_calls: int = 0
    dormant_calls: int = 0
    dormancies: int = 0


class SimExecutor:
    """Runs simulated workers immediately and reports completion through the queue.

    ``offline(node_id, attempt, worker)`` may force a worker offline before it
    produces anything; the orchestrator fallback is never forced offline.
    """

    def __init__(
        self,
        registry: AgentRegistry,
        artifacts: ArtifactManager,
        queue: EventQueue,
        seed: int = 0,
        fallback_agent: AgentProfile | None = None,
        offline: Callable[[str, int, int], bool] | None = None,
    ):
        self.registry = registry
        self.artifacts = artifacts
        self.queue = queue
        self.seed = seed
        self.fallback_agent = fallback_agent
        self.offline = offline
        self.calls = 0
        self.fallback_calls = 0
        self.state_probe: Callable[[], Status] | None = None

    def submit(self, session_id: str, node: TaskNode, worker: int | None, attempt: int, note: str | None) -> None:
        self.calls += 1
        if worker is ORCHESTRATOR:
            self.fallback_calls += 1
            agent = self.fallback_agent
            if agent is None:
                self.queue.push(WorkerFinished(session_id, node.node_id, attempt, None, "no fallback executor"))
                return
        else:
            agent = self.registry.lookup(worker)
            if self.offline is not None and self.offline(node.node_id, attempt, worker):
                self.queue.push(WorkerFinished(session_id, node.node_id, attempt, worker, "worker offline"))
                return
        out = simulate_worker(synthesize_directive(node, agent, note), agent, node, self.seed, attempt)
        self._deliver(session_id, node, attempt, worker, out)

    def _deliver(self, session_id: str, node: TaskNode, attempt: int, worker, out: WorkerOutput) -> None:
        paths = []
        for name, data in sorted(out.artifacts.items()):
            lp = LogicalPath.for_output(session_id, node.node_id, name)
            self.artifacts.materialize(lp, data)
            paths.append(str(lp))
        self.queue.push(WorkerFinished(session_id, node.node_id, attempt, worker, out.text, tuple(paths)))


@dataclass
class LoopRuntime:
    dispatcher: Dispatcher
    executor: Executor
    evaluator: Evaluator
    journal: Journal
    events: EventQueue
    artifacts: ArtifactManager
    policy: ControlPolicy = field(default_factory=ControlPolicy)
    counters: LoopCounters = field(default_factory=LoopCounters)


class Deadlock(RuntimeError):
    pass


def _nudge(state: WorkflowState, text: str, **extra) -> None:
    state.context.append({"nudge": text, **extra})


def _submit(rt: LoopRuntime, state: WorkflowState, node: TaskNode, worker, note=None) -> None:
    if state.status is Status.DORMANT:
        rt.counters.dormant_calls += 1
    rt.counters.executor_calls += 1
    rt.executor.submit(state.session_id, node, worker, state.attempts[node.node_id], note)


def _dispatch(rt: LoopRuntime, state: WorkflowState, nid: str, same_worker: bool = False) -> None:
    node = state.dag.nodes[nid]
    state.attempts[nid] = state.attempts.get(nid, 0) + 1
    if same_worker:
        worker = state.assignments[nid]
    else:
        worker = rt.dispatcher(node, set(state.exclusions.get(nid, [])))
    node.transition(NodeState.DISPATCHED)
    note = state.notes.get(nid) if same_worker else None
    if worker is None:
        # empty market: the orchestrator executes the node itself
        state.fallbacks += 1
        state.assignments[nid] = ORCHESTRATOR
        state.context.append({"decision": "Fallback", "node": nid, "reason": "no-winner"})
    else:
        state.dispatches += 1
        state.assignments[nid] = worker
    persist(state, rt.journal)
    _submit(rt, state, node, state.assignments[nid], note)


def _fallback(rt: LoopRuntime, state: WorkflowState, nid: str) -> None:
    node = state.dag.nodes[nid]
    state.attempts[nid] = state.attempts.get(nid, 0) + 1
    state.fallbacks += 1
    state.assignments[nid] = ORCHESTRATOR
    node.transition(NodeState.DISPATCHED)
    persist(state, rt.journal)
    _submit(rt, state, node, ORCHESTRATOR)


def _collect(rt: LoopRuntime, ev: WorkerFinished) -> list:
    out = []
    for p in ev.outputs:
        try:
            rec = rt.artifacts.resolve(LogicalPath.parse(p))
        except NotReady:
            continue
        out.append((rec, rt.artifacts.read(rec)))
    return out


def _handle(rt: LoopRuntime, state: WorkflowState, ev: WorkerFinished) -> None:
    if ev.key in state.handled or ev.node_id not in state.dag.nodes:
        return  # duplicate delivery
    node = state.dag.nodes[ev.node_id]
    if node.state is not NodeState.DISPATCHED or state.attempts.get(ev.node_id) != ev.attempt:
        return  # stale attempt
    state.handled.append(ev.key)
    state.steps += 1
    rt.counters.evaluator_calls += 1
    report = rt.evaluator(node, _collect(rt, ev), ev.text)
    state.audits += 1
    if report.passed:
        node.transition(NodeState.COMPLETED)
        state.outputs[ev.node_id] = list(ev.outputs)
        _nudge(state, f"Node {ev.node_id} finished. Continue plan.", score=report.score)
    else:
        state.errors += 1
        node.transition(NodeState.FAILED)
        _nudge(state, f"Node {ev.node_id} failed. Decide: Retry or Modify?", score=report.score)
    was_fallback = ev.worker is ORCHESTRATOR
    if report.passed:
        state.context.append({"decision": DecisionKind.CONTINUE.value, "node": ev.node_id})
        return
    if was_fallback:
        state.status = Status.FAILED_TERMINAL
        state.context.append({"decision": "Terminal", "node": ev.node_id})
        return
    retries = state.retry_counts.get(ev.node_id, 0)
    decision = decide(report, state.dag, retries, rt.policy)
    state.context.append({"decision": decision.kind.value, "node": ev.node_id})
    if decision.kind is DecisionKind.RETRY_REFINE:
        state.retry_counts[ev.node_id] = retries + 1
        state.notes[ev.node_id] = decision.payload
        _dispatch(rt, state, ev.node_id, same_worker=True)
    elif decision.kind is DecisionKind.RETRY_REDISPATCH:
        state.retry_counts[ev.node_id] = retries + 1
        if ev.worker is not None:
            state.exclusions.setdefault(ev.node_id, []).append(ev.worker)
        _dispatch(rt, state, ev.node_id)
    elif decision.kind is DecisionKind.MODIFY:
        sub = decision.payload
        state.dag = modify_graph(state.dag, sub.prune, sub)
    elif decision.kind is DecisionKind.FALLBACK:
        _fallback(rt, state, ev.node_id)


def run_loop(state: WorkflowState, rt: LoopRuntime, max_events: int = 100_000) -> WorkflowState:
    """Drive ``state`` to Completed or FailedTerminal."""
    handled = 0
    while True:
        if state.status is Status.FAILED_TERMINAL:
            break
        if state.dag.is_complete():
            state.status = Status.COMPLETED
            break
        state.status = Status.RUNNING
        for nid in executable_nodes(state.dag):
            _dispatch(rt, state, nid)
        if state.status is Status.FAILED_TERMINAL or state.dag.is_complete():
            continue
        if not executable_nodes(state.dag):
            state.status = Status.DORMANT
            rt.counters.dormancies += 1
            persist(state, rt.journal)
            ev = rt.events.pop()
            if ev is None:
                raise Deadlock(f"session {state.session_id} is dormant with no pending events")
            rt.journal.append_json(RecordType.EVENT, {"session_id": ev.session_id, "key": ev.key, "worker": ev.worker})
            state.status = Status.RUNNING
            _handle(rt, state, ev)
            handled += 1
            if handled > max_events:
                raise RuntimeError("event budget exhausted")
    persist(state, rt.journal)
    return state


def resume(journal: Journal, session_id: str, rt: LoopRuntime) -> WorkflowState:
    """Rehydrate after a restart and resubmit in-flight work whose completion was lost."""
    state = rehydrate(journal, session_id)
    for nid in sorted(state.dag.nodes):
        node = state.dag.nodes[nid]
        if node.state is NodeState.DISPATCHED and f"{nid}#{state.attempts[nid]}" not in state.handled:
            rt.counters.executor_calls += 1
            rt.executor.submit(session_id, node, state.assignments[nid], state.attempts[nid], state.notes.get(nid))
    return run_loop(state, rt)
