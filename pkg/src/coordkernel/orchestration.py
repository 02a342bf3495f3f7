"""Abstract task DAGs, their validation, and the control primitives that drive them.

Nodes describe *what* must be done, never *who* does it; a worker is bound
only at dispatch time, when :func:`synthesize_directive` renders the concrete
instruction.
"""

from __future__ import annotations

import copy
import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Protocol

if TYPE_CHECKING:
    from .substrate import AgentProfile

ACCEPT_THRESHOLD = 6
REFINE_BAND = 2
R_MAX = 3


class NodeState(Enum):
    PENDING = "Pending"
    DISPATCHED = "Dispatched"
    COMPLETED = "Completed"
    FAILED = "Failed"


_ALLOWED = {
    NodeState.PENDING: {NodeState.DISPATCHED},
    NodeState.DISPATCHED: {NodeState.COMPLETED, NodeState.FAILED},
    NodeState.FAILED: {NodeState.DISPATCHED},
    NodeState.COMPLETED: set(),
}


class IllegalTransition(RuntimeError):
    pass


class ImmutabilityViolation(RuntimeError):
    pass


class DagValidationError(ValueError):
    def __init__(self, report: "ValidationReport"):
        super().__init__(f"invalid DAG; offending nodes {report.offending_nodes}")
        self.report = report


class NoTemplate(KeyError):
    pass


class PlanningFailed(RuntimeError):
    pass


class UnknownNode(KeyError):
    pass


@dataclass
class TaskNode:
    node_id: str
    desc: str
    skill: str = "general"
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    constraints: dict[str, Any] = field(default_factory=dict)
    state: NodeState = NodeState.PENDING

    def __post_init__(self):
        if not self.node_id:
            raise ValueError("node_id must be non-empty")
        if not self.desc:
            raise ValueError(f"node {self.node_id}: desc must be non-empty")
        self.inputs = tuple(self.inputs)
        self.outputs = tuple(self.outputs)

    def transition(self, new: NodeState) -> None:
        if new not in _ALLOWED[self.state]:
            raise IllegalTransition(f"{self.node_id}: {self.state.value} -> {new.value}")
        self.state = new

    @property
    def budget_cap(self) -> int:
        return int(self.constraints.get("budget_cap", 0))

    @property
    def scope(self) -> str | None:
        return self.constraints.get("scope")

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "desc": self.desc,
            "skill": self.skill,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "constraints": self.constraints,
            "state": self.state.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TaskNode":
        return cls(
            node_id=d["node_id"],
            desc=d["desc"],
            skill=d.get("skill", "general"),
            inputs=tuple(d.get("inputs", ())),
            outputs=tuple(d.get("outputs", ())),
            constraints=dict(d.get("constraints", {})),
            state=NodeState(d.get("state", "Pending")),
        )


@dataclass
class TaskDag:
    nodes: dict[str, TaskNode] = field(default_factory=dict)
    edges: set[tuple[str, str]] = field(default_factory=set)
    global_constraints: dict[str, Any] = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    retired: set[str] = field(default_factory=set)

    def add_node(self, node: TaskNode) -> None:
        if node.node_id in self.nodes:
            raise ValueError(f"duplicate node_id {node.node_id}")
        self.nodes[node.node_id] = node

    def add_edge(self, src: str, dst: str) -> None:
        for n in (src, dst):
            if n not in self.nodes:
                raise UnknownNode(n)
        self.edges.add((src, dst))

    def node(self, node_id: str) -> TaskNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def predecessors(self, node_id: str) -> list[str]:
        return sorted(u for u, v in self.edges if v == node_id)

    def successors(self, node_id: str) -> list[str]:
        return sorted(v for u, v in self.edges if u == node_id)

    def live_nodes(self) -> list[TaskNode]:
        return [self.nodes[k] for k in sorted(self.nodes) if k not in self.retired]

    def is_complete(self) -> bool:
        return all(n.state is NodeState.COMPLETED for n in self.live_nodes())

    def pending_count(self) -> int:
        return sum(n.state is not NodeState.COMPLETED for n in self.live_nodes())

    def copy(self) -> "TaskDag":
        return copy.deepcopy(self)

    # canonical text form: stable key order, UTF-8, no incidental whitespace
    def to_dict(self) -> dict:
        return {
            "nodes": [self.nodes[k].to_dict() for k in sorted(self.nodes)],
            "edges": sorted([u, v] for u, v in self.edges),
            "global_constraints": self.global_constraints,
            "history": self.history,
            "retired": sorted(self.retired),
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TaskDag":
        dag = cls(global_constraints=dict(d.get("global_constraints", {})))
        for nd in d["nodes"]:
            dag.add_node(TaskNode.from_dict(nd))
        for u, v in d["edges"]:
            dag.add_edge(u, v)
        dag.history = list(d.get("history", []))
        dag.retired = set(d.get("retired", []))
        return dag

    @classmethod
    def from_text(cls, text: str) -> "TaskDag":
        return cls.from_dict(json.loads(text))


def build_dag(node_ids: Iterable[str], edges: Iterable[tuple[str, str]], **node_kw) -> TaskDag:
    """Convenience constructor: one node per id with a generated description."""
    dag = TaskDag()
    for nid in node_ids:
        dag.add_node(TaskNode(nid, f"step {nid}", **node_kw))
    for u, v in edges:
        dag.add_edge(u, v)
    return dag


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    valid: bool
    topo_order: list[str] | None
    offending_nodes: list[str]


def validate_dag(dag: TaskDag) -> ValidationReport:
    """Kahn's algorithm (ties by node_id) plus reachability from zero in-degree nodes."""
    ids = sorted(dag.nodes)
    indeg = {n: 0 for n in ids}
    succ: dict[str, list[str]] = {n: [] for n in ids}
    for u, v in dag.edges:
        succ[u].append(v)
        indeg[v] += 1
    sources = [n for n in ids if indeg[n] == 0]

    remaining = dict(indeg)
    heap = list(sources)
    heapq.heapify(heap)
    order: list[str] = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for m in succ[n]:
            remaining[m] -= 1
            if remaining[m] == 0:
                heapq.heappush(heap, m)

    reached = set(sources)
    queue = deque(sources)
    while queue:
        n = queue.popleft()
        for m in succ[n]:
            if m not in reached:
                reached.add(m)
                queue.append(m)

    consumed = set(order)
    offending = sorted(n for n in ids if n not in consumed or n not in reached)
    if offending:
        return ValidationReport(False, None, offending)
    return ValidationReport(True, order, [])


def require_valid(dag: TaskDag) -> list[str]:
    report = validate_dag(dag)
    if not report.valid:
        raise DagValidationError(report)
    return report.topo_order


# ---------------------------------------------------------------------------
# planning


class PlannerPolicy(Protocol):
    def propose(self, intent: str, constraints: Mapping[str, Any], attempt: int) -> TaskDag: ...


_DEFAULT_TEMPLATES: dict[str, dict] = {
    "single": {"nodes": ["A"], "edges": []},
    "chain3": {"nodes": ["A", "B", "C"], "edges": [["A", "B"], ["B", "C"]]},
    "diamond": {"nodes": ["A", "B", "C", "D"], "edges": [["A", "B"], ["A", "C"], ["B", "D"], ["C", "D"]]},
    "fanout": {
        "nodes": ["A", "B1", "B2", "B3", "C"],
        "edges": [["A", "B1"], ["A", "B2"], ["A", "B3"], ["B1", "C"], ["B2", "C"], ["B3", "C"]],
    },
}


def intent_tag(intent: str) -> str:
    return intent.strip().split(":", 1)[0].split()[0].lower()


class TemplatePlanner:
    """Maps the leading intent tag to a stored template.

    A template is ``{"nodes": [id | {"id", "desc", "skill", "outputs", ...}], "edges": [[u, v], ...]}``.
    """

    def __init__(self, templates: Mapping[str, Mapping] | None = None):
        self.templates = dict(_DEFAULT_TEMPLATES)
        if templates:
            self.templates.update(templates)

    def propose(self, intent: str, constraints: Mapping[str, Any], attempt: int = 0) -> TaskDag:
        tag = intent_tag(intent)
        if tag not in self.templates:
            raise NoTemplate(tag)
        tpl = self.templates[tag]
        dag = TaskDag(global_constraints=dict(constraints))
        node_constraints = {k: v for k, v in constraints.items() if k in ("budget_cap", "scope", "format")}
        for spec in tpl["nodes"]:
            if isinstance(spec, str):
                spec = {"id": spec}
            nid = spec["id"]
            dag.add_node(
                TaskNode(
                    node_id=nid,
                    desc=spec.get("desc", f"{tag} step {nid}: {intent.strip()}"),
                    skill=spec.get("skill", constraints.get("skill", "general")),
                    inputs=tuple(spec.get("inputs", ())),
                    outputs=tuple(spec.get("outputs", (f"result/{nid.lower()}.md",))),
                    constraints={**node_constraints, **spec.get("constraints", {})},
                )
            )
        for u, v in tpl["edges"]:
            dag.add_edge(u, v)
        return dag


def plan(intent: str, constraints: Mapping[str, Any] | None = None, planner: PlannerPolicy | None = None) -> TaskDag:
    """Blind planning: produce a validated DAG without agent bindings.

    An invalid proposal gets exactly one regeneration; a second invalid one
    raises :class:`PlanningFailed`.
    """
    if not intent or not intent.strip():
        raise ValueError("intent must be non-empty")
    planner = planner or TemplatePlanner()
    constraints = dict(constraints or {})
    last = None
    for attempt in range(2):
        dag = planner.propose(intent, constraints, attempt)
        last = validate_dag(dag)
        if last.valid:
            dag.history.append({"op": "plan", "intent": intent, "regenerations": attempt})
            return dag
    raise PlanningFailed(f"planner produced invalid DAGs twice; offending {last.offending_nodes}")


def executable_nodes(dag: TaskDag) -> list[str]:
    """Pending nodes whose predecessors are all Completed, sorted by node_id."""
    preds: dict[str, list[str]] = {n: [] for n in dag.nodes}
    for u, v in dag.edges:
        preds[v].append(u)
    return [
        nid
        for nid in sorted(dag.nodes)
        if nid not in dag.retired
        and dag.nodes[nid].state is NodeState.PENDING
        and all(dag.nodes[p].state is NodeState.COMPLETED for p in preds[nid])
    ]


# ---------------------------------------------------------------------------
# control


class DecisionKind(Enum):
    CONTINUE = "Continue"
    RETRY_REFINE = "RetryRefine"
    RETRY_REDISPATCH = "RetryRedispatch"
    MODIFY = "Modify"
    FALLBACK = "Fallback"


@dataclass(frozen=True)
class ControlDecision:
    kind: DecisionKind
    node_id: str
    payload: Any = None


@dataclass(frozen=True)
class ControlPolicy:
    threshold: int = ACCEPT_THRESHOLD
    refine_band: int = REFINE_BAND
    r_max: int = R_MAX
    allow_modify: bool = False
    max_modify_depth: int = 1


MODIFY_MARK = "~m"


def modify_depth(node_id: str) -> int:
    return node_id.count(MODIFY_MARK)


def decide(report, dag: TaskDag, retry_count: int, policy: ControlPolicy = ControlPolicy()) -> ControlDecision:
    """Default deterministic control policy over an evaluation report."""
    nid = report.node_id
    if nid not in dag.nodes:
        raise UnknownNode(nid)
    score = report.score
    if score >= policy.threshold:
        return ControlDecision(DecisionKind.CONTINUE, nid)
    if retry_count < policy.r_max:
        if score >= policy.threshold - policy.refine_band:
            note = f"Score {score}/10 is below {policy.threshold}; address the evaluator's notes and resubmit."
            return ControlDecision(DecisionKind.RETRY_REFINE, nid, note)
        return ControlDecision(DecisionKind.RETRY_REDISPATCH, nid)
    if policy.allow_modify and modify_depth(nid) < policy.max_modify_depth:
        return ControlDecision(DecisionKind.MODIFY, nid, replacement_subgraph(dag, nid))
    return ControlDecision(DecisionKind.FALLBACK, nid)


@dataclass
class Subgraph:
    """Graft payload: new nodes, edges touching them, and failed nodes they replace."""

    nodes: list[TaskNode] = field(default_factory=list)
    edges: list[tuple[str, str]] = field(default_factory=list)
    replaces: dict[str, str] = field(default_factory=dict)
    prune: set[str] = field(default_factory=set)


def replacement_subgraph(dag: TaskDag, failed: str) -> Subgraph:
    """Replace ``failed`` by a fresh copy and re-create its pending descendants under new ids."""
    depth = modify_depth(failed) + 1
    old = dag.node(failed)

    def fresh(nid: str) -> str:
        base = nid.split(MODIFY_MARK)[0]
        return f"{base}{MODIFY_MARK}{depth}"

    desc: set[str] = set()
    stack = [failed]
    while stack:
        for s in dag.successors(stack.pop()):
            if s not in desc and dag.nodes[s].state is NodeState.PENDING:
                desc.add(s)
                stack.append(s)
    moved = {failed} | desc
    rename = {n: fresh(n) for n in moved}
    new_nodes = []
    for n in sorted(moved):
        src = dag.nodes[n] if n != failed else old
        new_nodes.append(
            TaskNode(rename[n], src.desc, src.skill, src.inputs, src.outputs, dict(src.constraints))
        )
    edges = []
    for u, v in sorted(dag.edges):
        if u in moved or v in moved:
            edges.append((rename.get(u, u), rename.get(v, v)))
    return Subgraph(new_nodes, edges, {failed: rename[failed]}, desc)


def modify_graph(dag: TaskDag, prune: Iterable[str], graft: Subgraph) -> TaskDag:
    """Prune Pending nodes and graft a subgraph; returns a new, revalidated DAG.

    Edges incident to pruned nodes are dropped. Grafted edges may not point
    into an executed node, and ``graft.replaces`` may only retire Failed nodes.
    """
    prune = set(prune) | set(graft.prune)
    for nid in prune:
        node = dag.node(nid)
        if node.state is not NodeState.PENDING:
            raise ImmutabilityViolation(f"cannot prune {nid} in state {node.state.value}")
    for old in graft.replaces:
        if dag.node(old).state is not NodeState.FAILED:
            raise ImmutabilityViolation(f"only Failed nodes can be replaced, {old} is {dag.nodes[old].state.value}")
    out = dag.copy()
    for nid in prune:
        del out.nodes[nid]
    out.edges = {(u, v) for u, v in out.edges if u not in prune and v not in prune}
    retiring = set(graft.replaces)
    out.edges = {(u, v) for u, v in out.edges if u not in retiring}
    for node in graft.nodes:
        if node.node_id in out.nodes:
            raise ValueError(f"grafted node_id {node.node_id} is not fresh")
        out.add_node(copy.deepcopy(node))
    for u, v in graft.edges:
        if v in out.nodes and out.nodes[v].state is not NodeState.PENDING:
            raise ImmutabilityViolation(f"graft edge {u}->{v} targets executed node {v}")
        out.add_edge(u, v)
    out.retired |= retiring
    _check_executed_untouched(dag, out)
    require_valid(_without(out, out.retired))
    out.history.append(
        {
            "op": "modify",
            "prune": sorted(prune),
            "graft": sorted(n.node_id for n in graft.nodes),
            "replaces": dict(sorted(graft.replaces.items())),
        }
    )
    return out


def _without(dag: TaskDag, drop: set[str]) -> TaskDag:
    view = TaskDag(nodes={k: v for k, v in dag.nodes.items() if k not in drop})
    view.edges = {(u, v) for u, v in dag.edges if u not in drop and v not in drop}
    return view


def _check_executed_untouched(before: TaskDag, after: TaskDag) -> None:
    for nid, node in before.nodes.items():
        if node.state is NodeState.PENDING:
            continue
        if after.nodes.get(nid) != node:
            raise ImmutabilityViolation(f"executed node {nid} changed")
        if before.predecessors(nid) != after.predecessors(nid):
            raise ImmutabilityViolation(f"dependencies of executed node {nid} changed")


def synthesize_directive(node: TaskNode, winner: "AgentProfile", note: str | None = None) -> str:
    """Render the concrete instruction for a bound worker."""
    lines = [
        f"Directive for agent {winner.agent_id:#010x} ({winner.genotype.text()})",
        f"Persona: {winner.narrative}",
        f"Task {node.node_id} [{node.skill}]: {node.desc}",
        f"Inputs: {', '.join(node.inputs) or '-'}",
        f"Outputs: {', '.join(node.outputs) or '-'}",
        "Constraints: " + (", ".join(f"{k}={node.constraints[k]}" for k in sorted(node.constraints)) or "-"),
    ]
    if note:
        lines.append(f"Refinement: {note}")
    return "\n".join(lines)
