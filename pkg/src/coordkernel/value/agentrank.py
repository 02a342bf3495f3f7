"""Signed delegation graph and the damped credit fixpoint over it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

DAMPING = 0.85
BASE_CREDIT = 100.0


class Polarity(Enum):
    POSITIVE = "+"
    NEGATIVE = "-"


@dataclass(frozen=True)
class SignedEdge:
    src: int  # delegator j
    dst: int  # worker i
    task_id: str
    polarity: Polarity
    weight: float

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"edge weight must be > 0, got {self.weight}")


@dataclass
class CreditGraph:
    agents: set[int] = field(default_factory=set)
    edges: list[SignedEdge] = field(default_factory=list)
    damping: float = DAMPING
    base: float = BASE_CREDIT

    def __post_init__(self):
        if not 0.0 < self.damping < 1.0:
            raise ValueError("damping must lie strictly between 0 and 1")
        self._weights: dict[tuple[int, int, Polarity], list[float]] = {}
        for e in self.edges:
            self._index(e)

    def add_agent(self, agent_id: int) -> None:
        self.agents.add(agent_id)

    def add_edge(self, edge: SignedEdge) -> None:
        self.agents.add(edge.src)
        self.agents.add(edge.dst)
        self.edges.append(edge)
        self._index(edge)

    def _index(self, e: SignedEdge) -> None:
        self.agents.add(e.src)
        self.agents.add(e.dst)
        self._weights.setdefault((e.src, e.dst, e.polarity), []).append(e.weight)

    def nodes(self) -> list[int]:
        return sorted(self.agents)

    def weight_matrices(self) -> tuple[list[int], np.ndarray, np.ndarray]:
        """Aggregated positive and negative weights W[j, i] in canonical node order.

        Parallel edges are summed with ``math.fsum``, which is correctly
        rounded and therefore independent of insertion order.
        """
        nodes = self.nodes()
        index = {a: k for k, a in enumerate(nodes)}
        n = len(nodes)
        pos = np.zeros((n, n))
        neg = np.zeros((n, n))
        for (src, dst, pol), ws in self._weights.items():
            m = pos if pol is Polarity.POSITIVE else neg
            m[index[src], index[dst]] = math.fsum(ws)
        return nodes, pos, neg


@dataclass
class AgentRankResult:
    credits: dict[int, float]
    iterations: int
    converged: bool
    residual: float


def transition_operator(pos: np.ndarray, neg: np.ndarray) -> np.ndarray:
    """Signed, row-normalized operator A with C_next = (1-d) b + d A^T C.

    Positive and negative flows are normalized separately over each
    delegator's own positive (resp. negative) out-weight; a delegator with
    no out-weight of one polarity contributes nothing to that term.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        p_out = pos.sum(1, keepdims=True)
        n_out = neg.sum(1, keepdims=True)
        pn = np.where(p_out > 0, pos / np.where(p_out > 0, p_out, 1.0), 0.0)
        nn = np.where(n_out > 0, neg / np.where(n_out > 0, n_out, 1.0), 0.0)
    return pn - nn


def agentrank(
    graph: CreditGraph,
    epsilon: float = 1e-6,
    max_iter: int = 100,
    base: dict[int, float] | None = None,
) -> AgentRankResult:
    """Iterate the signed damped random-walk credit update to a fixpoint.

    ``C_{t+1}(i) = (1-d) b_i + d * sum_j w+_{j->i} C_t(j) / W+_j
    - d * sum_j w-_{j->i} C_t(j) / W-_j``, starting from ``C_0 = b``.
    Stops when the max absolute change drops below ``epsilon``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    nodes, pos, neg = graph.weight_matrices()
    if not nodes:
        return AgentRankResult({}, 0, True, 0.0)
    d = graph.damping
    b = np.array([graph.base if base is None else base.get(a, graph.base) for a in nodes])
    at = transition_operator(pos, neg).T
    c = b.copy()
    residual = float("inf")
    it = 0
    for it in range(1, max_iter + 1):
        # (1-d) b + d A^T c, arranged so the empty-sum case is exactly b - d b
        nxt = b + d * (at @ c - b)
        residual = float(np.abs(nxt - c).max())
        c = nxt
        if residual < epsilon:
            break
    return AgentRankResult(dict(zip(nodes, c.tolist())), it, residual < epsilon, residual)


def agentrank_direct(graph: CreditGraph) -> dict[int, float]:
    """Solve the fixpoint ``(I - d A^T) C = (1-d) b`` directly (reference path)."""
    nodes, pos, neg = graph.weight_matrices()
    if not nodes:
        return {}
    d = graph.damping
    n = len(nodes)
    a = transition_operator(pos, neg)
    sol = np.linalg.solve(np.eye(n) - d * a.T, np.full(n, (1.0 - d) * graph.base))
    return dict(zip(nodes, sol.tolist()))


def feedback_edge(task_id: str, delegator: int, worker: int, score: int, threshold: int) -> SignedEdge:
    """Positive edge weighted by the score at or above threshold, else a negative
    edge weighted ``threshold - score + 1``."""
    if score >= threshold:
        return SignedEdge(delegator, worker, task_id, Polarity.POSITIVE, float(score) if score > 0 else 1.0)
    return SignedEdge(delegator, worker, task_id, Polarity.NEGATIVE, float(threshold - score + 1))


def record_feedback(
    graph: CreditGraph,
    task_id: str,
    delegator: int,
    worker: int,
    score: int,
    threshold: int = 6,
    chain=None,
    signers: Iterable = (),
) -> CreditGraph:
    edge = feedback_edge(task_id, delegator, worker, score, threshold)
    graph.add_edge(edge)
    if chain is not None:
        from .mandate import Phase

        chain.append(
            Phase.FEEDBACK,
            [("task_id", task_id), ("delegator", delegator), ("worker", worker),
             ("score", int(score)), ("polarity", edge.polarity.value), ("weight", int(edge.weight))],
            signers,
        )
    return graph
