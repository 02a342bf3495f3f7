import random

import pytest
from hypothesis import given, settings, strategies as st

from coordkernel.orchestration import (
    ControlPolicy,
    DagValidationError,
    DecisionKind,
    IllegalTransition,
    ImmutabilityViolation,
    NodeState,
    NoTemplate,
    PlanningFailed,
    Subgraph,
    TaskDag,
    TaskNode,
    build_dag,
    decide,
    executable_nodes,
    modify_graph,
    plan,
    replacement_subgraph,
    synthesize_directive,
    validate_dag,
)
from coordkernel.substrate import synthesize_population


class _Report:
    def __init__(self, node_id, score):
        self.node_id = node_id
        self.score = score


def random_dag(rng, n, p=0.3):
    order = [f"n{i:02d}" for i in range(n)]
    rng.shuffle(order)
    edges = [(order[i], order[j]) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return build_dag(order, edges), order


def dfs_has_cycle(dag):
    succ = {n: [] for n in dag.nodes}
    for u, v in dag.edges:
        succ[u].append(v)
    color = dict.fromkeys(dag.nodes, 0)
    for root in dag.nodes:
        if color[root]:
            continue
        stack = [(root, iter(succ[root]))]
        color[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = 2
                stack.pop()
            elif color[nxt] == 1:
                return True
            elif color[nxt] == 0:
                color[nxt] = 1
                stack.append((nxt, iter(succ[nxt])))
    return False


def test_chain_is_valid_in_order():
    rep = validate_dag(build_dag("ABC", [("A", "B"), ("B", "C")]))
    assert rep.valid and rep.topo_order == ["A", "B", "C"]


def test_two_cycle_is_invalid():
    rep = validate_dag(build_dag("AB", [("A", "B"), ("B", "A")]))
    assert not rep.valid
    assert set(rep.offending_nodes) == {"A", "B"}
    assert rep.topo_order is None


def test_constructive_generator_and_back_edges():
    rng = random.Random(1)
    for _ in range(1000):
        n = rng.randint(2, 12)
        dag, order = random_dag(rng, n)
        rep = validate_dag(dag)
        assert rep.valid
        pos = {x: i for i, x in enumerate(rep.topo_order)}
        assert all(pos[u] < pos[v] for u, v in dag.edges)
        i, j = sorted(rng.sample(range(n), 2))
        dag.add_edge(order[i], order[j])
        dag.add_edge(order[j], order[i])
        assert not validate_dag(dag).valid


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 9), st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), max_size=20))
def test_kahn_agrees_with_dfs(n, raw):
    ids = [f"v{i}" for i in range(n)]
    edges = {(ids[a % n], ids[b % n]) for a, b in raw if a % n != b % n}
    dag = build_dag(ids, edges)
    assert validate_dag(dag).valid == (not dfs_has_cycle(dag))


def test_self_loop_invalid():
    dag = build_dag("A", [])
    dag.edges.add(("A", "A"))
    assert not validate_dag(dag).valid


def test_plan_templates():
    dag = plan("chain3: write a report")
    assert sorted(dag.nodes) == ["A", "B", "C"]
    assert validate_dag(dag).valid
    d = plan("diamond merge results")
    assert d.edges == {("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")}


def test_plan_unknown_template():
    with pytest.raises(NoTemplate):
        plan("nonsense thing")


class _CyclicThenValid:
    def __init__(self, bad_times=1):
        self.calls = 0
        self.bad_times = bad_times

    def propose(self, intent, constraints, attempt):
        self.calls += 1
        if self.calls <= self.bad_times:
            return build_dag("AB", [("A", "B"), ("B", "A")])
        return build_dag("AB", [("A", "B")])


def test_plan_regenerates_exactly_once():
    stub = _CyclicThenValid()
    dag = plan("anything", planner=stub)
    assert stub.calls == 2
    assert dag.history[-1]["regenerations"] == 1


def test_plan_fails_after_second_invalid():
    with pytest.raises(PlanningFailed):
        plan("anything", planner=_CyclicThenValid(bad_times=2))


def test_executable_frontier():
    chain = build_dag("ABC", [("A", "B"), ("B", "C")])
    assert executable_nodes(chain) == ["A"]
    dia = plan("diamond x")
    dia.node("A").transition(NodeState.DISPATCHED)
    dia.node("A").transition(NodeState.COMPLETED)
    assert executable_nodes(dia) == ["B", "C"]


def test_executable_matches_brute_force():
    rng = random.Random(5)
    for _ in range(50):
        dag, _ = random_dag(rng, 20, 0.15)
        order = validate_dag(dag).topo_order
        for nid in order[: rng.randint(0, 20)]:
            dag.node(nid).state = NodeState.COMPLETED
        brute = sorted(
            n for n, node in dag.nodes.items()
            if node.state is NodeState.PENDING
            and all(dag.nodes[u].state is NodeState.COMPLETED for u, v in dag.edges if v == n)
        )
        assert executable_nodes(dag) == brute


def test_illegal_transition():
    node = TaskNode("A", "d")
    with pytest.raises(IllegalTransition):
        node.transition(NodeState.COMPLETED)


def test_decide_rules():
    dag = build_dag("A", [])
    assert decide(_Report("A", 8), dag, 0).kind is DecisionKind.CONTINUE
    assert decide(_Report("A", 6), dag, 0).kind is DecisionKind.CONTINUE
    assert decide(_Report("A", 5), dag, 0).kind is DecisionKind.RETRY_REFINE
    assert decide(_Report("A", 2), dag, 0).kind is DecisionKind.RETRY_REDISPATCH
    assert decide(_Report("A", 2), dag, 3).kind is DecisionKind.FALLBACK
    assert decide(_Report("A", 2), dag, 3, ControlPolicy(allow_modify=True)).kind is DecisionKind.MODIFY


def test_modify_prune_and_graft():
    dag = build_dag("ABC", [("A", "B"), ("B", "C")])
    graft = Subgraph([TaskNode("C2", "redo C")], [("B", "C2")])
    out = modify_graph(dag, {"C"}, graft)
    assert sorted(out.nodes) == ["A", "B", "C2"]
    assert out.edges == {("A", "B"), ("B", "C2")}
    assert "C" in dag.nodes


def test_modify_cannot_prune_completed():
    dag = build_dag("ABC", [("A", "B"), ("B", "C")])
    dag.node("A").state = NodeState.COMPLETED
    with pytest.raises(ImmutabilityViolation):
        modify_graph(dag, {"A"}, Subgraph())


def test_modify_rejects_edge_into_completed():
    dag = build_dag("AB", [("A", "B")])
    dag.node("A").state = NodeState.COMPLETED
    with pytest.raises((ImmutabilityViolation, DagValidationError)):
        modify_graph(dag, set(), Subgraph([TaskNode("X", "x")], [("X", "A")]))


def test_modify_rejects_cycle():
    dag = build_dag("AB", [("A", "B")])
    with pytest.raises(DagValidationError):
        modify_graph(dag, set(), Subgraph([TaskNode("X", "x")], [("B", "X"), ("X", "A")]))


def test_replacement_subgraph_retires_failed():
    dag = build_dag("ABC", [("A", "B"), ("B", "C")])
    dag.node("A").state = NodeState.COMPLETED
    dag.node("B").state = NodeState.FAILED
    sub = replacement_subgraph(dag, "B")
    out = modify_graph(dag, (), sub)
    assert "B" in out.retired
    assert out.node("A") == dag.node("A")
    assert executable_nodes(out) == ["B~m1"]


def test_directive_contract():
    reg = synthesize_population(2, 1, 0)
    a, b = list(reg)
    node = TaskNode("T1", "Summarize the quarterly figures", outputs=("out.md",))
    t1 = synthesize_directive(node, a)
    assert t1 == synthesize_directive(node, a)
    assert node.desc in t1 and f"{a.agent_id:#010x}" in t1
    t2 = synthesize_directive(node, b)
    diff = [(x, y) for x, y in zip(t1.splitlines(), t2.splitlines()) if x != y]
    assert diff and all(not x.startswith("Task ") for x, _ in diff)


def test_dag_text_round_trip():
    dag = plan("fanout: gather")
    assert TaskDag.from_text(dag.to_text()) == dag
