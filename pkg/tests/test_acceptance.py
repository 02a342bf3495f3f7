"""Acceptance criteria at full scale. Each test prints one PASS/FAIL line.

Runtime limits are checked alongside the numeric targets.
"""

import random
import time
from dataclasses import dataclass

import numpy as np
import pytest

import kit
from coordkernel.execution import Status
from coordkernel.orchestration import build_dag, validate_dag
from coordkernel.simharness.config import ScenarioConfig
from coordkernel.simharness.scenarios import run_scenario
from coordkernel.value.agentrank import CreditGraph, agentrank, agentrank_direct
from coordkernel.value.mandate import KeyRing, MandateChain, Phase, verify_bytes
from test_orchestration import dfs_has_cycle, random_dag
from test_value import _fuzz_graph

pytestmark = pytest.mark.slow


@dataclass
class Outcome:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float
    limit: float

    @property
    def ok(self) -> bool:
        return self.passed and self.seconds <= self.limit

    def line(self) -> str:
        tag = "PASS" if self.ok else "FAIL"
        return f"[{tag}] criterion {self.number} {self.title}: {self.detail} ({self.seconds:.1f}s / {self.limit:.0f}s)"


def _report(capsys, outcome: Outcome) -> None:
    with capsys.disabled():
        print("\n" + outcome.line())
    assert outcome.ok, outcome.line()


def _scenario(capsys, number, title, name, limit):
    t0 = time.perf_counter()
    rep = run_scenario(ScenarioConfig.default(name))
    secs = time.perf_counter() - t0
    failed = [c.line() for c in rep.checks if not c.passed]
    detail = "; ".join(failed) if failed else ", ".join(f"{c.name} {c.detail}".strip() for c in rep.checks)
    _report(capsys, Outcome(number, title, rep.ok, detail, secs, limit))
    return rep


def test_criterion_1_fusion_ordering(capsys):
    _scenario(capsys, 1, "fusion ordering", "ClusterEval", 120)


def test_criterion_2_specialization(capsys):
    _scenario(capsys, 2, "specialization", "Specialization", 120)


def test_criterion_3_economic_alignment(capsys):
    _scenario(capsys, 3, "economic alignment", "EconomyGeneral", 300)


def test_criterion_4_role_selection(capsys):
    _scenario(capsys, 4, "role selection", "EconomyRoles", 300)


def test_criterion_5_dynamic_entry(capsys):
    _scenario(capsys, 5, "dynamic entry", "EconomyMidEntry", 300)


def test_criterion_6_resilience(capsys):
    _scenario(capsys, 6, "resilience flatness", "Resilience", 180)


def test_criterion_7_scale_invariance(capsys):
    t0 = time.perf_counter()
    probe = run_scenario(ScenarioConfig.default("ScalingProbe"))
    needle = run_scenario(ScenarioConfig.default("Needle"))
    secs = time.perf_counter() - t0
    rounds = sorted({v for k, v in needle.summary.items() if k.endswith(".rounds")})
    ok = probe.ok and needle.ok
    detail = f"probe spread {probe.summary['probe_spread']}, needle rounds {rounds}"
    _report(capsys, Outcome(7, "scale invariance", ok, detail, secs, 180))


def test_criterion_8_isolated_agent(capsys):
    t0 = time.perf_counter()
    g = CreditGraph()
    g.add_agent(7)
    c = agentrank(g).credits[7]
    ok = c == 15.0 and agentrank_direct(g)[7] == pytest.approx(15.0, abs=1e-12)
    _report(capsys, Outcome(8, "isolated agent credit", ok, f"C = {c!r}", time.perf_counter() - t0, 60))


@pytest.mark.xfail(strict=True, reason="separately normalized signed flows are not contractive on every graph")
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_criterion_8_fixpoint_matches_direct_solve(capsys):
    # general signed fuzz graphs of up to 10 agents; about 3% have spectral radius of d*A
    # at or above 1, where the iteration diverges and the linear solve has no meaning
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst, diverged = 0.0, 0
    for _ in range(200):
        g = _fuzz_graph(rng)
        it = agentrank(g, epsilon=1e-12, max_iter=5000)
        direct = agentrank_direct(g)
        gap = max(abs(it.credits[a] - direct[a]) for a in direct)
        if not (it.converged and gap <= 1e-6):
            diverged += 1
        elif gap > worst:
            worst = gap
    detail = f"{200 - diverged}/200 graphs agree (worst gap {worst:.2e}), {diverged} non-contractive"
    _report(capsys, Outcome(8, "iterative vs direct solve", diverged == 0, detail, time.perf_counter() - t0, 60))


def _kahn_agrees(rng: random.Random) -> bool:
    n = rng.randint(1, 50)
    if rng.random() < 0.5:
        dag, order = random_dag(rng, n, p=rng.uniform(0.02, 0.3))
        if n > 1 and rng.random() < 0.5:
            # one edge against the construction order may close a cycle
            i, j = sorted(rng.sample(range(n), 2))
            dag.add_edge(order[j], order[i])
    else:
        ids = [f"v{i:02d}" for i in range(n)]
        m = rng.randint(0, 2 * n)
        edges = {(rng.choice(ids), rng.choice(ids)) for _ in range(m)}
        dag = build_dag(ids, {(u, v) for u, v in edges if u != v})
    return validate_dag(dag).valid == (not dfs_has_cycle(dag))


def test_criterion_9_structural_properties(capsys, tmp_path):
    t0 = time.perf_counter()
    rng = random.Random(9)
    disagree = sum(not _kahn_agrees(rng) for _ in range(10_000))

    reg = kit.excellent_registry()
    clean, clean_sums, total = kit.chain_run(reg, tmp_path / "clean")
    sweep_bad = []
    for c in range(total):
        final, sums, _ = kit.chain_run(reg, tmp_path / f"crash{c}", crash_after=c)
        if final.status is not Status.COMPLETED or sums != clean_sums:
            sweep_bad.append(c)

    chain = MandateChain(KeyRing("ed25519"))
    for who in ("user", "worker"):
        chain.keyring.register(who)
    for i, phase in enumerate((Phase.ENTRY, Phase.CREATION, Phase.ORCHESTRATION, Phase.EXECUTION, Phase.SETTLEMENT)):
        chain.append(phase, [("step", i), ("amount", 100 * i)], ["user", "worker"])
    data = chain.to_bytes()
    assert verify_bytes(data).valid
    missed = 0
    for bit in range(len(data) * 8):
        flipped = bytearray(data)
        flipped[bit // 8] ^= 1 << (bit % 8)
        missed += verify_bytes(bytes(flipped)).valid
    ok = disagree == 0 and clean.status is Status.COMPLETED and not sweep_bad and missed == 0
    detail = (f"Kahn/DFS disagreements {disagree}/10000, crash positions failing {len(sweep_bad)}/{total}, "
              f"undetected bit flips {missed}/{len(data) * 8}")
    _report(capsys, Outcome(9, "structural properties", ok, detail, time.perf_counter() - t0, 180))
