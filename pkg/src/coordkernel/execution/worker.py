"""Parametric stand-ins for worker agents.

Each archetype draws an output quality on the 0..10 scale; the output text
carries a ``Score-Hint: q/10`` line that only the simulated evaluator reads.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

from ..orchestration import TaskNode
from ..substrate import AgentProfile, Archetype

MEDIOCRE_FAIL_P = 0.4
MALICIOUS_CEILING = 2.5


@dataclass(frozen=True)
class WorkerOutput:
    text: str
    artifacts: dict[str, bytes] = field(default_factory=dict)
    quality: float | None = None

    @property
    def hard_failure(self) -> bool:
        return self.quality is None


class HashStream:
    """Deterministic uniform/normal draws keyed by arbitrary parts.

    Cheaper to construct than a numpy generator, which matters when one is
    needed per task attempt.
    """

    def __init__(self, *parts):
        self._key = hashlib.blake2b(repr(parts).encode(), digest_size=16).digest()
        self._n = 0

    def uniform(self) -> float:
        block = hashlib.blake2b(self._n.to_bytes(4, "little"), key=self._key, digest_size=8).digest()
        self._n += 1
        return (struct.unpack("<Q", block)[0] >> 11) * (1.0 / 9007199254740992.0)

    def normal(self, mu: float = 0.0, sd: float = 1.0) -> float:
        u1 = max(self.uniform(), 1e-300)
        u2 = self.uniform()
        return mu + sd * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def _clamp(q: float) -> float:
    return min(10.0, max(0.0, q))


def draw_quality(agent: AgentProfile, stream: HashStream) -> float | None:
    """Quality on [0, 10], or None for a hard failure (no deliverable)."""
    a = agent.archetype
    if a is Archetype.EXCELLENT:
        return _clamp(stream.normal(9.0, 0.5))
    if a is Archetype.MEDIOCRE:
        if stream.uniform() < MEDIOCRE_FAIL_P:
            return None
        return _clamp(stream.normal(7.0, 1.0))
    if a is Archetype.MALICIOUS:
        # bounded well below the acceptance band
        return min(MALICIOUS_CEILING, _clamp(stream.normal(1.0, 0.5)))
    if a is Archetype.WEAK:
        return _clamp(stream.normal(1.5, 1.0))
    return _clamp(stream.normal(10.0 * agent.ability, 1.0))


def simulate_worker(directive: str, agent: AgentProfile, node: TaskNode, rng_seed: int, attempt: int = 0) -> WorkerOutput:
    """Deterministic per (rng_seed, agent_id, node_id, attempt)."""
    stream = HashStream(rng_seed, agent.agent_id, node.node_id, attempt)
    quality = draw_quality(agent, stream)
    if quality is None:
        return WorkerOutput(f"Agent {agent.agent_id:#010x} could not complete {node.node_id}: execution error.")
    hint = int(round(quality))
    body = f"{node.desc}\nproduced by {agent.agent_id:#010x} (attempt {attempt})\nquality {quality:.3f}\n"
    artifacts = {out: (body + f"artifact {out}\n").encode() for out in node.outputs}
    text = f"Completed {node.node_id}.\nScore-Hint: {hint}/10\n"
    return WorkerOutput(text, artifacts, quality)
