"""Evaluator: artifact sampling, format checks and score extraction."""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Sequence

from ..orchestration import ACCEPT_THRESHOLD, TaskNode
from .artifacts import ArtifactRecord, digest

STRICT = re.compile(r"Score-Hint:\s*(\d{1,2})/10")
RELAXED = re.compile(r"(\d{1,2})\s*/\s*10")
VIOLATION_CAP = 2
AUDIT_SAMPLE = 3


class ParseFailure(ValueError):
    pass


def parse_score(text: str) -> int:
    """Strict pattern first, one retry with the relaxed pattern; values outside 0..10 are rejected."""
    for pattern in (STRICT, RELAXED):
        m = pattern.search(text)
        if m is None:
            continue
        value = int(m.group(1))
        if not 0 <= value <= 10:
            raise ParseFailure(f"score {value} outside 0..10")
        return value
    raise ParseFailure("no score found")


@dataclass(frozen=True)
class EvaluatorConfig:
    threshold: int = ACCEPT_THRESHOLD
    sample_size: int = AUDIT_SAMPLE
    violation_cap: int = VIOLATION_CAP
    seed: int = 0


@dataclass(frozen=True)
class EvaluationReport:
    node_id: str
    score: int
    passed: bool
    audit_notes: str
    sampled_artifacts: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not 0 <= self.score <= 10:
            raise ValueError("score outside 0..10")


def audit(
    node: TaskNode,
    artifacts: Sequence[tuple[ArtifactRecord, bytes]],
    output_text: str,
    config: EvaluatorConfig = EvaluatorConfig(),
) -> EvaluationReport:
    """Score one delivery from the node spec, the delivered bytes and the output text only."""
    notes = []
    violated = False
    names = {rec.logical.artifact_kind + "/" + rec.logical.name for rec, _ in artifacts}
    missing = [o for o in node.outputs if o.lower() not in names]
    if missing and artifacts:
        violated = True
        notes.append("missing outputs: " + ", ".join(missing))
    suffix = node.constraints.get("format")
    if suffix:
        bad = sorted(str(rec.logical) for rec, _ in artifacts if not rec.logical.name.endswith(suffix.lower()))
        if bad:
            violated = True
            notes.append(f"format {suffix} violated by " + ", ".join(bad))
    ordered = sorted(artifacts, key=lambda rd: str(rd[0].logical))
    k = min(config.sample_size, len(ordered))
    sampled = random.Random(f"{config.seed}/{node.node_id}").sample(ordered, k) if k else []
    for rec, data in sampled:
        if digest(data) != rec.checksum:
            violated = True
            notes.append(f"checksum mismatch on {rec.logical}")
    try:
        score = parse_score(output_text)
    except ParseFailure as exc:
        score = 0
        notes.append(f"unparseable: {exc}")
    if violated:
        score = min(score, config.violation_cap)
    return EvaluationReport(
        node.node_id,
        score,
        score >= config.threshold,
        "; ".join(notes) or "ok",
        tuple(str(rec.logical) for rec, _ in sampled),
    )
