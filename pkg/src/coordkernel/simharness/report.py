"""Run reports: CSV tables, a plain-text summary and a provenance block."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .. import __version__
from .config import ScenarioConfig


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "nan"
        return repr(round(float(v), 10))
    if isinstance(v, np.integer):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


@dataclass
class Table:
    header: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def add(self, *row) -> None:
        if len(row) != len(self.header):
            raise ValueError(f"row has {len(row)} cells, header has {len(self.header)}")
        self.rows.append(tuple(row))

    def column(self, name: str) -> list:
        i = self.header.index(name)
        return [r[i] for r in self.rows]

    def where(self, **match) -> list[dict]:
        out = []
        for r in self.rows:
            d = dict(zip(self.header, r))
            if all(d[k] == v for k, v in match.items()):
                out.append(d)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class RunReport:
    config: ScenarioConfig
    tables: dict[str, Table] = field(default_factory=dict)
    summary: dict[str, float] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    artifacts: dict[str, bytes] = field(default_factory=dict)

    @property
    def scenario(self) -> str:
        return self.config.scenario.value

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def table(self, name: str, *header: str) -> Table:
        t = self.tables.setdefault(name, Table(tuple(header)))
        return t

    def provenance(self) -> dict:
        return {
            "scenario": self.scenario,
            "config_sha256": self.config.digest(),
            "code_version": __version__,
            "seeds": list(self.config.seeds),
        }

    def summary_text(self) -> str:
        lines = [f"scenario {self.scenario}  seeds {list(self.config.seeds)}"]
        width = max((len(k) for k in self.summary), default=0)
        for k in sorted(self.summary):
            lines.append(f"  {k.ljust(width)}  {_fmt(self.summary[k])}")
        for c in self.checks:
            lines.append("  " + c.line())
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, t in sorted(self.tables.items()):
            p = out / f"{name}.csv"
            p.write_text(t.to_csv(), encoding="utf-8")
            written.append(p)
        for name, data in sorted(self.artifacts.items()):
            p = out / name
            p.write_bytes(data)
            written.append(p)
        p = out / "summary.txt"
        p.write_text(self.summary_text(), encoding="utf-8")
        written.append(p)
        p = out / "provenance.json"
        p.write_text(json.dumps(self.provenance(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        written.append(p)
        p = out / "config.json"
        p.write_text(self.config.to_json(), encoding="utf-8")
        written.append(p)
        return written


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    vals = [float(v) for v in values]
    if not vals:
        return math.nan, math.nan
    return statistics.fmean(vals), statistics.pstdev(vals) if len(vals) > 1 else 0.0
