"""``kernel`` command line.

    kernel run <scenario> [--config FILE] [--seed N] [--out DIR]
    kernel verify-chain <file>
    kernel replay <journal>

Exit codes: 0 success, 2 a failed acceptance assertion (or an integrity
check that did not hold), 1 any other error. ``KERNEL_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from ..execution.journal import JournalCorrupt, RecordType, iter_records, rehydrate, sessions
from ..value.mandate import verify_bytes
from .config import ConfigError, Scenario, ScenarioConfig, load_config
from .scenarios import run_scenario

log = logging.getLogger("coordkernel")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ASSERTION = 2


def _setup_logging() -> None:
    level = os.environ.get("KERNEL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def cmd_run(args) -> int:
    scenario = Scenario.parse(args.scenario)
    cfg = load_config(args.config, scenario) if args.config else ScenarioConfig.default(scenario)
    if args.seed is not None:
        cfg = cfg.with_seeds(args.seed)
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    cfg = replace(cfg, output_dir=str(out))
    report = run_scenario(cfg)
    report.write(out)
    sys.stdout.write(report.summary_text())
    return EXIT_OK if report.ok else EXIT_ASSERTION


def cmd_verify_chain(args) -> int:
    data = Path(args.file).read_bytes()
    rep = verify_bytes(data)
    if rep.valid:
        print(f"chain OK: {args.file}")
        return EXIT_OK
    for idx, reason in rep.failures[:20]:
        print(f"mandate {idx}: {reason}")
    if len(rep.failures) > 20:
        print(f"... {len(rep.failures) - 20} more failures")
    print(f"chain INVALID: first failure at {rep.first_failure}")
    return EXIT_ASSERTION


def cmd_replay(args) -> int:
    data = Path(args.journal).read_bytes()
    try:
        counts = {RecordType.SNAPSHOT: 0, RecordType.EVENT: 0}
        for _, kind, _ in iter_records(data):
            counts[kind] += 1
        names = sessions(data)
    except JournalCorrupt as exc:
        print(f"journal corrupt: {exc}")
        return EXIT_ASSERTION
    print(f"{len(names)} session(s), {counts[RecordType.SNAPSHOT]} snapshots, {counts[RecordType.EVENT]} events")
    for sid in names:
        state = rehydrate(data, sid)
        digest = hashlib.sha256(state.to_text().encode()).hexdigest()[:16]
        nodes = ", ".join(f"{n.node_id}={n.state.value}" for n in state.dag.nodes.values())
        print(f"{sid}: {state.status.value} steps={state.steps} dispatches={state.dispatches} "
              f"errors={state.errors} [{nodes}] state-sha256={digest}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kernel", description="Agent coordination kernel experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario and write its CSV report")
    run.add_argument("scenario", help=", ".join(s.slug for s in Scenario))
    run.add_argument("--config", help="scenario JSON config")
    run.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    run.add_argument("--out", help="output directory (default: output_dir from the config)")
    run.set_defaults(func=cmd_run)
    vc = sub.add_parser("verify-chain", help="verify a serialized mandate chain")
    vc.add_argument("file")
    vc.set_defaults(func=cmd_verify_chain)
    rp = sub.add_parser("replay", help="rehydrate every session in a journal and print its state")
    rp.add_argument("journal")
    rp.set_defaults(func=cmd_replay)
    return ap


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - the CLI maps every failure to an exit code
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
