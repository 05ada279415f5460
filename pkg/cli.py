#!/usr/bin/env python3
"""
Command line for the sharded ledger simulator.

  simulate      run a scenario, write the JSONL trace, exit 0/1/2
  verify-trace  re-validate every accepted block of a recorded trace
  gen-scenario  emit a seeded random scenario as JSON
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv

from models.schemas import GenerateRequest
from services.ledger import StructuralError
from services.scenario import ScenarioError, gen_scenario, load_scenario, parse_scenario
from services.simulator import EXIT_AUDIT_FAILED, EXIT_OK, EXIT_STRUCTURAL, run, verify_trace
from services.trace_store import read_trace

logger = logging.getLogger("ledger_sim.cli")


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_STRUCTURAL


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario)
    overrides = {}
    if args.slots is not None:
        overrides["slots"] = args.slots
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.literal_pair_gate:
        overrides["literal_pair_gate"] = True
    if args.random_debit_fail_rate is not None:
        overrides["random_debit_fail_rate"] = args.random_debit_fail_rate
    if args.random_credit_fail_rate is not None:
        overrides["random_credit_fail_rate"] = args.random_credit_fail_rate
    if overrides:
        config = parse_scenario({**config.model_dump(mode="json"), **overrides})

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="\n") as fh:
        report, exit_code, trace = run(config, fh, audit_every_slot=args.audit_every_slot)

    logger.info("Trace written to %s (%d records)", out, trace.count)
    if args.report:
        Path(args.report).write_text(report.model_dump_json(indent=2, by_alias=True), encoding="utf-8")
    print(
        f"{'PASS' if report.passed else 'FAIL'}: {config.slots} slots, {trace.count} trace records, "
        f"outcomes {json.dumps(report.outcome_counts, sort_keys=True)}"
    )
    for failure in report.failures[:10]:
        print(f"  slot {failure.slot} [{failure.check}] {failure.detail}")
    return exit_code


def cmd_verify_trace(args: argparse.Namespace) -> int:
    records = read_trace(args.trace)
    result = verify_trace(records)
    if result.ok:
        print(f"PASS: {result.blocks_checked} accepted blocks re-validated")
        return EXIT_OK
    print(f"FAIL: {len(result.mismatches)} of {result.blocks_checked} blocks diverge")
    for line in result.mismatches[:20]:
        print(f"  {line}")
    return EXIT_AUDIT_FAILED


def cmd_gen_scenario(args: argparse.Namespace) -> int:
    request = GenerateRequest(
        seed=args.seed,
        shards=args.shards,
        ees=args.ees,
        transfers=args.transfers,
        users=args.users,
        credit_fail_rate=args.credit_fail_rate,
        debit_fail_rate=args.debit_fail_rate,
        removals=args.removals,
        withhold_rate=args.withhold_rate,
    )
    text = gen_scenario(request).model_dump_json(indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ledger-sim", description="Netted multi-shard ledger simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Run a scenario and write its trace")
    sim.add_argument("--scenario", required=True, help="Scenario JSON file")
    sim.add_argument("--slots", type=int, default=None, help="Override the scenario's slot count")
    sim.add_argument("--seed", type=int, default=None, help="Seed for the random execution failures")
    sim.add_argument("--random-debit-fail-rate", type=float, default=None, help="Seeded share of debits that fail")
    sim.add_argument("--random-credit-fail-rate", type=float, default=None, help="Seeded share of credits that fail")
    sim.add_argument("--out", required=True, help="Trace JSONL output path")
    sim.add_argument("--audit-every-slot", action="store_true", help="Run the full audit after every slot")
    sim.add_argument("--literal-pair-gate", action="store_true", help="Gate on the per-pair outflow only")
    sim.add_argument("--report", default=None, help="Also write the audit report JSON here")
    sim.set_defaults(handler=cmd_simulate)

    ver = sub.add_parser("verify-trace", help="Re-run the attester over a recorded trace")
    ver.add_argument("--trace", required=True)
    ver.set_defaults(handler=cmd_verify_trace)

    gen = sub.add_parser("gen-scenario", help="Emit a seeded random scenario")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--shards", type=int, required=True)
    gen.add_argument("--ees", type=int, required=True)
    gen.add_argument("--transfers", type=int, required=True)
    gen.add_argument("--users", type=int, default=100)
    gen.add_argument("--credit-fail-rate", type=float, default=0.05)
    gen.add_argument("--debit-fail-rate", type=float, default=0.02)
    gen.add_argument("--withhold-rate", type=float, default=0.0)
    gen.add_argument("--removals", type=int, default=0)
    gen.add_argument("--out", default=None, help="Write here instead of stdout")
    gen.set_defaults(handler=cmd_gen_scenario)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s  %(levelname)-8s  %(name)s  %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ScenarioError as exc:
        return _fail(str(exc))
    except StructuralError as exc:
        return _fail(f"structural fault: {exc}")
    except OSError as exc:
        return _fail(f"{exc.filename or ''}: {exc.strerror}")
    except ValueError as exc:
        # pydantic rejects out-of-range generator parameters
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
