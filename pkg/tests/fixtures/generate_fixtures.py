#!/usr/bin/env python3
"""
Scenario fixtures for the simulator test suite.

Run once:  python tests/fixtures/generate_fixtures.py

Produces:
  tests/fixtures/happy.json             — three a_i → b_i transfers, all complete
  tests/fixtures/debit_failure.json     — one injected and one underfunded debit failure
  tests/fixtures/credit_failure.json    — a3 →30→ b3 credit fails and is reverted
  tests/fixtures/expiry.json            — a withheld credit expires and is reverted
  tests/fixtures/removal.json           — sender removed before its refund lands
  tests/fixtures/negative_parts.json    — genesis with negative part-balances
  tests/fixtures/imbalanced.json        — genesis part-balances ≠ user balances
  tests/fixtures/bad_shard.json         — transfer to a shard that does not exist
  tests/fixtures/byzantine_matrix.json  — one episode per Byzantine behaviour

The builders are imported by the tests, so the JSON files are only needed by
the CLI and upload tests.
"""

from __future__ import annotations

import json
from pathlib import Path

FIXTURE_DIR = Path(__file__).parent

# Byzantine behaviour → (shard, slot offset within its episode, needs a failing credit)
BYZANTINE_TARGETS = {
    "false-part-balances": (0, 0, False),
    "false-credits": (0, 0, False),
    "false-reverts": (0, 0, False),
    "skip-outstanding-update": (1, 1, False),
    "skip-revert-processing": (0, 2, True),
    "wrong-event": (0, 0, False),
    "wrong-outgoing-credit": (0, 0, False),
    "stale-outstanding-credit": (1, 1, False),
    "missing-revert": (1, 1, True),
    "wrong-ee-transfer": (0, 0, False),
}

EPISODE_SLOTS = 8


def account(shard: int, ee: int, user: str) -> dict:
    return {"shard": shard, "ee": ee, "user": user}


def transfer(slot: int, tx: str, sender: dict, recipient: dict, amount: int) -> dict:
    return {"submit_slot": slot, "tx_id": tx, "sender": sender, "recipient": recipient, "amount": amount}


def _users(a_balance: int, b_balance: int) -> list[dict]:
    return [
        {"account": account(0, 1, f"a{i}"), "balance": a_balance} for i in (1, 2, 3)
    ] + [
        {"account": account(1, 1, f"b{i}"), "balance": b_balance} for i in (1, 2, 3)
    ]


def _transfers(slot: int, prefix: str = "") -> list[dict]:
    return [
        transfer(slot, f"{prefix}t{i}", account(0, 1, f"a{i}"), account(1, 1, f"b{i}"), 10 * i)
        for i in (1, 2, 3)
    ]


# ---------------------------------------------------------------------------
#  Builders
# ---------------------------------------------------------------------------


def happy_scenario() -> dict:
    """Two shards, two EEs: a1..a3 on (0, 1) send 10/20/30 to b1..b3 on (1, 1)."""
    return {
        "shards": 2,
        "ees": 2,
        "time_out": 4,
        "slots": 8,
        "genesis": {"users": _users(100, 50)},
        "transfers": _transfers(1),
    }


def debit_failure_scenario() -> dict:
    scenario = happy_scenario()
    scenario["transfers"].append(
        transfer(1, "t4", account(0, 1, "a1"), account(1, 1, "b1"), 150),
    )
    scenario["injections"] = [{"kind": "debit-exec-fail", "tx_id": "t2"}]
    return scenario


def credit_failure_scenario() -> dict:
    scenario = happy_scenario()
    scenario["injections"] = [{"kind": "credit-exec-fail", "tx_id": "t3"}]
    return scenario


def expiry_scenario() -> dict:
    scenario = happy_scenario()
    scenario["slots"] = 10
    scenario["injections"] = [{"kind": "withhold-credit", "tx_id": "t2"}]
    return scenario


def removal_scenario() -> dict:
    scenario = credit_failure_scenario()
    scenario["injections"].append(
        {"kind": "remove-account", "account": account(0, 1, "a3"), "slot": 2},
    )
    return scenario


def negative_parts_scenario() -> dict:
    scenario = happy_scenario()
    scenario["genesis"]["cells"] = [
        {"holder": 0, "shard": 0, "ee": 1, "balance": 400},
        {"holder": 1, "shard": 0, "ee": 1, "balance": -100},
        {"holder": 0, "shard": 1, "ee": 1, "balance": 50},
        {"holder": 1, "shard": 1, "ee": 1, "balance": 100},
    ]
    return scenario


def imbalanced_scenario() -> dict:
    scenario = happy_scenario()
    scenario["genesis"]["cells"] = [
        {"holder": 0, "shard": 0, "ee": 1, "balance": 250},
        {"holder": 1, "shard": 1, "ee": 1, "balance": 150},
    ]
    return scenario


def bad_shard_scenario() -> dict:
    scenario = happy_scenario()
    scenario["transfers"][2]["recipient"] = account(5, 1, "b3")
    return scenario


def byzantine_episode(behavior: str) -> dict:
    """Happy-case transfers with a single Byzantine proposer placed where it has something to corrupt."""
    shard, offset, failing_credit = BYZANTINE_TARGETS[behavior]
    scenario = happy_scenario()
    scenario["slots"] = EPISODE_SLOTS + 4
    scenario["genesis"]["users"] = _users(1000, 500)
    scenario["injections"] = [
        {"kind": "byzantine-bp", "behavior": behavior, "shard": shard, "slot": 1 + offset},
    ]
    if failing_credit:
        scenario["injections"].append({"kind": "credit-exec-fail", "tx_id": "t3"})
    return scenario


def byzantine_matrix_scenario() -> dict:
    """Every behaviour in its own episode of EPISODE_SLOTS slots, plus one Byzantine attester."""
    transfers: list[dict] = []
    injections: list[dict] = [{"kind": "byzantine-attester", "shard": 0, "index": 0}]
    for episode, (behavior, (shard, offset, failing_credit)) in enumerate(BYZANTINE_TARGETS.items()):
        base = 1 + EPISODE_SLOTS * episode
        prefix = f"e{episode}-"
        transfers.extend(_transfers(base, prefix))
        injections.append(
            {"kind": "byzantine-bp", "behavior": behavior, "shard": shard, "slot": base + offset},
        )
        if failing_credit:
            injections.append({"kind": "credit-exec-fail", "tx_id": f"{prefix}t3"})
    return {
        "shards": 2,
        "ees": 2,
        "time_out": 4,
        "slots": EPISODE_SLOTS * len(BYZANTINE_TARGETS) + 4,
        "genesis": {"users": _users(1000, 500)},
        "transfers": transfers,
        "injections": injections,
    }


FIXTURES = {
    "happy.json": happy_scenario,
    "debit_failure.json": debit_failure_scenario,
    "credit_failure.json": credit_failure_scenario,
    "expiry.json": expiry_scenario,
    "removal.json": removal_scenario,
    "negative_parts.json": negative_parts_scenario,
    "imbalanced.json": imbalanced_scenario,
    "bad_shard.json": bad_shard_scenario,
    "byzantine_matrix.json": byzantine_matrix_scenario,
}


def main() -> None:
    for name, builder in FIXTURES.items():
        path = FIXTURE_DIR / name
        path.write_text(json.dumps(builder(), indent=2) + "\n", encoding="utf-8")
        print(f"  ✓ {path.name}")
    print("\nAll fixtures generated successfully.")


if __name__ == "__main__":
    main()
