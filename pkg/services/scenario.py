"""
Scenario ingestion, validation, genesis construction and the seeded random
scenario generator.
"""

from __future__ import annotations

import json
import logging
import random
from collections import defaultdict
from pathlib import Path
from typing import Any, Union

from pydantic import ValidationError

from models.schemas import (
    EndpointSpec,
    FaultInjection,
    GenerateRequest,
    GenesisCell,
    GenesisSpec,
    GenesisUser,
    InjectionKind,
    ScenarioConfig,
    TransferSpec,
)
from services.attester import parse_quorum
from services.ledger import (
    DebitTx,
    Endpoint,
    PartStateCell,
    ShardState,
    empty_matrix,
    tx_id,
    user_address,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Custom exceptions
# ---------------------------------------------------------------------------

class ScenarioError(ValueError):
    """Raised when a scenario cannot be loaded; ``code`` is machine-readable."""

    def __init__(self, code: str, message: str, field: str = "") -> None:
        self.code = code
        self.field = field
        prefix = f"{code}: {field}: " if field else f"{code}: "
        super().__init__(prefix + message)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def parse_scenario(data: Union[str, bytes, dict[str, Any]]) -> ScenarioConfig:
    """Parse and validate a scenario from JSON text or an already-decoded dict."""
    if isinstance(data, (str, bytes)):
        try:
            data = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ScenarioError("parse-error", f"scenario is not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ScenarioError("parse-error", "scenario must be a JSON object")
    try:
        config = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first.get("loc", ()))
        raise ScenarioError("invalid-field", first.get("msg", "invalid value"), where) from exc
    validate_scenario(config)
    return config


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError("parse-error", f"cannot read {path} ({exc.strerror})") from exc
    config = parse_scenario(text)
    logger.info(
        "Loaded scenario %s: %d shards x %d EEs, %d transfers, %d injections",
        path.name, config.shards, config.ees, len(config.transfers), len(config.injections),
    )
    return config


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check_endpoint(config: ScenarioConfig, spec: EndpointSpec, where: str) -> None:
    if spec.shard >= config.shards:
        raise ScenarioError("bad-shard", f"shard {spec.shard} outside [0, {config.shards})", where)
    if spec.ee >= config.ees:
        raise ScenarioError("bad-ee", f"EE {spec.ee} outside [0, {config.ees})", where)


def validate_scenario(config: ScenarioConfig) -> None:
    """Cross-field consistency checks pydantic cannot express."""
    if config.time_out < 2:
        raise ScenarioError("bad-timeout", f"time_out must be at least 2, got {config.time_out}", "time_out")
    try:
        parse_quorum(config.quorum)
    except ValueError as exc:
        raise ScenarioError("invalid-field", str(exc), "quorum") from exc

    homed: set[tuple[int, int, bytes]] = set()
    user_totals: dict[tuple[int, int], int] = defaultdict(int)
    for i, user in enumerate(config.genesis.users):
        where = f"genesis.users.{i}.account"
        _check_endpoint(config, user.account, where)
        key = (user.account.shard, user.account.ee, user_address(user.account.user))
        if key in homed:
            raise ScenarioError("duplicate-user", f"user {user.account.user!r} listed twice", where)
        homed.add(key)
        user_totals[(user.account.shard, user.account.ee)] += user.balance

    cell_totals = genesis_cell_totals(config)
    for s in range(config.shards):
        for e in range(config.ees):
            if cell_totals.get((s, e), 0) != user_totals.get((s, e), 0):
                raise ScenarioError(
                    "genesis-imbalance",
                    f"part-balances of (shard {s}, EE {e}) sum to {cell_totals.get((s, e), 0)}, "
                    f"user balances to {user_totals.get((s, e), 0)}",
                    "genesis.cells",
                )

    seen_ids: set[bytes] = set()
    for i, transfer in enumerate(config.transfers):
        _check_endpoint(config, transfer.sender, f"transfers.{i}.sender")
        _check_endpoint(config, transfer.recipient, f"transfers.{i}.recipient")
        ident = tx_id(transfer.tx_id)
        if ident in seen_ids:
            raise ScenarioError("duplicate-tx", f"tx id {transfer.tx_id!r} used twice", f"transfers.{i}.tx_id")
        seen_ids.add(ident)

    byzantine_slots: set[tuple[int, int]] = set()
    for i, inj in enumerate(config.injections):
        where = f"injections.{i}"
        if inj.shard is not None and inj.shard >= config.shards:
            raise ScenarioError("bad-shard", f"shard {inj.shard} outside [0, {config.shards})", where)
        if inj.tx_id is not None and tx_id(inj.tx_id) not in seen_ids:
            raise ScenarioError("bad-injection", f"no transfer with tx id {inj.tx_id!r}", where)
        if inj.kind is InjectionKind.REMOVE_ACCOUNT:
            _check_endpoint(config, inj.account, where + ".account")
            key = (inj.account.shard, inj.account.ee, user_address(inj.account.user))
            if key not in homed:
                raise ScenarioError("bad-injection", f"no genesis account {inj.account.user!r}", where)
        if inj.kind is InjectionKind.BYZANTINE_ATTESTER and inj.index >= config.attesters_per_shard:
            raise ScenarioError(
                "bad-injection",
                f"attester index {inj.index} outside committee of {config.attesters_per_shard}",
                where,
            )
        if inj.kind is InjectionKind.BYZANTINE_BP:
            if (inj.shard, inj.slot) in byzantine_slots:
                raise ScenarioError("bad-injection", f"two byzantine proposers for shard {inj.shard} slot {inj.slot}", where)
            byzantine_slots.add((inj.shard, inj.slot))


def genesis_cell_totals(config: ScenarioConfig) -> dict[tuple[int, int], int]:
    """(shard, EE) → Σ over holders of its genesis part-balances."""
    totals: dict[tuple[int, int], int] = defaultdict(int)
    if not config.genesis.cells:
        for user in config.genesis.users:
            totals[(user.account.shard, user.account.ee)] += user.balance
        return totals
    seen: set[tuple[int, int, int]] = set()
    for i, cell in enumerate(config.genesis.cells):
        where = f"genesis.cells.{i}"
        if cell.holder >= config.shards or cell.shard >= config.shards:
            raise ScenarioError("bad-shard", f"cell ({cell.holder}, {cell.shard}) outside [0, {config.shards})", where)
        if cell.ee >= config.ees:
            raise ScenarioError("bad-ee", f"EE {cell.ee} outside [0, {config.ees})", where)
        key = (cell.holder, cell.shard, cell.ee)
        if key in seen:
            raise ScenarioError("invalid-field", f"cell {key} listed twice", where)
        seen.add(key)
        totals[(cell.shard, cell.ee)] += cell.balance
    return totals


# ---------------------------------------------------------------------------
# Resolution into ledger types
# ---------------------------------------------------------------------------

def resolve_endpoint(spec: EndpointSpec) -> Endpoint:
    return Endpoint(spec.shard, spec.ee, user_address(spec.user))


def resolve_transfer(spec: TransferSpec) -> DebitTx:
    """Unsigned DebitTx for a scheduled transfer."""
    return DebitTx(
        id=tx_id(spec.tx_id),
        sender=resolve_endpoint(spec.sender),
        recipient=resolve_endpoint(spec.recipient),
        amount=spec.amount,
    )


def genesis_states(config: ScenarioConfig) -> list[ShardState]:
    """Block-0 state of every shard."""
    states = [
        ShardState(shard_id=h, block_number=0, part_state=empty_matrix(config.shards, config.ees))
        for h in range(config.shards)
    ]
    if config.genesis.cells:
        for cell in config.genesis.cells:
            states[cell.holder].set_cell(cell.shard, cell.ee, PartStateCell(balance=cell.balance))
    else:
        for (s, e), total in genesis_cell_totals(config).items():
            states[s].set_cell(s, e, PartStateCell(balance=total))
    for user in config.genesis.users:
        ep = resolve_endpoint(user.account)
        states[ep.shard].user_balance[(ep.ee, ep.user)] = user.balance
    return states


def genesis_issuance(config: ScenarioConfig) -> int:
    return sum(user.balance for user in config.genesis.users)


# ---------------------------------------------------------------------------
# Random scenarios
# ---------------------------------------------------------------------------

def gen_scenario(request: GenerateRequest) -> ScenarioConfig:
    """
    Seeded random scenario: users spread round-robin over every (shard, EE),
    part-balances split randomly across holders (often negative), random
    cross-shard / cross-EE transfers and explicit failure injections.
    """
    rng = random.Random(request.seed)
    time_out = 4
    homes = [(s, e) for s in range(request.shards) for e in range(request.ees)]

    users: list[GenesisUser] = []
    for i in range(request.users):
        shard, ee = homes[i % len(homes)]
        users.append(GenesisUser(
            account=EndpointSpec(shard=shard, ee=ee, user=f"u{i}"),
            balance=rng.randint(1000, 5000),
        ))

    totals: dict[tuple[int, int], int] = defaultdict(int)
    for user in users:
        totals[(user.account.shard, user.account.ee)] += user.balance
    cells: list[GenesisCell] = []
    for (s, e) in homes:
        total = totals.get((s, e), 0)
        remaining = total
        for holder in range(request.shards):
            if holder == s:
                continue
            part = rng.randint(-total // 2, total // 2) if total else 0
            cells.append(GenesisCell(holder=holder, shard=s, ee=e, balance=part))
            remaining -= part
        cells.append(GenesisCell(holder=s, shard=s, ee=e, balance=remaining))

    submit_window = max(1, request.transfers // 5)
    transfers: list[TransferSpec] = []
    injections: list[FaultInjection] = []
    for i in range(request.transfers):
        sender = rng.choice(users).account
        candidates = [u.account for u in users if (u.account.shard, u.account.ee) != (sender.shard, sender.ee)]
        recipient = rng.choice(candidates) if candidates else rng.choice(users).account
        label = f"t{i}"
        transfers.append(TransferSpec(
            submit_slot=1 + rng.randrange(submit_window),
            tx_id=label,
            sender=sender,
            recipient=recipient,
            amount=rng.randint(1, 200),
        ))
        roll = rng.random()
        if roll < request.credit_fail_rate:
            injections.append(FaultInjection(kind=InjectionKind.CREDIT_EXEC_FAIL, tx_id=label))
        elif roll < request.credit_fail_rate + request.debit_fail_rate:
            injections.append(FaultInjection(kind=InjectionKind.DEBIT_EXEC_FAIL, tx_id=label))
        elif roll < request.credit_fail_rate + request.debit_fail_rate + request.withhold_rate:
            injections.append(FaultInjection(kind=InjectionKind.WITHHOLD_CREDIT, tx_id=label))

    for user in rng.sample(users, min(request.removals, len(users))):
        injections.append(FaultInjection(
            kind=InjectionKind.REMOVE_ACCOUNT,
            account=user.account,
            slot=1 + rng.randrange(submit_window + time_out),
        ))

    config = ScenarioConfig(
        shards=request.shards,
        ees=request.ees,
        time_out=time_out,
        seed=request.seed,
        slots=max(40, request.transfers // 5 + time_out + 10),
        genesis=GenesisSpec(users=users, cells=cells),
        transfers=transfers,
        injections=injections,
    )
    validate_scenario(config)
    logger.info(
        "Generated scenario seed=%d: %d users, %d transfers, %d injections",
        request.seed, len(users), len(transfers), len(injections),
    )
    return config
