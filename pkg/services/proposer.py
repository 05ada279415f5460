"""
Honest Block Proposer for one shard at one slot.

Block production runs these steps over a working copy of the shard state:

  1. init_block                 verify remote views, compute real balances,
                                zero the EE-transfer scratch, clear transient
                                credits/reverts, prune the seen-TxId window
  2. preprocess_pending_credits ingest incoming credits, kick out expired ones
  3. process_reverts            user-level refunds for reverts written remotely
  4. select + apply             debits and credits behind the EE solvency gate
  5. settle_ee_transfers        netted EE-level transfers from the scratch

The steps are methods so that services.byzantine can override individual
ones; the attester re-executes the same code over a given transaction list.
All EEs of the shard are processed together: per-EE execution is equivalent
because every gate and scratch entry is keyed by the local source EE.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Protocol, Sequence

from services.beacon import BeaconChain
from services.ledger import (
    AMOUNT_MAX,
    CreditTx,
    DebitTx,
    Endpoint,
    OutstandingKey,
    ProofError,
    RevertRecord,
    ShardState,
    StructuralError,
    ToCreditEvent,
    Transaction,
    canonical_events,
    checked_amount,
    encode_event,
    netted_transfer,
)
from services.merkle import commit_state, event_root, prove_event, verify
from services.signatures import DEFAULT_SCHEME, SignatureScheme, verify_signature
from services.state_provider import RemoteStateView, verify_view

logger = logging.getLogger(__name__)

ScratchKey = tuple[int, int, int]   # (local source EE, dest shard, dest EE)

SELECTION_POLICIES = ("fifo", "reverse")


# ---------------------------------------------------------------------------
# Execution hook
# ---------------------------------------------------------------------------

class ExecutionHook(Protocol):
    """Decides whether a transaction's user-level execution succeeds."""

    def __call__(self, tx: Transaction, slot: int) -> bool: ...


@dataclass(frozen=True)
class ScenarioHook:
    """
    Fails the transactions a scenario injects failures for, plus a seeded
    random share of the rest.  A random failure is drawn from
    sha256(seed | kind | txId | slot), so every re-execution of the same
    transaction at the same slot reaches the same result.
    """
    failing_debits: frozenset[bytes] = frozenset()
    failing_credits: frozenset[bytes] = frozenset()
    seed: int = 0
    debit_fail_rate: float = 0.0
    credit_fail_rate: float = 0.0

    def __call__(self, tx: Transaction, slot: int) -> bool:
        if isinstance(tx, CreditTx):
            if tx.id in self.failing_credits:
                return False
            return not self.draws_failure(b"credit", tx.id, slot, self.credit_fail_rate)
        if tx.id in self.failing_debits:
            return False
        return not self.draws_failure(b"debit", tx.id, slot, self.debit_fail_rate)

    def draws_failure(self, kind: bytes, ident: bytes, slot: int, rate: float) -> bool:
        if rate <= 0.0:
            return False
        digest = hashlib.sha256(
            self.seed.to_bytes(8, "big") + kind + ident + slot.to_bytes(8, "big")
        ).digest()
        return int.from_bytes(digest[:8], "big") < int(rate * 2**64)


ALWAYS_SUCCEED = ScenarioHook()


# ---------------------------------------------------------------------------
# Block records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Receipt:
    status: Literal["success", "failure"]
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "success"


SUCCESS = Receipt("success")


@dataclass(frozen=True)
class RefundRecord:
    """A user-level revert applied by this block; ``lost`` when the account was gone."""
    tx_id: bytes
    account: Endpoint
    amount: int
    lost: bool = False


@dataclass(frozen=True)
class EETransfer:
    src_ee: int
    dest_shard: int
    dest_ee: int
    amount: int


@dataclass(frozen=True)
class Skip:
    tx: Transaction
    reason: str


@dataclass(frozen=True)
class Block:
    shard: int
    slot: int
    parent_state_root: bytes
    txs: tuple[Transaction, ...]
    receipts: tuple[Receipt, ...]
    events: tuple[ToCreditEvent, ...]
    event_root: bytes
    post_state_root: bytes
    expired: tuple[ToCreditEvent, ...] = ()
    refunds: tuple[RefundRecord, ...] = ()
    ee_transfers: tuple[EETransfer, ...] = ()
    bytes_fetched: int = 0

    @property
    def losses(self) -> tuple[RefundRecord, ...]:
        return tuple(r for r in self.refunds if r.lost)


@dataclass(frozen=True)
class Proposal:
    """A block as handed to the committee: block, the views it was built from, claimed post state."""
    block: Block
    views: RemoteStateView
    post_state: Optional[ShardState] = None
    skipped: tuple[Skip, ...] = ()


@dataclass(frozen=True)
class PoolEntry:
    tx: DebitTx
    arrival: int
    seq: int


class EventArchive(Protocol):
    """Events of accepted blocks, needed to prove pending credits."""

    def events(self, shard: int, slot: int) -> Optional[Sequence[ToCreditEvent]]: ...


@dataclass(frozen=True)
class ProposerRules:
    n_shards: int
    n_ees: int
    time_out: int = 4
    max_block_txs: int = 128
    literal_pair_gate: bool = False
    selection_policy: str = "fifo"
    scheme: SignatureScheme = DEFAULT_SCHEME
    hook: ExecutionHook = ALWAYS_SUCCEED
    withheld_credits: frozenset[bytes] = frozenset()

    def __post_init__(self) -> None:
        if self.time_out < 2:
            raise ValueError(f"time_out must be at least 2, got {self.time_out}")
        if self.max_block_txs < 1:
            raise ValueError("max_block_txs must be positive")
        if self.selection_policy not in SELECTION_POLICIES:
            raise ValueError(f"unknown selection policy {self.selection_policy!r}")


# ---------------------------------------------------------------------------
# Working context
# ---------------------------------------------------------------------------

@dataclass
class BlockContext:
    state: ShardState
    views: RemoteStateView
    slot: int
    parent_state_root: bytes
    real_balance: dict[int, int] = field(default_factory=dict)
    scratch: dict[ScratchKey, int] = field(default_factory=dict)
    txs: list[Transaction] = field(default_factory=list)
    receipts: list[Receipt] = field(default_factory=list)
    events: list[ToCreditEvent] = field(default_factory=list)
    expired: list[ToCreditEvent] = field(default_factory=list)
    refunds: list[RefundRecord] = field(default_factory=list)
    ee_transfers: list[EETransfer] = field(default_factory=list)
    skipped: list[Skip] = field(default_factory=list)

    @property
    def shard(self) -> int:
        return self.state.shard_id

    def outflow(self, ee: int) -> int:
        """Total scratch outflow of a local EE across every destination pair."""
        return sum(amount for key, amount in self.scratch.items() if key[0] == ee)

    def add_scratch(self, key: ScratchKey, amount: int) -> None:
        self.scratch[key] = checked_amount(self.scratch.get(key, 0) + amount)

    def include(self, tx: Transaction, receipt: Receipt) -> None:
        self.txs.append(tx)
        self.receipts.append(receipt)


ApplyResult = Literal["included", "skipped"]


# ---------------------------------------------------------------------------
# Proposer
# ---------------------------------------------------------------------------

class BlockProposer:
    """Builds blocks for any shard; holds no per-shard state."""

    def __init__(
        self,
        rules: ProposerRules,
        beacon: BeaconChain,
        archive: Optional[EventArchive] = None,
    ) -> None:
        self.rules = rules
        self.beacon = beacon
        self.archive = archive

    # -- entry points -------------------------------------------------------

    def propose_block(
        self,
        local_state: ShardState,
        views: RemoteStateView,
        pool: Sequence[PoolEntry],
        slot: int,
    ) -> Proposal:
        ctx = self.init_block(local_state, views, slot)
        self.preprocess_pending_credits(ctx)
        self.process_reverts(ctx)
        for tx in self.select_transactions(pool, ctx):
            if len(ctx.txs) >= self.rules.max_block_txs:
                break
            self.apply(ctx, tx)
        self.settle_ee_transfers(ctx)
        block, post = self.finalize(ctx)
        logger.debug(
            "Shard %d slot %d: %d txs, %d events, %d skipped",
            block.shard, slot, len(block.txs), len(block.events), len(ctx.skipped),
        )
        return Proposal(block=block, views=ctx.views, post_state=post, skipped=tuple(ctx.skipped))

    def execute(
        self,
        local_state: ShardState,
        views: RemoteStateView,
        txs: Sequence[Transaction],
        slot: int,
    ) -> Proposal:
        """Re-execute a fixed transaction list (selection taken as given)."""
        ctx = self.init_block(local_state, views, slot)
        self.preprocess_pending_credits(ctx)
        self.process_reverts(ctx)
        for tx in txs:
            self.apply(ctx, tx)
        self.settle_ee_transfers(ctx)
        block, post = self.finalize(ctx)
        return Proposal(block=block, views=ctx.views, post_state=post, skipped=tuple(ctx.skipped))

    # -- step 1 -------------------------------------------------------------

    def init_block(self, local_state: ShardState, views: RemoteStateView, slot: int) -> BlockContext:
        if slot <= local_state.block_number:
            raise StructuralError(
                f"shard {local_state.shard_id}: slot {slot} does not follow block {local_state.block_number}"
            )
        self.check_views(views)
        return self.open_context(local_state, views, slot)

    def check_views(self, views: RemoteStateView) -> None:
        result = verify_view(views, self.beacon, self.rules.n_shards, self.rules.n_ees)
        if not result.ok:
            raise ProofError(f"remote view for shard {views.local_shard}: {result.detail}")

    def open_context(self, local_state: ShardState, views: RemoteStateView, slot: int) -> BlockContext:
        rules = self.rules
        working = local_state.clone()
        for s in range(rules.n_shards):
            for e in range(rules.n_ees):
                working.set_cell(s, e, working.cell(s, e).cleared())
        horizon = slot - rules.time_out
        working.seen_tx_ids = {t: b for t, b in working.seen_tx_ids.items() if b > horizon}

        balances = {ee: views.column_balance(ee) for ee in range(rules.n_ees)}
        return BlockContext(
            state=working,
            views=views,
            slot=slot,
            parent_state_root=commit_state(local_state),
            real_balance=balances,
        )

    # -- step 2 -------------------------------------------------------------

    def preprocess_pending_credits(self, ctx: BlockContext) -> None:
        self.ingest_credits(ctx)
        self.expire_credits(ctx)

    def ingest_credits(self, ctx: BlockContext) -> None:
        incoming: dict[OutstandingKey, set[ToCreditEvent]] = {}
        for n in ctx.views.shards():
            for snap in ctx.views.window(n):
                for cell in snap.cells:
                    for event in cell.credits:
                        if event.recipient.shard != ctx.shard:
                            continue
                        key = (event.sender.shard, event.sender.ee, event.block_number)
                        incoming.setdefault(key, set()).add(event)
        outstanding = ctx.state.outstanding_credits
        for key in sorted(incoming):
            outstanding[key] = canonical_events(outstanding.get(key, ()) + tuple(incoming[key]))

    def expire_credits(self, ctx: BlockContext) -> None:
        outstanding = ctx.state.outstanding_credits
        for key in sorted(outstanding):
            src_shard, src_ee, src_block = key
            if src_block + self.rules.time_out > ctx.slot:
                continue
            events = canonical_events(outstanding.pop(key))
            cell = ctx.state.cell(src_shard, src_ee)
            ctx.state.set_cell(src_shard, src_ee, replace(
                cell, reverts=cell.reverts + tuple(revert_for(e) for e in events),
            ))
            for event in events:
                ctx.add_scratch((event.recipient.ee, src_shard, src_ee), event.amount)
            ctx.expired.extend(events)
            logger.debug("Shard %d slot %d: expired %d credits of %s", ctx.shard, ctx.slot, len(events), key)

    # -- step 3 -------------------------------------------------------------

    def process_reverts(self, ctx: BlockContext) -> None:
        balances = ctx.state.user_balance
        for n in ctx.views.shards():
            for snap in ctx.views.window(n):
                for cell in snap.cells:
                    for record in sorted(cell.reverts, key=lambda r: (r.tx_id, r.amount)):
                        account = record.original_sender
                        if account.shard != ctx.shard:
                            continue
                        key = (account.ee, account.user)
                        if key in balances:
                            balances[key] = checked_amount(balances[key] + record.amount)
                            ctx.refunds.append(RefundRecord(record.tx_id, account, record.amount))
                        else:
                            logger.info(
                                "Shard %d slot %d: refund of %d for tx %s lost, account removed",
                                ctx.shard, ctx.slot, record.amount, record.tx_id.hex()[:12],
                            )
                            ctx.refunds.append(RefundRecord(record.tx_id, account, record.amount, lost=True))

    # -- step 4a ------------------------------------------------------------

    def select_transactions(self, pool: Sequence[PoolEntry], ctx: BlockContext) -> list[Transaction]:
        """
        FIFO by arrival, a pending credit arriving the slot after its source
        block; credits go first on ties.  ``reverse`` inverts the order.
        """
        ranked: list[tuple[tuple, Transaction]] = []
        order = 0
        for key in sorted(ctx.state.outstanding_credits):
            for event in ctx.state.outstanding_credits[key]:
                if event.tx_id in self.rules.withheld_credits:
                    continue
                credit = self.credit_for(event)
                if credit is None:
                    continue
                ranked.append(((key[2] + 1, 0, order), credit))
                order += 1
        for entry in pool:
            ranked.append(((entry.arrival, 1, entry.seq), entry.tx))
        ranked.sort(key=lambda item: item[0])
        selected = [tx for _, tx in ranked]
        if self.rules.selection_policy == "reverse":
            selected.reverse()
        return selected

    def credit_for(self, event: ToCreditEvent) -> Optional[CreditTx]:
        if self.archive is None:
            return None
        events = self.archive.events(event.sender.shard, event.block_number)
        if not events or event not in events:
            logger.warning(
                "No archived source block for pending credit %s (shard %d block %d)",
                event.tx_id.hex()[:12], event.sender.shard, event.block_number,
            )
            return None
        return CreditTx(event=event, proof=prove_event(events, event))

    # -- step 4b ------------------------------------------------------------

    def apply(self, ctx: BlockContext, tx: Transaction) -> ApplyResult:
        if isinstance(tx, CreditTx):
            return self.apply_credit(ctx, tx)
        return self.apply_debit(ctx, tx)

    def gate_passes(self, ctx: BlockContext, ee: int, pair: ScratchKey, amount: int) -> bool:
        """Strict EE solvency gate: realBalance > outflow + amount."""
        committed = ctx.scratch.get(pair, 0) if self.rules.literal_pair_gate else ctx.outflow(ee)
        return ctx.real_balance[ee] > committed + amount

    def skip(self, ctx: BlockContext, tx: Transaction, reason: str) -> ApplyResult:
        logger.debug("Shard %d slot %d: skipped %s (%s)", ctx.shard, ctx.slot, tx.id.hex()[:12], reason)
        ctx.skipped.append(Skip(tx, reason))
        return "skipped"

    def fail(self, ctx: BlockContext, tx: Transaction, reason: str) -> ApplyResult:
        logger.debug("Shard %d slot %d: failed %s (%s)", ctx.shard, ctx.slot, tx.id.hex()[:12], reason)
        ctx.include(tx, Receipt("failure", reason))
        return "included"

    def apply_debit(self, ctx: BlockContext, tx: DebitTx) -> ApplyResult:
        rules = self.rules
        if tx.sender.shard != ctx.shard:
            return self.skip(ctx, tx, "wrong-shard")
        if (
            not tx.sender.within(rules.n_shards, rules.n_ees)
            or not tx.recipient.within(rules.n_shards, rules.n_ees)
            or not 0 < tx.amount <= AMOUNT_MAX
            or len(tx.id) != 32
        ):
            return self.fail(ctx, tx, "invalid")

        src_ee = tx.sender.ee
        pair = (src_ee, tx.recipient.shard, tx.recipient.ee)
        if not tx.is_local and not self.gate_passes(ctx, src_ee, pair, tx.amount):
            return self.skip(ctx, tx, "ee-balance")

        reason = self.debit_failure(ctx, tx)
        if reason:
            return self.fail(ctx, tx, reason)

        state = ctx.state
        sender_key = (src_ee, tx.sender.user)
        state.user_balance[sender_key] -= tx.amount
        state.seen_tx_ids[tx.id] = ctx.slot
        if tx.is_local:
            recipient_key = (tx.recipient.ee, tx.recipient.user)
            state.user_balance[recipient_key] = checked_amount(state.user_balance.get(recipient_key, 0) + tx.amount)
            ctx.include(tx, SUCCESS)
            return "included"

        ctx.add_scratch(pair, tx.amount)
        event = ToCreditEvent(
            sender=tx.sender,
            recipient=tx.recipient,
            amount=tx.amount,
            block_number=ctx.slot,
            index=len(ctx.events),
            tx_id=tx.id,
        )
        ctx.events.append(event)
        cell = state.cell(tx.recipient.shard, tx.recipient.ee)
        state.set_cell(tx.recipient.shard, tx.recipient.ee, replace(cell, credits=cell.credits + (event,)))
        ctx.include(tx, SUCCESS)
        return "included"

    def debit_failure(self, ctx: BlockContext, tx: DebitTx) -> str:
        """Empty string when the debit executes, else the failure reason."""
        if not verify_signature(tx, self.rules.scheme):
            return "bad-signature"
        if tx.id in ctx.state.seen_tx_ids:
            return "duplicate-tx"
        balance = ctx.state.user_balance.get((tx.sender.ee, tx.sender.user))
        if balance is None:
            return "no-account"
        if balance < tx.amount:
            return "insufficient-balance"
        if not self.rules.hook(tx, ctx.slot):
            return "execution-failed"
        return ""

    def apply_credit(self, ctx: BlockContext, tx: CreditTx) -> ApplyResult:
        event = tx.event
        if event.recipient.shard != ctx.shard:
            return self.skip(ctx, tx, "wrong-shard")
        link = self.beacon.get_crosslink(event.sender.shard, event.block_number)
        if link is None or not verify(link.event_root, encode_event(event), tx.proof):
            return self.skip(ctx, tx, "bad-proof")
        key = (event.sender.shard, event.sender.ee, event.block_number)
        pending = ctx.state.outstanding_credits.get(key, ())
        if event not in pending:
            return self.skip(ctx, tx, "not-pending")
        dest_ee = event.recipient.ee
        pair = (dest_ee, event.sender.shard, event.sender.ee)
        if not self.gate_passes(ctx, dest_ee, pair, event.amount):
            return self.skip(ctx, tx, "ee-balance")

        remaining = tuple(e for e in pending if e != event)
        if remaining:
            ctx.state.outstanding_credits[key] = remaining
        else:
            del ctx.state.outstanding_credits[key]

        if self.rules.hook(tx, ctx.slot):
            balances = ctx.state.user_balance
            account = (dest_ee, event.recipient.user)
            balances[account] = checked_amount(balances.get(account, 0) + event.amount)
            ctx.include(tx, SUCCESS)
            return "included"

        cell = ctx.state.cell(event.sender.shard, event.sender.ee)
        ctx.state.set_cell(event.sender.shard, event.sender.ee, replace(
            cell, reverts=cell.reverts + (revert_for(event),),
        ))
        ctx.add_scratch(pair, event.amount)
        return self.fail(ctx, tx, "execution-failed")

    # -- step 4c ------------------------------------------------------------

    def settle_ee_transfers(self, ctx: BlockContext) -> None:
        for key in sorted(ctx.scratch):
            amount = ctx.scratch[key]
            if amount <= 0:
                continue
            src_ee, dest_shard, dest_ee = key
            ctx.state.part_state = netted_transfer(
                ctx.state.part_state, ctx.shard, src_ee, (dest_shard, dest_ee), amount,
            )
            ctx.ee_transfers.append(EETransfer(src_ee, dest_shard, dest_ee, amount))

    # -- assembly -----------------------------------------------------------

    def finalize(self, ctx: BlockContext) -> tuple[Block, ShardState]:
        post = ctx.state
        post.block_number = ctx.slot
        block = Block(
            shard=ctx.shard,
            slot=ctx.slot,
            parent_state_root=ctx.parent_state_root,
            txs=tuple(ctx.txs),
            receipts=tuple(ctx.receipts),
            events=tuple(ctx.events),
            event_root=event_root(ctx.events),
            post_state_root=commit_state(post),
            expired=tuple(ctx.expired),
            refunds=tuple(ctx.refunds),
            ee_transfers=tuple(ctx.ee_transfers),
            bytes_fetched=ctx.views.bytes_fetched,
        )
        return block, post


def revert_for(event: ToCreditEvent) -> RevertRecord:
    return RevertRecord(
        original_sender=event.sender,
        amount=event.amount,
        original_recipient=event.recipient,
        tx_id=event.tx_id,
    )
