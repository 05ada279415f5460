"""
Audit oracle: per-transfer outcome tracking, per-slot invariant checks and
the independent single-ledger reference oracle.

Checks (each failure is recorded with its slot; the run fails on the first):
  conservation     Σ every part-balance of every shard == genesis issuance
  solvency         the true real balance of every (shard, EE) is ≥ 0
  transience       credits + reverts written by a block ≤ its txs + expiries
  bytes-bound      bytesFetched ≤ the encoding-derived bound for its view
  liveness         an included debit is terminal by debitSlot + timeOut + 2
                   (plus rejected blocks on its shards since the debit)
  revert-timing    user-level revert lands in the first accepted source
                   block after the credit failure / expiry
  reconciliation   at quiescence, realBalance(s, E) == Σ homed users
                   + Σ lost refunds + Σ removed balances
  oracle           surviving balances == genesis + COMPLETED transfers
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from models.schemas import (
    AuditFailure,
    AuditReport,
    OutcomeClass,
    TERMINAL_CLASSES,
    TransferOutcome,
)
from services.ledger import (
    EVENT_SIZE,
    REVERT_SIZE,
    CELL_FIXED_SIZE,
    CreditTx,
    DebitTx,
    Endpoint,
    ShardState,
)
from services.merkle import CELL_LEAF_FIXED_SIZE, HASH_BYTES, PROOF_FIXED_SIZE, tree_depth
from services.proposer import Block
from services.state_provider import RemoteStateView

logger = logging.getLogger(__name__)

MAX_RECORD_SIZE = max(EVENT_SIZE, REVERT_SIZE)

AccountKey = tuple[int, int, bytes]   # (shard, EE, user)


# ---------------------------------------------------------------------------
# Outcome tracking
# ---------------------------------------------------------------------------

@dataclass
class TransferTrack:
    label: str
    tx_id: bytes
    sender: Endpoint
    recipient: Endpoint
    amount: int
    submit_slot: int
    debit_slot: Optional[int] = None
    debit_failed: bool = False
    credit_slot: Optional[int] = None
    failure_slot: Optional[int] = None
    revert_slot: Optional[int] = None
    lost: bool = False

    @property
    def outcome(self) -> OutcomeClass:
        if self.debit_slot is None:
            return OutcomeClass.NOT_INCLUDED
        if self.debit_failed:
            return OutcomeClass.DEBIT_FAILED
        if self.credit_slot is not None:
            return OutcomeClass.COMPLETED
        if self.revert_slot is not None:
            return OutcomeClass.LOST if self.lost else OutcomeClass.REVERTED
        return OutcomeClass.IN_FLIGHT

    def to_outcome(self) -> TransferOutcome:
        return TransferOutcome(
            tx_id=self.label,
            outcome=self.outcome,
            debit_slot=self.debit_slot,
            credit_slot=self.credit_slot,
            revert_slot=self.revert_slot,
            failure_slot=self.failure_slot,
            amount=self.amount,
        )


class OutcomeTracker:
    """Follows every scheduled transfer through the accepted blocks."""

    def __init__(self) -> None:
        self.tracks: dict[bytes, TransferTrack] = {}

    def register(self, label: str, tx: DebitTx, submit_slot: int) -> None:
        self.tracks[tx.id] = TransferTrack(label, tx.id, tx.sender, tx.recipient, tx.amount, submit_slot)

    def observe(self, block: Block) -> None:
        for tx, receipt in zip(block.txs, block.receipts):
            track = self.tracks.get(tx.id)
            if track is None:
                continue
            if isinstance(tx, CreditTx):
                if receipt.ok:
                    track.credit_slot = block.slot
                else:
                    track.failure_slot = block.slot
                continue
            track.debit_slot = block.slot
            track.debit_failed = not receipt.ok
            if receipt.ok and tx.is_local:
                track.credit_slot = block.slot
        for event in block.expired:
            track = self.tracks.get(event.tx_id)
            if track is not None:
                track.failure_slot = block.slot
        for refund in block.refunds:
            track = self.tracks.get(refund.tx_id)
            if track is not None:
                track.revert_slot = block.slot
                track.lost = refund.lost

    def in_flight(self) -> list[TransferTrack]:
        return [t for t in self.tracks.values() if t.outcome is OutcomeClass.IN_FLIGHT]

    def outcomes(self) -> list[TransferOutcome]:
        return [t.to_outcome() for t in sorted(self.tracks.values(), key=lambda t: (t.submit_slot, t.label))]


# ---------------------------------------------------------------------------
# Reference oracle
# ---------------------------------------------------------------------------

def reference_balances(
    genesis: dict[AccountKey, int],
    tracks: Iterable[TransferTrack],
) -> dict[AccountKey, int]:
    """Single-ledger replay: apply each COMPLETED transfer atomically, nothing else."""
    balances = dict(genesis)
    for track in tracks:
        if track.outcome is not OutcomeClass.COMPLETED:
            continue
        src = (track.sender.shard, track.sender.ee, track.sender.user)
        dst = (track.recipient.shard, track.recipient.ee, track.recipient.user)
        balances[src] = balances.get(src, 0) - track.amount
        balances[dst] = balances.get(dst, 0) + track.amount
    return balances


def world_balances(states: Sequence[ShardState]) -> dict[AccountKey, int]:
    return {
        (state.shard_id, ee, user): amount
        for state in states
        for (ee, user), amount in state.user_balance.items()
    }


# ---------------------------------------------------------------------------
# Auditor
# ---------------------------------------------------------------------------

@dataclass
class Auditor:
    issuance: int
    n_shards: int
    n_ees: int
    time_out: int
    genesis_balances: dict[AccountKey, int]
    failures: list[AuditFailure] = field(default_factory=list)
    removed: dict[AccountKey, int] = field(default_factory=dict)
    lost: dict[tuple[int, int], int] = field(default_factory=lambda: defaultdict(int))
    negative_cells: set[tuple[int, int, int]] = field(default_factory=set)
    rejected: dict[int, list[int]] = field(default_factory=lambda: defaultdict(list))
    accepted: dict[int, list[int]] = field(default_factory=lambda: defaultdict(list))
    bytes_total: int = 0
    bytes_max: int = 0

    def fail(self, slot: int, check: str, detail: str) -> None:
        if not self.failures:
            logger.warning("Audit failure at slot %d: %s (%s)", slot, check, detail)
        self.failures.append(AuditFailure(slot=slot, check=check, detail=detail))

    # -- bookkeeping fed by the harness -------------------------------------

    def record_removal(self, shard: int, ee: int, user: bytes, balance: int) -> None:
        key = (shard, ee, user)
        self.removed[key] = self.removed.get(key, 0) + balance

    def record_decision(self, block: Block, accepted: bool) -> None:
        (self.accepted if accepted else self.rejected)[block.shard].append(block.slot)
        if accepted:
            for refund in block.losses:
                self.lost[(refund.account.shard, refund.account.ee)] += refund.amount

    # -- per-block checks -----------------------------------------------------

    def check_block(self, block: Block, post: ShardState, views: RemoteStateView, history: dict) -> None:
        """Transience and byte bounds of one accepted block."""
        written = sum(len(c.credits) + len(c.reverts) for row in post.part_state for c in row)
        included = len(block.txs) + len(block.expired)
        if written > included:
            self.fail(block.slot, "transience", f"shard {block.shard} wrote {written} records for {included} txs/expiries")

        bound = self.bytes_bound(views, history)
        if block.bytes_fetched > bound:
            self.fail(block.slot, "bytes-bound", f"shard {block.shard} fetched {block.bytes_fetched} > {bound}")
        self.bytes_total += block.bytes_fetched
        self.bytes_max = max(self.bytes_max, block.bytes_fetched)

    def bytes_bound(self, views: RemoteStateView, history: dict) -> int:
        """
        Per fetched column: N cells of fixed size with their proofs, plus one
        maximal record for every tx or expiry of the block that wrote it.
        ``history`` maps (shard, slot) → (txs, expired) of accepted blocks.
        """
        bound = 0
        for n in views.shards():
            if n == views.local_shard:
                continue
            for snap in views.snapshots[n]:
                per_cell = CELL_LEAF_FIXED_SIZE + CELL_FIXED_SIZE + PROOF_FIXED_SIZE
                depth = tree_depth(snap.proofs[0].leaf_count) if snap.proofs else 0
                txs, expired = history.get((n, snap.slot), (0, 0))
                bound += self.n_ees * (per_cell + HASH_BYTES * depth) + MAX_RECORD_SIZE * (txs + expired)
        return bound

    # -- per-slot checks ------------------------------------------------------

    def check_slot(self, slot: int, states: Sequence[ShardState], tracker: OutcomeTracker, full: bool) -> None:
        total = sum(state.total_part_balance() for state in states)
        if total != self.issuance:
            self.fail(slot, "conservation", f"part-balances sum to {total}, issuance is {self.issuance}")

        for state in states:
            for s, row in enumerate(state.part_state):
                for e, cell in enumerate(row):
                    if cell.balance < 0:
                        self.negative_cells.add((state.shard_id, s, e))

        self._check_liveness(slot, tracker)
        if full:
            self.check_solvency(slot, states)
            self.check_reconciliation(slot, states, tracker)

    def check_solvency(self, slot: int, states: Sequence[ShardState]) -> None:
        for s in range(self.n_shards):
            for e in range(self.n_ees):
                real = sum(state.cell(s, e).balance for state in states)
                if real < 0:
                    self.fail(slot, "solvency", f"real balance of (shard {s}, EE {e}) is {real}")

    def _rejections_between(self, shard: int, first: int, last: int) -> int:
        return sum(1 for slot in self.rejected.get(shard, ()) if first <= slot <= last)

    def _check_liveness(self, slot: int, tracker: OutcomeTracker) -> None:
        for track in tracker.in_flight():
            slack = (
                self._rejections_between(track.sender.shard, track.debit_slot, slot)
                + self._rejections_between(track.recipient.shard, track.debit_slot, slot)
            )
            deadline = track.debit_slot + self.time_out + 2 + slack
            if slot > deadline:
                self.fail(slot, "liveness", f"transfer {track.label} still in flight past slot {deadline}")

    def check_revert_timing(self, slot: int, tracker: OutcomeTracker) -> None:
        for track in tracker.tracks.values():
            if track.revert_slot is None or track.failure_slot is None:
                continue
            later = [s for s in self.accepted.get(track.sender.shard, ()) if s > track.failure_slot]
            expected = min(later) if later else None
            if expected != track.revert_slot:
                self.fail(
                    slot, "revert-timing",
                    f"transfer {track.label} failed at {track.failure_slot}, reverted at {track.revert_slot}, "
                    f"first source block after failure is {expected}",
                )

    def check_reconciliation(self, slot: int, states: Sequence[ShardState], tracker: OutcomeTracker) -> bool:
        """Quiescent EE/user reconciliation; returns False when not quiescent."""
        if tracker.in_flight():
            return False
        homed: dict[tuple[int, int], int] = defaultdict(int)
        for state in states:
            for (ee, _user), amount in state.user_balance.items():
                homed[(state.shard_id, ee)] += amount
        removed: dict[tuple[int, int], int] = defaultdict(int)
        for (s, e, _user), amount in self.removed.items():
            removed[(s, e)] += amount
        for s in range(self.n_shards):
            for e in range(self.n_ees):
                real = sum(state.cell(s, e).balance for state in states)
                expected = homed[(s, e)] + self.lost.get((s, e), 0) + removed[(s, e)]
                if real != expected:
                    self.fail(
                        slot, "reconciliation",
                        f"(shard {s}, EE {e}): real balance {real}, users + losses + removed {expected}",
                    )
        return True

    def check_oracle(self, slot: int, states: Sequence[ShardState], tracker: OutcomeTracker) -> bool:
        reference = reference_balances(self.genesis_balances, tracker.tracks.values())
        actual = world_balances(states)
        mismatched = [
            key for key in sorted(set(reference) | set(actual))
            if key not in self.removed and reference.get(key, 0) != actual.get(key, 0)
        ]
        for key in mismatched[:5]:
            self.fail(
                slot, "oracle",
                f"user {key[2].hex()[:12]} on (shard {key[0]}, EE {key[1]}): "
                f"{actual.get(key, 0)} vs reference {reference.get(key, 0)}",
            )
        return not mismatched

    # -- report ---------------------------------------------------------------

    def report(self, slots_run: int, states: Sequence[ShardState], tracker: OutcomeTracker,
               rejections: Counter, oracle_match: Optional[bool]) -> AuditReport:
        outcomes = tracker.outcomes()
        counts = Counter(o.outcome.value for o in outcomes)
        final_issuance = sum(state.total_part_balance() for state in states)
        return AuditReport(
            passed=not self.failures,
            slots_run=slots_run,
            first_failure_slot=min((f.slot for f in self.failures), default=None),
            failures=self.failures[:50],
            genesis_issuance=self.issuance,
            final_issuance=final_issuance,
            outcomes=outcomes,
            outcome_counts=dict(sorted(counts.items())),
            losses=sum(self.lost.values()),
            removed_balances=sum(self.removed.values()),
            negative_part_balances=len(self.negative_cells),
            blocks_accepted=sum(len(v) for v in self.accepted.values()),
            blocks_rejected=sum(len(v) for v in self.rejected.values()),
            rejections=dict(sorted(rejections.items())),
            bytes_fetched_total=self.bytes_total,
            bytes_fetched_max=self.bytes_max,
            oracle_match=oracle_match,
        )


def all_terminal(outcomes: Iterable[TransferOutcome]) -> bool:
    return all(o.outcome in TERMINAL_CLASSES for o in outcomes)
