"""
Attester: independent validation of a proposed shard block.

Check 1 (remote part-states) is proof-based and runs first; a block built
on unverifiable views is not re-executed.  Everything else is established by
deterministic re-execution of the block's own transaction list through the
honest proposer, with each divergence attributed to a check:

  1  remote part-states proof-verified against crosslinks
  2  outstandingCredits populated with incoming credits (and expiries)
  3  impending reverts applied to sender balances / recorded as losses
  4  ToCreditEvents emitted for exactly the successful debits
  5  outgoing credit records written to the right partState cells
  6  consumed outstandingCredits entries removed on included credits
  7  a RevertRecord for every failed credit
  8  EE-level netted amounts (and anything else the state root commits)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from services.beacon import BeaconChain
from services.ledger import CreditTx, ShardState, StructuralError
from services.merkle import commit_state
from services.proposer import Block, BlockProposer, Proposal, ProposerRules
from services.state_provider import verify_view

logger = logging.getLogger(__name__)

DEFAULT_QUORUM = Fraction(2, 3)

CHECK_NAMES = {
    1: "remote part-states",
    2: "outstandingCredits update",
    3: "impending reverts",
    4: "ToCredit events",
    5: "outgoing credit records",
    6: "consumed credits removed",
    7: "reverts for failed credits",
    8: "EE-level transfers",
}


@dataclass(frozen=True)
class Violation:
    check: int
    detail: str


@dataclass(frozen=True)
class Verdict:
    valid: bool
    violations: tuple[Violation, ...] = ()

    @property
    def first_check(self) -> Optional[int]:
        return self.violations[0].check if self.violations else None

    def inverted(self) -> "Verdict":
        """What a Byzantine attester reports."""
        if self.valid:
            return Verdict(False, (Violation(8, "byzantine attester dissent"),))
        return Verdict(True)


@dataclass
class _Findings:
    items: list[Violation] = field(default_factory=list)

    def add(self, check: int, detail: str) -> None:
        self.items.append(Violation(check, detail))

    def verdict(self) -> Verdict:
        ordered = tuple(sorted(self.items, key=lambda v: v.check))
        return Verdict(valid=not ordered, violations=ordered)


class Attester:
    """Validates blocks of any shard against the beacon's crosslinks."""

    def __init__(self, rules: ProposerRules, beacon: BeaconChain) -> None:
        self.rules = rules
        self.beacon = beacon
        self._reference = BlockProposer(rules, beacon)

    def validate_block(self, proposal: Proposal, pre_state: ShardState) -> Verdict:
        return self.check(proposal, pre_state)[0]

    def check(self, proposal: Proposal, pre_state: ShardState) -> tuple[Verdict, Optional[Proposal]]:
        """Verdict plus the honest re-execution (None when check 1 failed first)."""
        block, views = proposal.block, proposal.views
        findings = _Findings()

        if views.local_shard != block.shard or views.slot != block.slot or views.window_start != pre_state.block_number:
            findings.add(1, "views were not opened for this shard, slot and parent block")
            return findings.verdict(), None
        view_check = verify_view(views, self.beacon, self.rules.n_shards, self.rules.n_ees)
        if not view_check.ok:
            findings.add(1, view_check.detail)
            return findings.verdict(), None

        if block.parent_state_root != commit_state(pre_state):
            findings.add(8, "parent state root does not match the attester's pre-state")

        try:
            expected = self._reference.execute(pre_state, views, block.txs, block.slot)
        except StructuralError as exc:
            findings.add(8, f"re-execution aborted: {exc}")
            return findings.verdict(), None

        self._compare_selection(expected, findings)
        self._compare_block(block, expected.block, findings)
        if proposal.post_state is not None:
            self._compare_state(block, expected.block, proposal.post_state, expected.post_state, findings)
        elif block.post_state_root != expected.block.post_state_root and not findings.items:
            findings.add(8, "post-state root diverges from re-execution")
        return findings.verdict(), expected

    # -- comparisons ----------------------------------------------------------

    def _compare_selection(self, expected: Proposal, findings: _Findings) -> None:
        for skip in expected.skipped:
            tx_id = skip.tx.id.hex()[:12]
            if skip.reason == "bad-proof":
                findings.add(1, f"credit {tx_id} carries a proof that does not verify")
            elif skip.reason == "not-pending":
                findings.add(6, f"credit {tx_id} is not pending in outstandingCredits")
            else:
                findings.add(8, f"tx {tx_id} cannot be included ({skip.reason})")

    def _compare_block(self, block: Block, honest: Block, findings: _Findings) -> None:
        honest_receipts = {tx.id: r for tx, r in zip(honest.txs, honest.receipts)}
        if len(block.receipts) != len(block.txs):
            findings.add(4, "receipt count does not match transaction count")
        for tx, claimed in zip(block.txs, block.receipts):
            actual = honest_receipts.get(tx.id)
            if actual is None or actual == claimed:
                continue
            check = 7 if isinstance(tx, CreditTx) else 4
            findings.add(check, f"receipt for {tx.id.hex()[:12]} is {claimed.status}, expected {actual.status}")

        if block.events != honest.events:
            findings.add(4, f"emitted {len(block.events)} events, expected {len(honest.events)} or different data")
        elif block.event_root != honest.event_root:
            findings.add(4, "event root does not commit to the emitted events")
        if block.expired != honest.expired:
            findings.add(2, "expired credits differ")
        if block.refunds != honest.refunds:
            findings.add(3, "user-level refunds differ")
        if block.ee_transfers != honest.ee_transfers:
            findings.add(8, "EE-level transfers differ from per-pair contributions")

    def _compare_state(
        self,
        block: Block,
        honest_block: Block,
        claimed: ShardState,
        honest: ShardState,
        findings: _Findings,
    ) -> None:
        if commit_state(claimed) != block.post_state_root:
            findings.add(8, "claimed post-state does not match the block's post-state root")

        credited = {
            (tx.event.sender.shard, tx.event.sender.ee, tx.event.block_number)
            for tx in block.txs if isinstance(tx, CreditTx)
        }
        for key in sorted(set(claimed.outstanding_credits) | set(honest.outstanding_credits)):
            if set(claimed.outstanding_credits.get(key, ())) != set(honest.outstanding_credits.get(key, ())):
                check = 6 if key in credited else 2
                findings.add(check, f"outstandingCredits entry {key} differs")

        debit_senders = {(tx.sender.ee, tx.sender.user) for tx in block.txs if not isinstance(tx, CreditTx)}
        refunded = {(r.account.ee, r.account.user) for r in block.refunds + honest_block.refunds}
        credited_accounts = {
            (tx.event.recipient.ee, tx.event.recipient.user) for tx in block.txs if isinstance(tx, CreditTx)
        }
        for key in sorted(set(claimed.user_balance) | set(honest.user_balance)):
            if claimed.user_balance.get(key) == honest.user_balance.get(key):
                continue
            if key in refunded:
                check = 3
            elif key in debit_senders:
                check = 4
            elif key in credited_accounts:
                check = 6
            else:
                check = 3
            findings.add(check, f"balance of user {key[1].hex()[:12]} on EE {key[0]} differs")

        if claimed.n_shards != honest.n_shards or claimed.n_ees != honest.n_ees:
            findings.add(8, "partState dimensions differ")
        else:
            for s in range(honest.n_shards):
                for e in range(honest.n_ees):
                    mine, theirs = claimed.cell(s, e), honest.cell(s, e)
                    if set(mine.credits) != set(theirs.credits):
                        findings.add(5, f"credits in cell [{s}][{e}] differ")
                    if set(mine.reverts) != set(theirs.reverts):
                        findings.add(7, f"reverts in cell [{s}][{e}] differ")
                    if mine.balance != theirs.balance:
                        findings.add(8, f"part-balance of cell [{s}][{e}] is {mine.balance}, expected {theirs.balance}")

        if claimed.seen_tx_ids != honest.seen_tx_ids:
            findings.add(4, "seen TxId window differs")
        if claimed.block_number != honest.block_number or claimed.shard_id != honest.shard_id:
            findings.add(8, "post-state header differs")
        if not findings.items and block.post_state_root != honest_block.post_state_root:
            findings.add(8, "post-state root diverges from re-execution")


def committee_decide(verdicts: Sequence[Verdict], quorum: Fraction = DEFAULT_QUORUM) -> bool:
    """Accepted iff the fraction of valid verdicts reaches the quorum."""
    if not verdicts:
        raise ValueError("committee must not be empty")
    valid = sum(1 for v in verdicts if v.valid)
    return Fraction(valid, len(verdicts)) >= quorum


def parse_quorum(text: str) -> Fraction:
    """'2/3' → Fraction(2, 3); must lie in (0, 1]."""
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"invalid quorum {text!r}") from exc
    if not 0 < value <= 1:
        raise ValueError(f"quorum {text!r} must lie in (0, 1]")
    return value
