"""
Byzantine Block Proposer: the honest proposer with one step overridden.

Each behaviour corrupts exactly the part of block production an attester
check covers.  When the honest block gives a behaviour nothing to corrupt
(no credits to withhold, no reverts to skip, ...) it falls back to a minimal
fabricated deviation of the same kind where one exists, otherwise it logs a
warning and proposes the honest block.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import replace

from services.beacon import BeaconChain
from services.ledger import (
    CreditTx,
    Endpoint,
    RevertRecord,
    ShardState,
    ToCreditEvent,
)
from services.proposer import (
    ApplyResult,
    BlockContext,
    BlockProposer,
    EventArchive,
    ProposerRules,
)
from services.state_provider import RemoteStateView

logger = logging.getLogger(__name__)

BEHAVIORS = (
    "false-part-balances",
    "false-credits",
    "false-reverts",
    "skip-outstanding-update",
    "skip-revert-processing",
    "wrong-event",
    "wrong-outgoing-credit",
    "stale-outstanding-credit",
    "missing-revert",
    "wrong-ee-transfer",
)

# The attester check each behaviour must trip
EXPECTED_CHECK = {
    "false-part-balances": 1,
    "false-credits": 1,
    "false-reverts": 1,
    "skip-outstanding-update": 2,
    "skip-revert-processing": 3,
    "wrong-event": 4,
    "wrong-outgoing-credit": 5,
    "stale-outstanding-credit": 6,
    "missing-revert": 7,
    "wrong-ee-transfer": 8,
}

_BOGUS_USER = b"\xee" * 20


def _bogus_tx_id(tag: str) -> bytes:
    return hashlib.sha256(b"byzantine:" + tag.encode()).digest()


class ByzantineProposer(BlockProposer):
    def __init__(
        self,
        behavior: str,
        rules: ProposerRules,
        beacon: BeaconChain,
        archive: EventArchive | None = None,
    ) -> None:
        if behavior not in BEHAVIORS:
            raise ValueError(f"unknown byzantine behaviour {behavior!r}")
        super().__init__(rules, beacon, archive)
        self.behavior = behavior

    def _not_applicable(self, ctx: BlockContext) -> None:
        logger.warning(
            "Byzantine %s on shard %d slot %d had nothing to corrupt; block is honest",
            self.behavior, ctx.shard, ctx.slot,
        )

    # -- false views (check 1) ---------------------------------------------

    def check_views(self, views: RemoteStateView) -> None:
        # A BBP builds on whatever it shows; attesters do the checking.
        return None

    def open_context(self, local_state: ShardState, views: RemoteStateView, slot: int) -> BlockContext:
        if self.behavior in ("false-part-balances", "false-credits", "false-reverts"):
            views = self.falsify_views(views)
        return super().open_context(local_state, views, slot)

    def falsify_views(self, views: RemoteStateView) -> RemoteStateView:
        local = views.local_shard
        remote = [n for n in views.shards() if n != local] or views.shards()
        target = next((n for n in remote if views.window(n)), remote[0])
        snaps = list(views.snapshots[target])
        index = len(snaps) - 1
        snap = snaps[index]
        cell = snap.cells[0]
        if self.behavior == "false-part-balances":
            cell = replace(cell, balance=cell.balance + 1)
        elif self.behavior == "false-credits":
            event = ToCreditEvent(
                sender=Endpoint(target, 0, _BOGUS_USER),
                recipient=Endpoint(local, 0, _BOGUS_USER),
                amount=1,
                block_number=snap.slot,
                index=0,
                tx_id=_bogus_tx_id("credit"),
            )
            cell = replace(cell, credits=cell.credits + (event,))
        else:
            record = RevertRecord(
                original_sender=Endpoint(local, 0, _BOGUS_USER),
                amount=1,
                original_recipient=Endpoint(target, 0, _BOGUS_USER),
                tx_id=_bogus_tx_id("revert"),
            )
            cell = replace(cell, reverts=cell.reverts + (record,))
        snaps[index] = replace(snap, cells=(cell,) + snap.cells[1:])
        snapshots = dict(views.snapshots)
        snapshots[target] = tuple(snaps)
        logger.info("Byzantine %s: falsified view of shard %d slot %d", self.behavior, target, snap.slot)
        return replace(views, snapshots=snapshots)

    # -- outstandingCredits (check 2) --------------------------------------

    def ingest_credits(self, ctx: BlockContext) -> None:
        if self.behavior != "skip-outstanding-update":
            return super().ingest_credits(ctx)
        before = dict(ctx.state.outstanding_credits)
        super().ingest_credits(ctx)
        if ctx.state.outstanding_credits != before:
            ctx.state.outstanding_credits = before
            return
        bogus = ToCreditEvent(
            sender=Endpoint(ctx.shard, 0, _BOGUS_USER),
            recipient=Endpoint(ctx.shard, 0, _BOGUS_USER),
            amount=1,
            block_number=ctx.slot - 1,
            index=0,
            tx_id=_bogus_tx_id("outstanding"),
        )
        ctx.state.outstanding_credits[(ctx.shard, 0, ctx.slot - 1)] = (bogus,)

    # -- impending reverts (check 3) ---------------------------------------

    def process_reverts(self, ctx: BlockContext) -> None:
        if self.behavior != "skip-revert-processing":
            return super().process_reverts(ctx)
        return None

    def _has_pending_reverts(self, ctx: BlockContext) -> bool:
        return any(
            cell.reverts
            for n in ctx.views.shards()
            for snap in ctx.views.window(n)
            for cell in snap.cells
        )

    def _bump_untouched_account(self, ctx: BlockContext) -> None:
        touched = set()
        for tx in ctx.txs:
            if isinstance(tx, CreditTx):
                touched.add((tx.event.recipient.ee, tx.event.recipient.user))
            else:
                touched.add((tx.sender.ee, tx.sender.user))
                touched.add((tx.recipient.ee, tx.recipient.user))
        untouched = sorted(k for k in ctx.state.user_balance if k not in touched)
        if not untouched:
            return self._not_applicable(ctx)
        ctx.state.user_balance[untouched[0]] += 1
        return None

    # -- credit consumption (check 6) --------------------------------------

    def apply_credit(self, ctx: BlockContext, tx: CreditTx) -> ApplyResult:
        result = super().apply_credit(ctx, tx)
        if self.behavior == "stale-outstanding-credit" and result == "included":
            event = tx.event
            key = (event.sender.shard, event.sender.ee, event.block_number)
            ctx.state.outstanding_credits[key] = ctx.state.outstanding_credits.get(key, ()) + (event,)
        return result

    # -- EE-level transfer (check 8) ---------------------------------------

    def settle_ee_transfers(self, ctx: BlockContext) -> None:
        if self.behavior != "wrong-ee-transfer":
            return super().settle_ee_transfers(ctx)
        if any(amount > 0 for amount in ctx.scratch.values()):
            logger.info("Byzantine wrong-ee-transfer: skipping settlement on shard %d", ctx.shard)
            return None
        rules = self.rules
        src = ctx.state.cell(ctx.shard, 0)
        dest_shard = (ctx.shard + 1) % rules.n_shards
        dest_ee = 0 if dest_shard != ctx.shard else (1 % rules.n_ees)
        if (dest_shard, dest_ee) == (ctx.shard, 0):
            return self._not_applicable(ctx)
        dest = ctx.state.cell(dest_shard, dest_ee)
        ctx.state.set_cell(ctx.shard, 0, replace(src, balance=src.balance - 1))
        ctx.state.set_cell(dest_shard, dest_ee, replace(dest, balance=dest.balance + 1))
        return None

    # -- events, outgoing credit cells, reverts (checks 4, 5, 7) ------------

    def finalize(self, ctx: BlockContext):
        if self.behavior == "wrong-event":
            self._corrupt_events(ctx)
        elif self.behavior == "wrong-outgoing-credit":
            self._corrupt_outgoing_credits(ctx)
        elif self.behavior == "missing-revert":
            self._drop_reverts(ctx)
        elif self.behavior == "skip-revert-processing" and not self._has_pending_reverts(ctx):
            self._bump_untouched_account(ctx)
        elif self.behavior == "stale-outstanding-credit" and not any(isinstance(tx, CreditTx) for tx in ctx.txs):
            self._not_applicable(ctx)
        return super().finalize(ctx)

    def _corrupt_events(self, ctx: BlockContext) -> None:
        if ctx.events:
            ctx.events[0] = replace(ctx.events[0], amount=ctx.events[0].amount + 1)
            return
        ctx.events.append(ToCreditEvent(
            sender=Endpoint(ctx.shard, 0, _BOGUS_USER),
            recipient=Endpoint((ctx.shard + 1) % self.rules.n_shards, 0, _BOGUS_USER),
            amount=1,
            block_number=ctx.slot,
            index=0,
            tx_id=_bogus_tx_id("event"),
        ))

    def _corrupt_outgoing_credits(self, ctx: BlockContext) -> None:
        matrix = ctx.state.part_state
        for s, row in enumerate(matrix):
            for e, cell in enumerate(row):
                if cell.credits:
                    first = cell.credits[0]
                    ctx.state.set_cell(s, e, replace(
                        cell, credits=(replace(first, amount=first.amount + 1),) + cell.credits[1:],
                    ))
                    return
        target = (ctx.shard + 1) % self.rules.n_shards
        cell = ctx.state.cell(target, 0)
        ctx.state.set_cell(target, 0, replace(cell, credits=cell.credits + (ToCreditEvent(
            sender=Endpoint(ctx.shard, 0, _BOGUS_USER),
            recipient=Endpoint(target, 0, _BOGUS_USER),
            amount=1,
            block_number=ctx.slot,
            index=0,
            tx_id=_bogus_tx_id("outgoing"),
        ),)))

    def _drop_reverts(self, ctx: BlockContext) -> None:
        failed = {
            tx.id for tx, receipt in zip(ctx.txs, ctx.receipts)
            if isinstance(tx, CreditTx) and not receipt.ok
        }
        if not failed:
            return self._not_applicable(ctx)
        for s, row in enumerate(ctx.state.part_state):
            for e, cell in enumerate(row):
                kept = tuple(r for r in cell.reverts if r.tx_id not in failed)
                if len(kept) != len(cell.reverts):
                    ctx.state.set_cell(s, e, replace(cell, reverts=kept))


def make_proposer(
    behavior: str | None,
    rules: ProposerRules,
    beacon: BeaconChain,
    archive: EventArchive | None = None,
) -> BlockProposer:
    if behavior is None:
        return BlockProposer(rules, beacon, archive)
    return ByzantineProposer(behavior, rules, beacon, archive)
