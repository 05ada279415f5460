"""
Lockstep multi-shard simulation harness.

Each slot t runs as a sequence of barriers:
  (a) the beacon advances to t and scheduled transfers enter their pools
  (b) slot-t injections apply (account removal, Byzantine proposers)
  (c) every shard's proposer builds block t from slot-(t−1) views
  (d) each shard's committee validates; accepted blocks advance the shard,
      register their crosslink and leave the pool
  (e) outcomes are tracked and the audit oracle runs

verify_trace replays a recorded run through the same bookkeeping and
re-validates every accepted block by deterministic re-execution.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

from models.schemas import (
    AuditReport,
    InjectionKind,
    OutcomeClass,
    ScenarioConfig,
    VerifyReport,
)
from services.attester import Attester, Verdict, committee_decide, parse_quorum
from services.audit import Auditor, OutcomeTracker
from services.beacon import BeaconChain, Crosslink
from services.byzantine import make_proposer
from services.ledger import ShardState, StructuralError, ToCreditEvent, tx_id, user_address
from services.merkle import EMPTY_ROOT
from services.proposer import PoolEntry, Proposal, ProposerRules, ScenarioHook
from services.scenario import (
    genesis_issuance,
    genesis_states,
    parse_scenario,
    resolve_endpoint,
    resolve_transfer,
)
from services.signatures import DEFAULT_SCHEME, sign_debit
from services.state_provider import StateProvider
from services.trace_store import (
    TRACE_VERSION,
    TraceWriter,
    block_from_dict,
    block_to_dict,
    crosslink_to_dict,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_AUDIT_FAILED = 1
EXIT_STRUCTURAL = 2


class BlockArchive:
    """Events of accepted blocks, kept while their credits can still be pending."""

    def __init__(self) -> None:
        self._events: dict[tuple[int, int], tuple[ToCreditEvent, ...]] = {}
        self.sizes: dict[tuple[int, int], tuple[int, int]] = {}

    def add(self, shard: int, slot: int, events: Sequence[ToCreditEvent], txs: int, expired: int) -> None:
        self._events[(shard, slot)] = tuple(events)
        self.sizes[(shard, slot)] = (txs, expired)

    def events(self, shard: int, slot: int) -> Optional[tuple[ToCreditEvent, ...]]:
        return self._events.get((shard, slot))

    def prune(self, events_before: int, sizes_before: int) -> None:
        for key in [k for k in self._events if k[1] < events_before]:
            del self._events[key]
        for key in [k for k in self.sizes if k[1] < sizes_before]:
            del self.sizes[key]


@dataclass
class SlotSummary:
    slot: int
    accepted: dict[int, bool] = field(default_factory=dict)
    verdicts: dict[int, Verdict] = field(default_factory=dict)
    bytes_fetched: dict[int, int] = field(default_factory=dict)


def rules_for(config: ScenarioConfig) -> ProposerRules:
    failing_debits, failing_credits, withheld = set(), set(), set()
    for inj in config.injections:
        target = {
            InjectionKind.DEBIT_EXEC_FAIL: failing_debits,
            InjectionKind.CREDIT_EXEC_FAIL: failing_credits,
            InjectionKind.WITHHOLD_CREDIT: withheld,
        }.get(inj.kind)
        if target is not None:
            target.add(tx_id(inj.tx_id))
    return ProposerRules(
        n_shards=config.shards,
        n_ees=config.ees,
        time_out=config.time_out,
        max_block_txs=config.max_block_txs,
        literal_pair_gate=config.literal_pair_gate,
        selection_policy=config.selection_policy,
        scheme=DEFAULT_SCHEME,
        hook=ScenarioHook(
            failing_debits=frozenset(failing_debits),
            failing_credits=frozenset(failing_credits),
            seed=config.seed,
            debit_fail_rate=config.random_debit_fail_rate,
            credit_fail_rate=config.random_credit_fail_rate,
        ),
        withheld_credits=frozenset(withheld),
    )


class World:
    """All mutable simulation state for one run."""

    def __init__(
        self,
        config: ScenarioConfig,
        trace: Optional[TraceWriter] = None,
        audit_every_slot: bool = False,
    ) -> None:
        self.config = config
        self.rules = rules_for(config)
        self.quorum = parse_quorum(config.quorum)
        self.trace = trace or TraceWriter()
        self.audit_every_slot = audit_every_slot

        self.beacon = BeaconChain()
        self.provider = StateProvider(self.beacon)
        self.archive = BlockArchive()
        self.attester = Attester(self.rules, self.beacon)
        self.states: list[ShardState] = genesis_states(config)
        self.pools: dict[int, list[PoolEntry]] = defaultdict(list)
        self.tracker = OutcomeTracker()
        self.rejections: Counter = Counter()
        self.slot = 0
        self._seq = 0

        self.scheduled: dict[int, list] = defaultdict(list)
        for spec in config.transfers:
            self.scheduled[spec.submit_slot].append(spec)
        self.removals: dict[int, list] = defaultdict(list)
        self.byzantine_bp: dict[tuple[int, int], str] = {}
        self.byzantine_attesters: set[tuple[int, int]] = set()
        for inj in config.injections:
            if inj.kind is InjectionKind.REMOVE_ACCOUNT:
                self.removals[inj.slot].append(inj.account)
            elif inj.kind is InjectionKind.BYZANTINE_BP:
                self.byzantine_bp[(inj.shard, inj.slot)] = inj.behavior.value
            elif inj.kind is InjectionKind.BYZANTINE_ATTESTER:
                self.byzantine_attesters.add((inj.shard, inj.index))

        genesis_accounts = {
            (state.shard_id, ee, user): amount
            for state in self.states
            for (ee, user), amount in state.user_balance.items()
        }
        self.auditor = Auditor(
            issuance=genesis_issuance(config),
            n_shards=config.shards,
            n_ees=config.ees,
            time_out=config.time_out,
            genesis_balances=genesis_accounts,
        )

        for state in self.states:
            root = self.provider.publish(state)
            self._register(Crosslink(state.shard_id, 0, root, EMPTY_ROOT))

    # -- helpers --------------------------------------------------------------

    def _register(self, link: Crosslink) -> None:
        result = self.beacon.submit_crosslink(link)
        if not result.accepted:
            raise StructuralError(f"crosslink for shard {link.shard} slot {link.slot} rejected: {result.reason}")
        self.trace.write("crosslink", **crosslink_to_dict(link))

    def _deliver_transfers(self, slot: int) -> None:
        for spec in self.scheduled.pop(slot, []):
            tx = resolve_transfer(spec)
            signer = user_address("forger:" + spec.tx_id) if spec.forge_signature else None
            tx = sign_debit(tx, self.rules.scheme, signer)
            self.tracker.register(spec.tx_id, tx, slot)
            self.pools[tx.sender.shard].append(PoolEntry(tx=tx, arrival=slot, seq=self._seq))
            self._seq += 1

    def _apply_removals(self, slot: int) -> None:
        for spec in self.removals.pop(slot, []):
            ep = resolve_endpoint(spec)
            state = self.states[ep.shard]
            balance = state.user_balance.get((ep.ee, ep.user))
            if balance is None:
                logger.info("Slot %d: account %s already absent", slot, spec.user)
                continue
            state = state.clone()
            del state.user_balance[(ep.ee, ep.user)]
            self.states[ep.shard] = state
            self.auditor.record_removal(ep.shard, ep.ee, ep.user, balance)
            logger.info("Slot %d: removed account %s on (shard %d, EE %d) holding %d", slot, spec.user, ep.shard, ep.ee, balance)

    def committee_verdicts(self, shard: int, proposal: Proposal, pre_state: ShardState) -> tuple[Verdict, list[Verdict]]:
        """The honest verdict and what each committee member reports."""
        honest = self.attester.validate_block(proposal, pre_state)
        return honest, [
            honest.inverted() if (shard, index) in self.byzantine_attesters else honest
            for index in range(self.config.attesters_per_shard)
        ]

    # -- one slot -------------------------------------------------------------

    def begin_slot(self) -> int:
        """Phases (a) and (b): advance the clock, fill pools, apply injections."""
        slot = self.beacon.advance_slot()
        self.slot = slot
        self._deliver_transfers(slot)
        self._apply_removals(slot)
        return slot

    def propose(self, shard: int, slot: int, behavior: Optional[str] = None) -> Proposal:
        """Phase (c) for one shard; ``behavior`` overrides the scenario's Byzantine schedule."""
        behavior = behavior or self.byzantine_bp.get((shard, slot))
        state = self.states[shard]
        proposer = make_proposer(behavior, self.rules, self.beacon, self.archive)
        views = self.provider.build_view(state, slot)
        if behavior:
            logger.info("Slot %d: shard %d proposer is byzantine (%s)", slot, shard, behavior)
        return proposer.propose_block(state, views, self.pools[shard], slot)

    def step_slot(self) -> SlotSummary:
        slot = self.begin_slot()
        summary = SlotSummary(slot=slot)

        proposals: dict[int, Proposal] = {}
        for state in self.states:
            proposals[state.shard_id] = self.propose(state.shard_id, slot)
            summary.bytes_fetched[state.shard_id] = proposals[state.shard_id].views.bytes_fetched

        decisions: dict[int, bool] = {}
        for shard, proposal in proposals.items():
            honest, verdicts = self.committee_verdicts(shard, proposal, self.states[shard])
            accepted = committee_decide(verdicts, self.quorum)
            decisions[shard] = accepted
            summary.verdicts[shard] = honest
            self.trace.write(
                "block",
                block=block_to_dict(proposal.block),
                proposer=self.byzantine_bp.get((shard, slot), "honest"),
            )
            self.trace.write(
                "verdict",
                shard=shard,
                slot=slot,
                verdicts=[
                    {"valid": v.valid, "violations": [{"check": x.check, "detail": x.detail} for x in v.violations]}
                    for v in verdicts
                ],
            )
            self.trace.write("decision", shard=shard, slot=slot, accepted=accepted)
            if not accepted:
                first = honest.first_check
                self.rejections[str(first) if first is not None else "quorum"] += 1
                logger.warning(
                    "Slot %d: shard %d block rejected (check %s)", slot, shard,
                    first if first is not None else "n/a",
                )

        for shard in sorted(proposals):
            proposal = proposals[shard]
            block = proposal.block
            self.auditor.record_decision(block, decisions[shard])
            summary.accepted[shard] = decisions[shard]
            if not decisions[shard]:
                continue
            self.auditor.check_block(block, proposal.post_state, proposal.views, self.archive.sizes)
            self.states[shard] = proposal.post_state
            root = self.provider.publish(proposal.post_state)
            self._register(Crosslink(shard, slot, root, block.event_root))
            self.archive.add(shard, slot, block.events, len(block.txs), len(block.expired))
            included = {tx.id for tx in block.txs}
            self.pools[shard] = [e for e in self.pools[shard] if e.tx.id not in included]
            self.tracker.observe(block)

        self.trace.write("slot", slot=slot, bytes_fetched={str(k): v for k, v in sorted(summary.bytes_fetched.items())})
        self.auditor.check_slot(slot, self.states, self.tracker, full=self.audit_every_slot)
        if self.audit_every_slot:
            self.trace.write("audit", slot=slot, passed=not self.auditor.failures, failures=len(self.auditor.failures))

        self.provider.prune(self.states)
        self.archive.prune(slot - self.config.time_out, min(s.block_number for s in self.states))
        return summary

    # -- whole run --------------------------------------------------------------

    def finish(self) -> AuditReport:
        slot = self.slot
        auditor = self.auditor
        auditor.check_solvency(slot, self.states)
        auditor.check_revert_timing(slot, self.tracker)
        quiescent = auditor.check_reconciliation(slot, self.states, self.tracker)
        oracle_match = auditor.check_oracle(slot, self.states, self.tracker) if quiescent else None
        report = auditor.report(slot, self.states, self.tracker, self.rejections, oracle_match)
        for outcome in report.outcomes:
            self.trace.write("outcome", **outcome.model_dump(mode="json", by_alias=True))
        self.trace.write(
            "audit",
            slot=slot,
            passed=report.passed,
            failures=[f.model_dump(mode="json") for f in report.failures],
        )
        return report


def run(
    config: ScenarioConfig,
    trace_stream: Optional[TextIO] = None,
    audit_every_slot: bool = False,
) -> tuple[AuditReport, int, TraceWriter]:
    """Execute config.slots slots; returns (report, exit code, trace writer)."""
    trace = TraceWriter(trace_stream)
    trace.write("header", version=TRACE_VERSION, scenario=config.model_dump(mode="json"))
    try:
        world = World(config, trace, audit_every_slot)
        for _ in range(config.slots):
            world.step_slot()
        report = world.finish()
    except StructuralError as exc:
        logger.error("Structural fault: %s", exc)
        trace.write("summary", exit_code=EXIT_STRUCTURAL, error=str(exc))
        raise
    exit_code = EXIT_OK if report.passed else EXIT_AUDIT_FAILED
    trace.write(
        "summary",
        exit_code=exit_code,
        outcome_counts=report.outcome_counts,
        blocks_accepted=report.blocks_accepted,
        blocks_rejected=report.blocks_rejected,
    )
    logger.info(
        "Run finished after %d slots: %s, outcomes %s",
        config.slots, "PASS" if report.passed else "FAIL", report.outcome_counts,
    )
    return report, exit_code, trace


# ---------------------------------------------------------------------------
# Trace verification
# ---------------------------------------------------------------------------

def verify_trace(records: Sequence[dict]) -> VerifyReport:
    """Re-validate every accepted block of a recorded run."""
    if not records or records[0].get("type") != "header":
        raise StructuralError("trace does not start with a header record")
    config = parse_scenario(records[0]["scenario"])
    world = World(config)
    report = VerifyReport()

    blocks: dict[int, dict[int, dict]] = defaultdict(dict)
    decisions: dict[tuple[int, int], bool] = {}
    crosslinks: dict[tuple[int, int], dict] = {}
    last_slot = 0
    for record in records[1:]:
        kind = record["type"]
        if kind == "block":
            data = record["block"]
            blocks[int(data["slot"])][int(data["shard"])] = data
            last_slot = max(last_slot, int(data["slot"]))
        elif kind == "decision":
            decisions[(int(record["shard"]), int(record["slot"]))] = bool(record["accepted"])
        elif kind == "crosslink":
            crosslinks[(int(record["shard"]), int(record["slot"]))] = record

    for slot in range(1, last_slot + 1):
        world.slot = world.beacon.advance_slot()
        world._apply_removals(slot)
        accepted_blocks = []
        for shard in sorted(blocks.get(slot, {})):
            if not decisions.get((shard, slot), False):
                continue
            block = block_from_dict(blocks[slot][shard])
            pre_state = world.states[shard]
            views = world.provider.build_view(pre_state, slot)
            report.blocks_checked += 1
            verdict, replayed = world.attester.check(Proposal(block=block, views=views), pre_state)
            if not verdict.valid:
                report.mismatches.append(
                    f"shard {shard} slot {slot}: check {verdict.first_check}: {verdict.violations[0].detail}"
                )
                continue
            if block.bytes_fetched != views.bytes_fetched:
                report.mismatches.append(
                    f"shard {shard} slot {slot}: bytes_fetched {block.bytes_fetched}, replay {views.bytes_fetched}"
                )
            accepted_blocks.append((shard, block, replayed))

        for shard, block, replayed in accepted_blocks:
            world.states[shard] = replayed.post_state
            root = world.provider.publish(replayed.post_state)
            link = Crosslink(shard, slot, root, block.event_root)
            recorded = crosslinks.get((shard, slot))
            if recorded is not None and recorded != {"type": "crosslink", **crosslink_to_dict(link)}:
                report.mismatches.append(f"shard {shard} slot {slot}: recorded crosslink differs from replay")
            world.beacon.submit_crosslink(link)
        world.provider.prune(world.states)

    logger.info("Verified %d blocks, %d mismatches", report.blocks_checked, len(report.mismatches))
    return report


def final_outcomes(report: AuditReport) -> dict[str, OutcomeClass]:
    return {o.tx_id: o.outcome for o in report.outcomes}
