"""
Netted Ledger Simulator — Pydantic schemas for scenario files and reports.

These schemas standardise the shapes exchanged between scenario files, the
HTTP API, the CLI and the simulator core.  Cross-field consistency (genesis
balance, id bounds, injection targets) is checked in services.scenario.
"""

from __future__ import annotations

from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, model_validator


# ---------------------------------------------------------------------------
# Enums
# ---------------------------------------------------------------------------

class InjectionKind(str, Enum):
    """Fault a scenario injects at a given slot or for a given transaction."""
    BYZANTINE_BP = "byzantine-bp"
    CREDIT_EXEC_FAIL = "credit-exec-fail"
    DEBIT_EXEC_FAIL = "debit-exec-fail"
    REMOVE_ACCOUNT = "remove-account"
    BYZANTINE_ATTESTER = "byzantine-attester"
    WITHHOLD_CREDIT = "withhold-credit"


class ByzantineBehavior(str, Enum):
    FALSE_PART_BALANCES = "false-part-balances"
    FALSE_CREDITS = "false-credits"
    FALSE_REVERTS = "false-reverts"
    SKIP_OUTSTANDING_UPDATE = "skip-outstanding-update"
    SKIP_REVERT_PROCESSING = "skip-revert-processing"
    WRONG_EVENT = "wrong-event"
    WRONG_OUTGOING_CREDIT = "wrong-outgoing-credit"
    STALE_OUTSTANDING_CREDIT = "stale-outstanding-credit"
    MISSING_REVERT = "missing-revert"
    WRONG_EE_TRANSFER = "wrong-ee-transfer"


class OutcomeClass(str, Enum):
    NOT_INCLUDED = "NOT-INCLUDED"
    DEBIT_FAILED = "DEBIT-FAILED"
    COMPLETED = "COMPLETED"
    REVERTED = "REVERTED"
    LOST = "LOST"
    IN_FLIGHT = "IN-FLIGHT"


TERMINAL_CLASSES = frozenset({
    OutcomeClass.NOT_INCLUDED,
    OutcomeClass.DEBIT_FAILED,
    OutcomeClass.COMPLETED,
    OutcomeClass.REVERTED,
    OutcomeClass.LOST,
})


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

class EndpointSpec(BaseModel):
    """A user on one EE of one shard; ``user`` is a label or 0x-address."""
    shard: int = Field(..., ge=0)
    ee: int = Field(..., ge=0)
    user: str = Field(..., min_length=1)


class GenesisUser(BaseModel):
    account: EndpointSpec
    balance: int = Field(..., ge=0, lt=2**128)


class GenesisCell(BaseModel):
    """Part-balance of (shard, ee) held in ``holder``'s matrix; may be negative."""
    holder: int = Field(..., ge=0)
    shard: int = Field(..., ge=0)
    ee: int = Field(..., ge=0)
    balance: int = Field(..., ge=-(2**127), lt=2**127)


class GenesisSpec(BaseModel):
    users: list[GenesisUser] = Field(default_factory=list)
    cells: list[GenesisCell] = Field(
        default_factory=list,
        description="Explicit part-balances; when empty each (shard, EE) is held entirely by its own shard",
    )


class TransferSpec(BaseModel):
    submit_slot: int = Field(..., ge=1, description="Slot at which the debit enters the sender shard's pool")
    tx_id: str = Field(..., min_length=1)
    sender: EndpointSpec
    recipient: EndpointSpec
    amount: int = Field(..., gt=0, lt=2**128)
    forge_signature: bool = Field(default=False, description="Sign with a key other than the sender's")


class FaultInjection(BaseModel):
    kind: InjectionKind
    behavior: Optional[ByzantineBehavior] = None
    shard: Optional[int] = Field(None, ge=0)
    slot: Optional[int] = Field(None, ge=1)
    tx_id: Optional[str] = None
    account: Optional[EndpointSpec] = None
    index: Optional[int] = Field(None, ge=0, description="Attester index within the shard committee")

    @model_validator(mode="after")
    def _fields_for_kind(self) -> "FaultInjection":
        required = {
            InjectionKind.BYZANTINE_BP: ("behavior", "shard", "slot"),
            InjectionKind.CREDIT_EXEC_FAIL: ("tx_id",),
            InjectionKind.DEBIT_EXEC_FAIL: ("tx_id",),
            InjectionKind.WITHHOLD_CREDIT: ("tx_id",),
            InjectionKind.REMOVE_ACCOUNT: ("account", "slot"),
            InjectionKind.BYZANTINE_ATTESTER: ("shard", "index"),
        }[self.kind]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind.value} injection needs {', '.join(missing)}")
        return self


class ScenarioConfig(BaseModel):
    """
    A complete simulation input: topology, protocol parameters, genesis,
    scheduled transfers and injected faults.
    """

    shards: int = Field(..., ge=1, le=64)
    ees: int = Field(..., ge=1, le=64)
    time_out: int = Field(default=4, description="Blocks after which a pending credit expires")
    max_block_txs: int = Field(default=128, ge=1)
    quorum: str = Field(default="2/3", description="Fraction of valid verdicts needed to accept")
    attesters_per_shard: int = Field(default=4, ge=1)
    selection_policy: str = Field(default="fifo", pattern=r"^(fifo|reverse)$")
    literal_pair_gate: bool = Field(default=False, description="Use the per-pair solvency gate")
    seed: int = Field(default=0, ge=0, lt=2**64, description="Seeds the random execution failures below")
    random_debit_fail_rate: float = Field(default=0.0, ge=0.0, le=1.0, description="Seeded share of debits whose execution fails")
    random_credit_fail_rate: float = Field(default=0.0, ge=0.0, le=1.0, description="Seeded share of credits whose execution fails")
    slots: int = Field(default=40, ge=1)
    genesis: GenesisSpec = Field(default_factory=GenesisSpec)
    transfers: list[TransferSpec] = Field(default_factory=list)
    injections: list[FaultInjection] = Field(default_factory=list)

    class Config:
        json_schema_extra = {
            "example": {
                "shards": 2,
                "ees": 2,
                "time_out": 4,
                "slots": 12,
                "genesis": {"users": [
                    {"account": {"shard": 0, "ee": 1, "user": "a1"}, "balance": 100},
                    {"account": {"shard": 1, "ee": 1, "user": "b1"}, "balance": 50},
                ]},
                "transfers": [{
                    "submit_slot": 1, "tx_id": "t1",
                    "sender": {"shard": 0, "ee": 1, "user": "a1"},
                    "recipient": {"shard": 1, "ee": 1, "user": "b1"},
                    "amount": 10,
                }],
            }
        }


class GenerateRequest(BaseModel):
    """Parameters of the seeded random scenario generator."""
    seed: int = Field(default=0, ge=0, lt=2**64)
    shards: int = Field(default=3, ge=1, le=16)
    ees: int = Field(default=2, ge=1, le=16)
    transfers: int = Field(default=100, ge=0)
    users: int = Field(default=100, ge=1)
    credit_fail_rate: float = Field(default=0.05, ge=0.0, le=1.0)
    debit_fail_rate: float = Field(default=0.02, ge=0.0, le=1.0)
    removals: int = Field(default=0, ge=0)
    withhold_rate: float = Field(default=0.0, ge=0.0, le=1.0)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

class TransferOutcome(BaseModel):
    tx_id: str
    outcome: OutcomeClass = Field(..., alias="class")
    debit_slot: Optional[int] = None
    credit_slot: Optional[int] = None
    revert_slot: Optional[int] = None
    failure_slot: Optional[int] = Field(None, description="Slot of the failed credit or the expiry")
    amount: int = 0

    model_config = {"populate_by_name": True}


class AuditFailure(BaseModel):
    slot: int
    check: str
    detail: str


class AuditReport(BaseModel):
    passed: bool = True
    slots_run: int = 0
    first_failure_slot: Optional[int] = None
    failures: list[AuditFailure] = Field(default_factory=list)
    genesis_issuance: int = 0
    final_issuance: int = 0
    outcomes: list[TransferOutcome] = Field(default_factory=list)
    outcome_counts: dict[str, int] = Field(default_factory=dict)
    losses: int = Field(default=0, description="Total value of refunds lost to removed accounts")
    removed_balances: int = Field(default=0, description="Total user balance deleted by account removals")
    negative_part_balances: int = Field(default=0, description="Cells observed below zero")
    blocks_accepted: int = 0
    blocks_rejected: int = 0
    rejections: dict[str, int] = Field(default_factory=dict, description="Rejected blocks by first failed check")
    bytes_fetched_total: int = 0
    bytes_fetched_max: int = 0
    oracle_match: Optional[bool] = None


class VerifyReport(BaseModel):
    blocks_checked: int = 0
    mismatches: list[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches
