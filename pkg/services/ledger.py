"""
Netted ledger core: identifiers, value types, canonical encoding and the
pure arithmetic over netted part-states shared by every other service.

A shard keeps a partState matrix of size shards x EEs.  Cell [s][E] of the
matrix held by shard h is h's part of E's balance on shard s; the real balance
of E on s is the sum of that cell over every shard's matrix.  A cross-shard
EE-level transfer is therefore a purely local update on the source shard.

Canonical byte encoding (the bit-exact input to services.merkle):
  - integers are big-endian, fixed width (u32 ids/counts, u64 block numbers,
    u128 amounts, i128 part-balances)
  - records are encoded field by field in declaration order
  - sets are a u32 length prefix followed by their elements in canonical order
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Sequence, Union

if TYPE_CHECKING:
    from services.merkle import MerkleProof

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Widths & limits
# ---------------------------------------------------------------------------

ADDRESS_BYTES = 20
TX_ID_BYTES = 32

AMOUNT_MAX = (1 << 128) - 1
SIGNED_MIN = -(1 << 127)
SIGNED_MAX = (1 << 127) - 1

# Encoded sizes, used for byte accounting of remote reads
ENDPOINT_SIZE = 4 + 4 + ADDRESS_BYTES
EVENT_SIZE = ENDPOINT_SIZE * 2 + 16 + 8 + 4 + TX_ID_BYTES
REVERT_SIZE = ENDPOINT_SIZE * 2 + 16 + TX_ID_BYTES
CELL_FIXED_SIZE = 16 + 4 + 4


# ---------------------------------------------------------------------------
# Custom exceptions
# ---------------------------------------------------------------------------

class StructuralError(Exception):
    """Raised for structural faults: malformed inputs the protocol cannot process."""


class AmountOverflowError(StructuralError):
    """Raised when an amount or part-balance leaves its 128-bit range."""


class ProofError(StructuralError):
    """Raised when a remote read does not verify against its crosslink."""


# ---------------------------------------------------------------------------
# Amount arithmetic
# ---------------------------------------------------------------------------

def checked_amount(value: int) -> int:
    """Return value if it fits an unsigned 128-bit amount."""
    if value < 0 or value > AMOUNT_MAX:
        raise AmountOverflowError(f"amount {value} outside [0, 2^128)")
    return value


def checked_signed(value: int) -> int:
    """Return value if it fits a signed 128-bit part-balance."""
    if value < SIGNED_MIN or value > SIGNED_MAX:
        raise AmountOverflowError(f"part-balance {value} outside signed 128-bit range")
    return value


# ---------------------------------------------------------------------------
# Identifiers
# ---------------------------------------------------------------------------

def user_address(label: str) -> bytes:
    """
    Resolve a scenario user label to a 20-byte address.

    ``0x``-prefixed 40-hex-digit strings are taken literally; any other label
    is hashed so scenario files can use readable names such as ``a3``.
    """
    if label.startswith("0x") and len(label) == 2 + 2 * ADDRESS_BYTES:
        return bytes.fromhex(label[2:])
    return hashlib.sha256(b"user:" + label.encode()).digest()[:ADDRESS_BYTES]


def tx_id(label: str) -> bytes:
    """Resolve a scenario transaction label to a 32-byte TxId."""
    if label.startswith("0x") and len(label) == 2 + 2 * TX_ID_BYTES:
        return bytes.fromhex(label[2:])
    return hashlib.sha256(b"tx:" + label.encode()).digest()


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Endpoint:
    """A user homed on one EE of one shard."""
    shard: int
    ee: int
    user: bytes

    def within(self, n_shards: int, n_ees: int) -> bool:
        return (
            0 <= self.shard < n_shards
            and 0 <= self.ee < n_ees
            and len(self.user) == ADDRESS_BYTES
        )


@dataclass(frozen=True)
class DebitTx:
    """User-submitted half of a transfer, executed on the sender's shard."""
    id: bytes
    sender: Endpoint
    recipient: Endpoint
    amount: int
    signature: bytes = b""

    @property
    def is_local(self) -> bool:
        """Same shard and same EE: settled in one step without the credit path."""
        return self.sender.shard == self.recipient.shard and self.sender.ee == self.recipient.ee


@dataclass(frozen=True)
class ToCreditEvent:
    """System event emitted by a successful debit; authorises the matching credit."""
    sender: Endpoint
    recipient: Endpoint
    amount: int
    block_number: int
    index: int
    tx_id: bytes


@dataclass(frozen=True)
class CreditTx:
    """Destination half of a transfer: the ToCredit event plus its inclusion proof."""
    event: ToCreditEvent
    proof: "MerkleProof"

    @property
    def id(self) -> bytes:
        return self.event.tx_id

    @property
    def amount(self) -> int:
        return self.event.amount


# Either half of a transfer as it appears in a block
Transaction = Union[DebitTx, CreditTx]


@dataclass(frozen=True)
class RevertRecord:
    """Pending user-level refund to originalSender (the debited user)."""
    original_sender: Endpoint
    amount: int
    original_recipient: Endpoint
    tx_id: bytes


@dataclass(frozen=True)
class PartStateCell:
    """
    One cell of the netted matrix.

    credits/reverts are transient: they only ever hold records written by the
    owning shard's most recent block.
    """
    balance: int = 0
    credits: tuple[ToCreditEvent, ...] = ()
    reverts: tuple[RevertRecord, ...] = ()

    def cleared(self) -> "PartStateCell":
        if not self.credits and not self.reverts:
            return self
        return PartStateCell(balance=self.balance)


PartStateMatrix = list[list[PartStateCell]]
OutstandingKey = tuple[int, int, int]   # (src shard, src EE, src block)
BalanceKey = tuple[int, bytes]          # (EE, user address)


def event_sort_key(event: ToCreditEvent) -> tuple:
    return (event.tx_id, event.block_number, event.index)


def revert_sort_key(record: RevertRecord) -> tuple:
    return (record.tx_id, record.original_sender, record.amount)


def canonical_events(events: Iterable[ToCreditEvent]) -> tuple[ToCreditEvent, ...]:
    """Deduplicate and order a set of events canonically."""
    return tuple(sorted(set(events), key=event_sort_key))


def canonical_reverts(records: Iterable[RevertRecord]) -> tuple[RevertRecord, ...]:
    return tuple(sorted(set(records), key=revert_sort_key))


@dataclass
class ShardState:
    """
    Committed state of one shard.

    Mutable only on working copies produced by clone(); committed states handed
    between shards, attesters and the harness are never modified.
    """
    shard_id: int
    block_number: int
    part_state: PartStateMatrix
    outstanding_credits: dict[OutstandingKey, tuple[ToCreditEvent, ...]] = field(default_factory=dict)
    user_balance: dict[BalanceKey, int] = field(default_factory=dict)
    seen_tx_ids: dict[bytes, int] = field(default_factory=dict)

    @property
    def n_shards(self) -> int:
        return len(self.part_state)

    @property
    def n_ees(self) -> int:
        return len(self.part_state[0]) if self.part_state else 0

    def clone(self) -> "ShardState":
        return ShardState(
            shard_id=self.shard_id,
            block_number=self.block_number,
            part_state=[row[:] for row in self.part_state],
            outstanding_credits=dict(self.outstanding_credits),
            user_balance=dict(self.user_balance),
            seen_tx_ids=dict(self.seen_tx_ids),
        )

    def cell(self, shard: int, ee: int) -> PartStateCell:
        return self.part_state[shard][ee]

    def set_cell(self, shard: int, ee: int, cell: PartStateCell) -> None:
        self.part_state[shard][ee] = cell

    def total_part_balance(self) -> int:
        return sum(c.balance for row in self.part_state for c in row)


def empty_matrix(n_shards: int, n_ees: int) -> PartStateMatrix:
    return [[PartStateCell() for _ in range(n_ees)] for _ in range(n_shards)]


# ---------------------------------------------------------------------------
# Netted arithmetic
# ---------------------------------------------------------------------------

def real_balance(part_states: Sequence[PartStateMatrix], target: tuple[int, int]) -> int:
    """
    Real balance of EE target[1] on shard target[0]: the sum over every
    shard's matrix of its cell for target.
    """
    if not part_states:
        raise StructuralError("real_balance needs one matrix per shard, got none")
    n_shards = len(part_states[0])
    n_ees = len(part_states[0][0]) if n_shards else 0
    if len(part_states) != n_shards:
        raise StructuralError(
            f"expected {n_shards} matrices, got {len(part_states)}"
        )
    for matrix in part_states:
        if len(matrix) != n_shards or any(len(row) != n_ees for row in matrix):
            raise StructuralError("partState matrices have mismatched dimensions")
    shard, ee = target
    if not (0 <= shard < n_shards and 0 <= ee < n_ees):
        raise StructuralError(f"target {target} outside {n_shards}x{n_ees} matrix")
    return checked_signed(sum(matrix[shard][ee].balance for matrix in part_states))


def netted_transfer(
    part_state: PartStateMatrix,
    local_shard: int,
    src_ee: int,
    dest: tuple[int, int],
    amount: int,
) -> PartStateMatrix:
    """
    Move amount of EE-level balance from (local_shard, src_ee) to dest by
    updating only the local shard's own matrix.  Returns a new matrix; the
    input is left untouched.  Part-balances may go negative.
    """
    if amount <= 0:
        raise StructuralError(f"netted transfer amount must be positive, got {amount}")
    checked_amount(amount)
    dest_shard, dest_ee = dest
    updated = [row[:] for row in part_state]
    src_cell = updated[local_shard][src_ee]
    updated[local_shard][src_ee] = replace(src_cell, balance=checked_signed(src_cell.balance - amount))
    dest_cell = updated[dest_shard][dest_ee]
    updated[dest_shard][dest_ee] = replace(dest_cell, balance=checked_signed(dest_cell.balance + amount))
    return updated


# ---------------------------------------------------------------------------
# Canonical encoding
# ---------------------------------------------------------------------------

def u32(n: int) -> bytes:
    return n.to_bytes(4, "big")


def u64(n: int) -> bytes:
    return n.to_bytes(8, "big")


def u128(n: int) -> bytes:
    return checked_amount(n).to_bytes(16, "big")


def i128(n: int) -> bytes:
    return checked_signed(n).to_bytes(16, "big", signed=True)


def encode_endpoint(ep: Endpoint) -> bytes:
    return u32(ep.shard) + u32(ep.ee) + ep.user


def encode_event(event: ToCreditEvent) -> bytes:
    return (
        encode_endpoint(event.sender)
        + encode_endpoint(event.recipient)
        + u128(event.amount)
        + u64(event.block_number)
        + u32(event.index)
        + event.tx_id
    )


def encode_revert(record: RevertRecord) -> bytes:
    return (
        encode_endpoint(record.original_sender)
        + u128(record.amount)
        + encode_endpoint(record.original_recipient)
        + record.tx_id
    )


def encode_cell(cell: PartStateCell) -> bytes:
    out = [i128(cell.balance), u32(len(cell.credits))]
    out.extend(encode_event(e) for e in canonical_events(cell.credits))
    out.append(u32(len(cell.reverts)))
    out.extend(encode_revert(r) for r in canonical_reverts(cell.reverts))
    return b"".join(out)


def debit_message(tx: DebitTx) -> bytes:
    """The bytes a debit signature binds: (id, sender, recipient, amount)."""
    return tx.id + encode_endpoint(tx.sender) + encode_endpoint(tx.recipient) + u128(tx.amount)


def encode_state(state: ShardState) -> bytes:
    """Wire encoding of a full ShardState; decode_state is its inverse."""
    out = [
        u32(state.shard_id),
        u64(state.block_number),
        u32(state.n_shards),
        u32(state.n_ees),
    ]
    for row in state.part_state:
        out.extend(encode_cell(cell) for cell in row)

    out.append(u32(len(state.outstanding_credits)))
    for key in sorted(state.outstanding_credits):
        events = canonical_events(state.outstanding_credits[key])
        out.append(u32(key[0]) + u32(key[1]) + u64(key[2]) + u32(len(events)))
        out.extend(encode_event(e) for e in events)

    out.append(u32(len(state.user_balance)))
    for (ee, user) in sorted(state.user_balance):
        out.append(u32(ee) + user + u128(state.user_balance[(ee, user)]))

    out.append(u32(len(state.seen_tx_ids)))
    for txid in sorted(state.seen_tx_ids):
        out.append(txid + u64(state.seen_tx_ids[txid]))
    return b"".join(out)


class _Reader:
    """Cursor over canonical bytes; every short read is a structural error."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        end = self._pos + n
        if end > len(self._data):
            raise StructuralError(f"truncated encoding at offset {self._pos}")
        chunk = self._data[self._pos:end]
        self._pos = end
        return chunk

    def uint(self, width: int) -> int:
        return int.from_bytes(self.take(width), "big")

    def int128(self) -> int:
        return int.from_bytes(self.take(16), "big", signed=True)

    def done(self) -> None:
        if self._pos != len(self._data):
            raise StructuralError(f"{len(self._data) - self._pos} trailing bytes after state")

    def endpoint(self) -> Endpoint:
        return Endpoint(self.uint(4), self.uint(4), self.take(ADDRESS_BYTES))

    def event(self) -> ToCreditEvent:
        return ToCreditEvent(
            sender=self.endpoint(),
            recipient=self.endpoint(),
            amount=self.uint(16),
            block_number=self.uint(8),
            index=self.uint(4),
            tx_id=self.take(TX_ID_BYTES),
        )

    def revert(self) -> RevertRecord:
        return RevertRecord(
            original_sender=self.endpoint(),
            amount=self.uint(16),
            original_recipient=self.endpoint(),
            tx_id=self.take(TX_ID_BYTES),
        )

    def cell(self) -> PartStateCell:
        balance = self.int128()
        credits = tuple(self.event() for _ in range(self.uint(4)))
        reverts = tuple(self.revert() for _ in range(self.uint(4)))
        return PartStateCell(balance, credits, reverts)


def decode_state(data: bytes) -> ShardState:
    reader = _Reader(data)
    shard_id = reader.uint(4)
    block_number = reader.uint(8)
    n_shards = reader.uint(4)
    n_ees = reader.uint(4)
    matrix = [[reader.cell() for _ in range(n_ees)] for _ in range(n_shards)]

    outstanding: dict[OutstandingKey, tuple[ToCreditEvent, ...]] = {}
    for _ in range(reader.uint(4)):
        key = (reader.uint(4), reader.uint(4), reader.uint(8))
        outstanding[key] = tuple(reader.event() for _ in range(reader.uint(4)))

    balances: dict[BalanceKey, int] = {}
    for _ in range(reader.uint(4)):
        ee = reader.uint(4)
        user = reader.take(ADDRESS_BYTES)
        balances[(ee, user)] = reader.uint(16)

    seen: dict[bytes, int] = {}
    for _ in range(reader.uint(4)):
        txid = reader.take(TX_ID_BYTES)
        seen[txid] = reader.uint(8)

    reader.done()
    return ShardState(shard_id, block_number, matrix, outstanding, balances, seen)
