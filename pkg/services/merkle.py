"""
Merkle commitments over shard states and block events.

Binary SHA-256 tree; leaves are hashed as H(0x00 || leaf) and interior nodes
as H(0x01 || left || right).  An odd node at any level is paired with itself.
The empty tree commits to H(b"").

State leaves, in order:
  1. every partState cell, row-major ([0][0], [0][1], ...), so cell [s][e]
     always sits at leaf index s * n_ees + e
  2. every outstandingCredits entry, keys ascending
  3. every userBalance entry, (EE, address) ascending
  4. every seen TxId, ascending
  5. (shard id, block number)
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Sequence

from services.ledger import (
    PartStateCell,
    ShardState,
    StructuralError,
    ToCreditEvent,
    canonical_events,
    encode_cell,
    encode_event,
    u128,
    u32,
    u64,
)

logger = logging.getLogger(__name__)

HASH_BYTES = 32
LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
EMPTY_ROOT = hashlib.sha256(b"").digest()

# Leaf kind tags for state leaves
_CELL_TAG = b"C"
_OUTSTANDING_TAG = b"O"
_BALANCE_TAG = b"U"
_SEEN_TAG = b"T"
_HEIGHT_TAG = b"N"

CELL_LEAF_FIXED_SIZE = 1 + 4 + 4
PROOF_FIXED_SIZE = 8 + 8


class ProofIndexError(StructuralError, IndexError):
    """Raised when a proof is requested for a leaf that does not exist."""


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    siblings: tuple[bytes, ...]
    leaf_count: int

    @property
    def size(self) -> int:
        """Encoded size in bytes (index, count, siblings)."""
        return PROOF_FIXED_SIZE + HASH_BYTES * len(self.siblings)


def _leaf_hash(leaf: bytes) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + leaf).digest()


def _node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def tree_depth(leaf_count: int) -> int:
    """ceil(log2(leaf_count)); 0 for a single leaf."""
    return (leaf_count - 1).bit_length() if leaf_count > 0 else 0


class MerkleTree:
    """All levels of one tree, kept so repeated proofs are cheap."""

    def __init__(self, leaves: Sequence[bytes]) -> None:
        self.leaves = list(leaves)
        self._levels: list[list[bytes]] = []
        if not self.leaves:
            return
        level = [_leaf_hash(leaf) for leaf in self.leaves]
        self._levels.append(level)
        while len(level) > 1:
            level = [
                _node_hash(level[i], level[i + 1] if i + 1 < len(level) else level[i])
                for i in range(0, len(level), 2)
            ]
            self._levels.append(level)

    @property
    def leaf_count(self) -> int:
        return len(self.leaves)

    @property
    def root(self) -> bytes:
        if not self._levels:
            return EMPTY_ROOT
        return self._levels[-1][0]

    def proof(self, index: int) -> MerkleProof:
        if not 0 <= index < len(self.leaves):
            raise ProofIndexError(f"leaf index {index} outside [0, {len(self.leaves)})")
        siblings = []
        position = index
        for level in self._levels[:-1]:
            sibling = position ^ 1
            if sibling >= len(level):
                sibling = position
            siblings.append(level[sibling])
            position //= 2
        return MerkleProof(leaf_index=index, siblings=tuple(siblings), leaf_count=len(self.leaves))


# ---------------------------------------------------------------------------
# Functional API
# ---------------------------------------------------------------------------

def build_root(leaves: Sequence[bytes]) -> bytes:
    return MerkleTree(leaves).root


def prove(leaves: Sequence[bytes], index: int) -> MerkleProof:
    return MerkleTree(leaves).proof(index)


def verify(root: bytes, leaf: bytes, proof: MerkleProof) -> bool:
    """True iff walking leaf up through proof.siblings reproduces root."""
    try:
        if proof.leaf_count < 1 or not 0 <= proof.leaf_index < proof.leaf_count:
            return False
        if len(proof.siblings) != tree_depth(proof.leaf_count):
            return False
        node = _leaf_hash(leaf)
        index = proof.leaf_index
        for sibling in proof.siblings:
            if len(sibling) != HASH_BYTES:
                return False
            node = _node_hash(node, sibling) if index % 2 == 0 else _node_hash(sibling, node)
            index //= 2
        return node == root
    except (TypeError, AttributeError):
        return False


# ---------------------------------------------------------------------------
# State & event commitments
# ---------------------------------------------------------------------------

def cell_leaf_index(shard: int, ee: int, n_ees: int) -> int:
    return shard * n_ees + ee


def encode_cell_leaf(shard: int, ee: int, cell: PartStateCell) -> bytes:
    return _CELL_TAG + u32(shard) + u32(ee) + encode_cell(cell)


def state_leaves(state: ShardState) -> list[bytes]:
    leaves = [
        encode_cell_leaf(s, e, cell)
        for s, row in enumerate(state.part_state)
        for e, cell in enumerate(row)
    ]
    for key in sorted(state.outstanding_credits):
        events = canonical_events(state.outstanding_credits[key])
        leaves.append(
            _OUTSTANDING_TAG + u32(key[0]) + u32(key[1]) + u64(key[2]) + u32(len(events))
            + b"".join(encode_event(e) for e in events)
        )
    for (ee, user) in sorted(state.user_balance):
        leaves.append(_BALANCE_TAG + u32(ee) + user + u128(state.user_balance[(ee, user)]))
    for txid in sorted(state.seen_tx_ids):
        leaves.append(_SEEN_TAG + txid + u64(state.seen_tx_ids[txid]))
    leaves.append(_HEIGHT_TAG + u32(state.shard_id) + u64(state.block_number))
    return leaves


def state_tree(state: ShardState) -> MerkleTree:
    return MerkleTree(state_leaves(state))


def commit_state(state: ShardState) -> bytes:
    """stateRoot of a ShardState."""
    return state_tree(state).root


def event_root(events: Sequence[ToCreditEvent]) -> bytes:
    """eventRoot of a block's emitted events, in emission order."""
    return build_root([encode_event(e) for e in events])


def prove_event(events: Sequence[ToCreditEvent], event: ToCreditEvent) -> MerkleProof:
    try:
        index = list(events).index(event)
    except ValueError:
        raise ProofIndexError("event was not emitted by this block") from None
    return prove([encode_event(e) for e in events], index)
