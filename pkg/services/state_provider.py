"""
Remote state reads for block production and validation.

A proposer on shard ``local`` at slot k whose last accepted block is b needs,
from every shard n (itself included):
  - the column partState[local][*] of n's latest accepted block ≤ k − 1, for
    the real-balance sums, and
  - the transient credits/reverts in that column for every accepted block of
    n in [b, k − 1], none of which the local shard has consumed yet.

Each column cell is fetched together with a Merkle proof against the
crosslinked stateRoot of (n, slot).  Byte accounting counts only cells read
from other shards.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

from services.beacon import BeaconChain
from services.ledger import PartStateCell, ShardState, StructuralError, empty_matrix, real_balance
from services.merkle import (
    MerkleProof,
    MerkleTree,
    cell_leaf_index,
    encode_cell_leaf,
    state_tree,
    verify,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ColumnSnapshot:
    """Cells [local][0..N−1] of one shard's accepted state, with proofs."""
    shard: int
    slot: int
    cells: tuple[PartStateCell, ...]
    proofs: tuple[MerkleProof, ...]

    def leaf(self, local_shard: int, ee: int) -> bytes:
        return encode_cell_leaf(local_shard, ee, self.cells[ee])

    def byte_size(self, local_shard: int) -> int:
        return sum(
            len(self.leaf(local_shard, ee)) + proof.size
            for ee, proof in enumerate(self.proofs)
        )


@dataclass(frozen=True)
class RemoteStateView:
    """
    Everything a shard reads from the others to build block k.

    ``snapshots[n]`` is ascending by slot; its last element is always the
    latest accepted block of n at or before k − 1.
    """
    local_shard: int
    slot: int
    window_start: int
    snapshots: dict[int, tuple[ColumnSnapshot, ...]] = field(default_factory=dict)
    bytes_fetched: int = 0

    def latest(self, shard: int) -> ColumnSnapshot:
        return self.snapshots[shard][-1]

    def window(self, shard: int) -> tuple[ColumnSnapshot, ...]:
        return tuple(s for s in self.snapshots[shard] if s.slot >= self.window_start)

    def shards(self) -> list[int]:
        return sorted(self.snapshots)

    def column_balance(self, ee: int) -> int:
        """Real balance of (local, ee) over every shard's latest column."""
        matrices = []
        for n in self.shards():
            cells = self.latest(n).cells
            matrix = empty_matrix(len(self.snapshots), len(cells))
            matrix[self.local_shard] = list(cells)
            matrices.append(matrix)
        return real_balance(matrices, (self.local_shard, ee))


@dataclass(frozen=True)
class ViewCheck:
    ok: bool
    detail: str = ""


def expected_slots(beacon: BeaconChain, shard: int, window_start: int, slot: int) -> list[int]:
    """Slots a correct view must carry for shard at proposal slot ``slot``."""
    slots = set(beacon.crosslinked_slots(shard, window_start, slot - 1))
    latest = beacon.latest_crosslink(shard, slot - 1)
    if latest is not None:
        slots.add(latest.slot)
    return sorted(slots)


def verify_view(view: RemoteStateView, beacon: BeaconChain, n_shards: int, n_ees: int) -> ViewCheck:
    """
    Check coverage and every proof of a view against the beacon registry.
    Never raises; the first problem found is reported.
    """
    if sorted(view.snapshots) != list(range(n_shards)):
        return ViewCheck(False, f"view covers shards {sorted(view.snapshots)}, expected 0..{n_shards - 1}")
    for n in range(n_shards):
        wanted = expected_slots(beacon, n, view.window_start, view.slot)
        got = [s.slot for s in view.snapshots[n]]
        if got != wanted:
            return ViewCheck(False, f"shard {n}: view slots {got}, crosslinked {wanted}")
        for snap in view.snapshots[n]:
            if snap.shard != n or len(snap.cells) != n_ees or len(snap.proofs) != n_ees:
                return ViewCheck(False, f"shard {n} slot {snap.slot}: malformed column")
            link = beacon.get_crosslink(n, snap.slot)
            if link is None:
                return ViewCheck(False, f"no crosslink for shard {n} slot {snap.slot}")
            for ee, proof in enumerate(snap.proofs):
                if proof.leaf_index != cell_leaf_index(view.local_shard, ee, n_ees):
                    return ViewCheck(False, f"shard {n} slot {snap.slot}: proof for wrong cell (ee {ee})")
                try:
                    leaf = snap.leaf(view.local_shard, ee)
                except Exception:  # unencodable cells never verify
                    return ViewCheck(False, f"shard {n} slot {snap.slot}: unencodable cell (ee {ee})")
                if not verify(link.state_root, leaf, proof):
                    return ViewCheck(False, f"shard {n} slot {snap.slot}: proof failed for cell (ee {ee})")
    return ViewCheck(True)


class StateProvider:
    """
    History of accepted shard states, indexed by (shard, slot), serving
    proof-carrying column reads.
    """

    def __init__(self, beacon: BeaconChain) -> None:
        self.beacon = beacon
        self._states: dict[tuple[int, int], ShardState] = {}
        self._trees: dict[tuple[int, int], MerkleTree] = {}

    def publish(self, state: ShardState) -> bytes:
        """Record an accepted state; returns its stateRoot."""
        key = (state.shard_id, state.block_number)
        tree = state_tree(state)
        self._states[key] = state
        self._trees[key] = tree
        return tree.root

    def state_at(self, shard: int, slot: int) -> Optional[ShardState]:
        return self._states.get((shard, slot))

    def snapshot(self, shard: int, slot: int, local_shard: int) -> ColumnSnapshot:
        state = self.state_at(shard, slot)
        if state is None:
            raise StructuralError(f"no accepted state for shard {shard} slot {slot}")
        tree = self._trees[(shard, slot)]
        n_ees = state.n_ees
        return ColumnSnapshot(
            shard=shard,
            slot=slot,
            cells=tuple(state.part_state[local_shard]),
            proofs=tuple(tree.proof(cell_leaf_index(local_shard, ee, n_ees)) for ee in range(n_ees)),
        )

    def build_view(self, local: ShardState, slot: int) -> RemoteStateView:
        window_start = local.block_number
        snapshots: dict[int, tuple[ColumnSnapshot, ...]] = {}
        fetched = 0
        for n in range(local.n_shards):
            snaps = tuple(
                self.snapshot(n, s, local.shard_id)
                for s in expected_slots(self.beacon, n, window_start, slot)
            )
            snapshots[n] = snaps
            if n != local.shard_id:
                fetched += sum(s.byte_size(local.shard_id) for s in snaps)
        logger.debug("View for shard %d slot %d: %d bytes fetched", local.shard_id, slot, fetched)
        return RemoteStateView(
            local_shard=local.shard_id,
            slot=slot,
            window_start=window_start,
            snapshots=snapshots,
            bytes_fetched=fetched,
        )

    def prune(self, heads: Iterable[ShardState]) -> int:
        """
        Drop states no future view can reference: anything older than the
        lowest shard head, except each shard's own latest state.
        """
        heads = list(heads)
        if not heads:
            return 0
        floor = min(h.block_number for h in heads)
        latest = {h.shard_id: h.block_number for h in heads}
        stale = [
            key for key in self._states
            if key[1] < floor and key[1] != latest.get(key[0])
        ]
        for key in stale:
            del self._states[key]
            del self._trees[key]
        return len(stale)
