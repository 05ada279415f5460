"""Tests for services.state_provider — proof-carrying remote column reads."""

from __future__ import annotations

from dataclasses import replace

import pytest

from services.beacon import BeaconChain, Crosslink
from services.ledger import PartStateCell, ShardState, StructuralError, empty_matrix
from services.merkle import EMPTY_ROOT
from services.state_provider import StateProvider, verify_view

N_SHARDS = 2
N_EES = 2


# ---------------------------------------------------------------------------
#  Helpers
# ---------------------------------------------------------------------------


def _state(shard: int, block: int, balance: int) -> ShardState:
    state = ShardState(shard_id=shard, block_number=block, part_state=empty_matrix(N_SHARDS, N_EES))
    for s in range(N_SHARDS):
        for e in range(N_EES):
            state.set_cell(s, e, PartStateCell(balance=balance + 10 * s + e))
    return state


class _Harness:
    """Beacon + provider where shard 1 advances every slot and shard 0 stays at genesis."""

    def __init__(self, shard1_blocks: int) -> None:
        self.beacon = BeaconChain()
        self.provider = StateProvider(self.beacon)
        self.heads = [_state(0, 0, 100), _state(1, 0, 200)]
        for state in self.heads:
            self._accept(state)
        for slot in range(1, shard1_blocks + 1):
            self.beacon.advance_slot()
            self.heads[1] = _state(1, slot, 200 + slot)
            self._accept(self.heads[1])
        self.beacon.advance_slot()

    def _accept(self, state: ShardState) -> None:
        root = self.provider.publish(state)
        self.beacon.submit_crosslink(Crosslink(state.shard_id, state.block_number, root, EMPTY_ROOT))


# ---------------------------------------------------------------------------
#  build_view
# ---------------------------------------------------------------------------


class TestBuildView:
    """Window of remote snapshots since the local head, plus the latest one."""

    def test_lockstep_view_has_previous_slot_only(self):
        h = _Harness(shard1_blocks=1)
        view = h.provider.build_view(h.heads[1], 2)
        assert [s.slot for s in view.snapshots[0]] == [0]
        assert [s.slot for s in view.window(1)] == [1]

    def test_rejected_local_blocks_widen_window(self):
        h = _Harness(shard1_blocks=3)
        view = h.provider.build_view(h.heads[0], 4)
        assert view.window_start == 0
        assert [s.slot for s in view.snapshots[1]] == [0, 1, 2, 3]
        assert view.latest(1).slot == 3

    def test_column_is_local_row_of_remote_matrix(self):
        h = _Harness(shard1_blocks=2)
        view = h.provider.build_view(h.heads[0], 3)
        latest = view.latest(1)
        assert latest.cells == tuple(h.heads[1].part_state[0])

    def test_column_balance_sums_latest_columns(self):
        h = _Harness(shard1_blocks=2)
        view = h.provider.build_view(h.heads[0], 3)
        # shard 0 holds 100 + 1 for (0, 1); shard 1 at block 2 holds 202 + 1
        assert view.column_balance(1) == 101 + 203

    def test_bytes_count_remote_columns_only(self):
        h = _Harness(shard1_blocks=2)
        view = h.provider.build_view(h.heads[0], 3)
        expected = sum(s.byte_size(0) for s in view.snapshots[1])
        assert view.bytes_fetched == expected > 0


# ---------------------------------------------------------------------------
#  verify_view
# ---------------------------------------------------------------------------


class TestVerifyView:
    """Every snapshot must be crosslinked, complete and proof-verified."""

    def test_honest_view_verifies(self):
        h = _Harness(shard1_blocks=2)
        view = h.provider.build_view(h.heads[0], 3)
        assert verify_view(view, h.beacon, N_SHARDS, N_EES).ok

    def test_altered_balance_fails(self):
        h = _Harness(shard1_blocks=2)
        view = h.provider.build_view(h.heads[0], 3)
        snap = view.latest(1)
        forged = replace(snap, cells=(replace(snap.cells[0], balance=snap.cells[0].balance - 1),) + snap.cells[1:])
        snapshots = dict(view.snapshots)
        snapshots[1] = view.snapshots[1][:-1] + (forged,)
        result = verify_view(replace(view, snapshots=snapshots), h.beacon, N_SHARDS, N_EES)
        assert not result.ok
        assert "proof failed" in result.detail

    def test_missing_window_slot_fails(self):
        h = _Harness(shard1_blocks=3)
        view = h.provider.build_view(h.heads[0], 4)
        snapshots = dict(view.snapshots)
        snapshots[1] = tuple(s for s in view.snapshots[1] if s.slot != 2)
        result = verify_view(replace(view, snapshots=snapshots), h.beacon, N_SHARDS, N_EES)
        assert not result.ok
        assert "view slots" in result.detail

    def test_missing_shard_fails(self):
        h = _Harness(shard1_blocks=1)
        view = h.provider.build_view(h.heads[0], 2)
        result = verify_view(replace(view, snapshots={0: view.snapshots[0]}), h.beacon, N_SHARDS, N_EES)
        assert not result.ok

    def test_proof_for_wrong_cell_fails(self):
        h = _Harness(shard1_blocks=1)
        view = h.provider.build_view(h.heads[0], 2)
        snap = view.latest(1)
        swapped = replace(snap, proofs=(snap.proofs[1], snap.proofs[0]))
        snapshots = dict(view.snapshots)
        snapshots[1] = view.snapshots[1][:-1] + (swapped,)
        assert not verify_view(replace(view, snapshots=snapshots), h.beacon, N_SHARDS, N_EES).ok


# ---------------------------------------------------------------------------
#  prune
# ---------------------------------------------------------------------------


class TestPrune:
    """States below the lowest head go, every shard's head stays."""

    def test_keeps_heads_and_window(self):
        h = _Harness(shard1_blocks=3)
        dropped = h.provider.prune(h.heads)
        assert dropped == 0
        assert h.provider.state_at(1, 1) is not None

    def test_drops_below_floor(self):
        h = _Harness(shard1_blocks=3)
        h.heads[0] = _state(0, 2, 100)
        h.provider.prune(h.heads)
        assert h.provider.state_at(1, 1) is None
        assert h.provider.state_at(0, 0) is None
        assert h.provider.state_at(1, 2) is not None
        assert h.provider.state_at(1, 3) is not None

    def test_snapshot_of_pruned_state_is_structural(self):
        h = _Harness(shard1_blocks=3)
        h.heads[0] = _state(0, 2, 100)
        h.provider.prune(h.heads)
        with pytest.raises(StructuralError):
            h.provider.snapshot(1, 1, 0)
