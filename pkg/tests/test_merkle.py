"""Tests for services.merkle — binary SHA-256 trees, proofs and state commitments."""

from __future__ import annotations

import hashlib
import random
from dataclasses import replace

import pytest

from services.ledger import Endpoint, PartStateCell, ShardState, ToCreditEvent, empty_matrix, tx_id
from services.merkle import (
    EMPTY_ROOT,
    MerkleProof,
    ProofIndexError,
    build_root,
    cell_leaf_index,
    commit_state,
    encode_cell_leaf,
    event_root,
    prove,
    prove_event,
    state_tree,
    verify,
)


# ---------------------------------------------------------------------------
#  Helpers
# ---------------------------------------------------------------------------


def _naive_root(leaves: list[bytes]) -> bytes:
    """Recursive definition: pair left to right, duplicate a lone last node."""
    if not leaves:
        return hashlib.sha256(b"").digest()
    level = [hashlib.sha256(b"\x00" + leaf).digest() for leaf in leaves]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [hashlib.sha256(b"\x01" + level[i] + level[i + 1]).digest() for i in range(0, len(level), 2)]
    return level[0]


def _random_leaves(rng: random.Random, count: int) -> list[bytes]:
    return [rng.randbytes(rng.randint(1, 48)) for _ in range(count)]


def _state() -> ShardState:
    state = ShardState(shard_id=1, block_number=4, part_state=empty_matrix(3, 2))
    for s in range(3):
        for e in range(2):
            state.set_cell(s, e, PartStateCell(balance=10 * s - e))
    state.user_balance[(1, b"\x07" * 20)] = 12
    return state


# ---------------------------------------------------------------------------
#  build_root
# ---------------------------------------------------------------------------


class TestBuildRoot:
    """Root of the empty tree, a single leaf and random trees."""

    def test_empty_is_hash_of_nothing(self):
        assert build_root([]) == hashlib.sha256(b"").digest() == EMPTY_ROOT

    def test_single_leaf_is_its_leaf_hash(self):
        assert build_root([b"L"]) == hashlib.sha256(b"\x00L").digest()

    def test_five_leaves_match_recursive_oracle(self):
        leaves = _random_leaves(random.Random(5), 5)
        assert build_root(leaves) == _naive_root(leaves)

    @pytest.mark.parametrize("count", [2, 3, 7, 8, 33])
    def test_sizes_match_oracle(self, count):
        leaves = _random_leaves(random.Random(count), count)
        assert build_root(leaves) == _naive_root(leaves)


# ---------------------------------------------------------------------------
#  prove / verify
# ---------------------------------------------------------------------------


class TestProofs:
    """Every index proves; proofs bind their leaf and position."""

    def test_single_leaf_has_no_siblings(self):
        proof = prove([b"only"], 0)
        assert proof.siblings == ()
        assert verify(build_root([b"only"]), b"only", proof)

    def test_four_leaves_every_index(self):
        leaves = [b"a", b"b", b"c", b"d"]
        root = build_root(leaves)
        for i, leaf in enumerate(leaves):
            assert verify(root, leaf, prove(leaves, i))

    def test_wrong_leaf_rejected(self):
        leaves = [b"a", b"b", b"c", b"d"]
        assert not verify(build_root(leaves), leaves[1], prove(leaves, 0))

    def test_flipped_bit_rejected(self):
        leaves = [b"alpha", b"beta", b"gamma"]
        leaf = bytearray(leaves[2])
        leaf[0] ^= 0x01
        assert not verify(build_root(leaves), bytes(leaf), prove(leaves, 2))

    def test_index_out_of_range_raises(self):
        with pytest.raises(ProofIndexError):
            prove([b"a", b"b"], 2)
        with pytest.raises(IndexError):
            prove([], 0)

    def test_reordered_siblings_rejected(self):
        rng = random.Random(11)
        for _ in range(50):
            count = rng.randint(3, 64)
            leaves = _random_leaves(rng, count)
            index = rng.randrange(count)
            proof = prove(leaves, index)
            reordered = replace(proof, siblings=tuple(reversed(proof.siblings)))
            if reordered.siblings == proof.siblings:
                continue
            assert not verify(build_root(leaves), leaves[index], reordered)

    def test_malformed_proofs_never_raise(self):
        root = build_root([b"a", b"b"])
        assert not verify(root, b"a", MerkleProof(leaf_index=5, siblings=(), leaf_count=2))
        assert not verify(root, b"a", MerkleProof(leaf_index=0, siblings=(b"short",), leaf_count=2))
        assert not verify(root, b"a", MerkleProof(leaf_index=0, siblings=(), leaf_count=0))

    def test_random_trees_up_to_1024_leaves(self):
        rng = random.Random(1024)
        for count in (1, 2, 5, 64, 257, 1024):
            leaves = _random_leaves(rng, count)
            root = build_root(leaves)
            for index in {0, count - 1, rng.randrange(count)}:
                assert verify(root, leaves[index], prove(leaves, index))


# ---------------------------------------------------------------------------
#  State and event commitments
# ---------------------------------------------------------------------------


class TestCommitState:
    """stateRoot commits to every part-balance, balance and header."""

    def test_one_part_balance_changes_root(self):
        state = _state()
        other = state.clone()
        other.set_cell(2, 1, PartStateCell(balance=state.cell(2, 1).balance + 1))
        assert commit_state(state) != commit_state(other)

    def test_user_balance_changes_root(self):
        state = _state()
        other = state.clone()
        other.user_balance[(1, b"\x07" * 20)] = 13
        assert commit_state(state) != commit_state(other)

    def test_cell_proof_verifies_against_root(self):
        state = _state()
        tree = state_tree(state)
        index = cell_leaf_index(2, 1, state.n_ees)
        leaf = encode_cell_leaf(2, 1, state.cell(2, 1))
        assert verify(commit_state(state), leaf, tree.proof(index))

    def test_cell_proof_does_not_verify_other_cell(self):
        state = _state()
        tree = state_tree(state)
        leaf = encode_cell_leaf(2, 0, state.cell(2, 0))
        assert not verify(commit_state(state), leaf, tree.proof(cell_leaf_index(2, 1, state.n_ees)))


class TestEventRoot:
    """Events are committed in emission order and provable individually."""

    def _events(self) -> list[ToCreditEvent]:
        sender = Endpoint(0, 1, b"\x01" * 20)
        return [
            ToCreditEvent(sender, Endpoint(1, 1, bytes([i]) * 20), 10 * i, 3, i - 1, tx_id(f"t{i}"))
            for i in (1, 2, 3)
        ]

    def test_no_events_is_empty_root(self):
        assert event_root([]) == EMPTY_ROOT

    def test_order_matters(self):
        events = self._events()
        assert event_root(events) != event_root(list(reversed(events)))

    def test_prove_event_unknown_raises(self):
        events = self._events()
        with pytest.raises(ProofIndexError):
            prove_event(events[:2], events[2])
