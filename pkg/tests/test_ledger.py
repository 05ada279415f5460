"""Tests for services.ledger and services.signatures — netted matrix arithmetic and debit signing."""

from __future__ import annotations

import random
from dataclasses import replace

import pytest

from services.ledger import (
    AMOUNT_MAX,
    AmountOverflowError,
    DebitTx,
    Endpoint,
    PartStateCell,
    RevertRecord,
    ShardState,
    StructuralError,
    ToCreditEvent,
    checked_amount,
    decode_state,
    empty_matrix,
    encode_state,
    netted_transfer,
    real_balance,
    tx_id,
    user_address,
)
from services.merkle import commit_state
from services.signatures import sign_debit, verify_signature


# ---------------------------------------------------------------------------
#  Helpers
# ---------------------------------------------------------------------------


def _matrices_with(target: tuple[int, int], values: list[int], n_ees: int = 2) -> list:
    """One matrix per shard, each holding values[n] in its cell for target."""
    n_shards = len(values)
    matrices = []
    for value in values:
        matrix = empty_matrix(n_shards, n_ees)
        matrix[target[0]][target[1]] = PartStateCell(balance=value)
        matrices.append(matrix)
    return matrices


def _debit(amount: int = 30) -> DebitTx:
    return DebitTx(
        id=tx_id("t3"),
        sender=Endpoint(0, 1, user_address("a3")),
        recipient=Endpoint(1, 1, user_address("b3")),
        amount=amount,
    )


def _busy_state() -> ShardState:
    sender = Endpoint(0, 1, user_address("a1"))
    recipient = Endpoint(1, 0, user_address("b1"))
    event = ToCreditEvent(sender, recipient, 25, 3, 0, tx_id("t1"))
    state = ShardState(shard_id=0, block_number=3, part_state=empty_matrix(2, 2))
    state.set_cell(0, 1, PartStateCell(balance=-40))
    state.set_cell(1, 0, PartStateCell(balance=65, credits=(event,)))
    state.set_cell(1, 1, PartStateCell(reverts=(RevertRecord(recipient, 5, sender, tx_id("t9")),)))
    state.outstanding_credits[(1, 0, 2)] = (replace(event, sender=recipient, recipient=sender),)
    state.user_balance[(1, user_address("a1"))] = 75
    state.seen_tx_ids[tx_id("t1")] = 3
    return state


# ---------------------------------------------------------------------------
#  realBalance
# ---------------------------------------------------------------------------


class TestRealBalance:
    """realBalance sums one cell across every shard's matrix."""

    def test_netted_sum_of_three_shards(self):
        assert real_balance(_matrices_with((1, 0), [10, -5, 1]), (1, 0)) == 6

    def test_all_zero(self):
        assert real_balance(_matrices_with((0, 0), [0, 0, 0]), (0, 0)) == 0

    def test_matches_flat_fold(self):
        rng = random.Random(7)
        n_shards, n_ees = 4, 3
        matrices = [
            [[PartStateCell(balance=rng.randint(-1000, 1000)) for _ in range(n_ees)] for _ in range(n_shards)]
            for _ in range(n_shards)
        ]
        for s in range(n_shards):
            for e in range(n_ees):
                flat = [matrices[n][s][e].balance for n in range(n_shards)]
                assert real_balance(matrices, (s, e)) == sum(flat)

    def test_dimension_mismatch_raises(self):
        matrices = _matrices_with((0, 0), [1, 2, 3])
        matrices[2] = empty_matrix(3, 1)
        with pytest.raises(StructuralError):
            real_balance(matrices, (0, 0))

    def test_wrong_matrix_count_raises(self):
        with pytest.raises(StructuralError):
            real_balance(_matrices_with((0, 0), [1, 2, 3])[:2], (0, 0))

    def test_target_out_of_range_raises(self):
        with pytest.raises(StructuralError):
            real_balance(_matrices_with((0, 0), [1, 2]), (2, 0))


# ---------------------------------------------------------------------------
#  netted_transfer
# ---------------------------------------------------------------------------


class TestNettedTransfer:
    """Only the local shard's matrix changes, total is conserved."""

    def _triple(self) -> list:
        matrix = empty_matrix(3, 1)
        for s, value in enumerate((10, 20, 30)):
            matrix[s][0] = PartStateCell(balance=value)
        return matrix

    def test_moves_amount_between_cells(self):
        updated = netted_transfer(self._triple(), 0, 0, (1, 0), 5)
        assert [row[0].balance for row in updated] == [5, 25, 30]

    def test_input_untouched(self):
        matrix = self._triple()
        netted_transfer(matrix, 0, 0, (1, 0), 5)
        assert [row[0].balance for row in matrix] == [10, 20, 30]

    def test_inverse_pair_restores_matrix(self):
        matrix = self._triple()
        there = netted_transfer(matrix, 0, 0, (1, 0), 7)
        back = netted_transfer(there, 1, 0, (0, 0), 7)
        assert back == matrix

    def test_part_balance_may_go_negative(self):
        updated = netted_transfer(self._triple(), 0, 0, (2, 0), 15)
        assert updated[0][0].balance == -5

    def test_conservation_over_random_transfers(self):
        rng = random.Random(42)
        n_shards, n_ees = 4, 3
        matrix = [[PartStateCell(balance=rng.randint(-50, 500)) for _ in range(n_ees)] for _ in range(n_shards)]
        total = sum(c.balance for row in matrix for c in row)
        for _ in range(100):
            local = rng.randrange(n_shards)
            matrix = netted_transfer(
                matrix, local, rng.randrange(n_ees),
                (rng.randrange(n_shards), rng.randrange(n_ees)), rng.randint(1, 300),
            )
        assert sum(c.balance for row in matrix for c in row) == total

    def test_transient_records_survive(self):
        matrix = self._triple()
        event = ToCreditEvent(Endpoint(0, 0, b"\x01" * 20), Endpoint(1, 0, b"\x02" * 20), 3, 1, 0, b"\x00" * 32)
        matrix[1][0] = replace(matrix[1][0], credits=(event,))
        updated = netted_transfer(matrix, 0, 0, (1, 0), 3)
        assert updated[1][0].credits == (event,)

    def test_non_positive_amount_raises(self):
        with pytest.raises(StructuralError):
            netted_transfer(self._triple(), 0, 0, (1, 0), 0)


# ---------------------------------------------------------------------------
#  Amounts and identifiers
# ---------------------------------------------------------------------------


class TestAmounts:
    """128-bit bounds on amounts."""

    def test_max_amount_accepted(self):
        assert checked_amount(AMOUNT_MAX) == AMOUNT_MAX

    def test_overflow_raises(self):
        with pytest.raises(AmountOverflowError):
            checked_amount(AMOUNT_MAX + 1)

    def test_negative_raises(self):
        with pytest.raises(AmountOverflowError):
            checked_amount(-1)

    def test_overflow_is_structural(self):
        assert issubclass(AmountOverflowError, StructuralError)


class TestIdentifiers:
    """Scenario labels resolve to fixed-width addresses and ids."""

    def test_label_address_is_20_bytes(self):
        assert len(user_address("a1")) == 20
        assert user_address("a1") != user_address("a2")

    def test_hex_address_taken_literally(self):
        assert user_address("0x" + "ab" * 20) == bytes.fromhex("ab" * 20)

    def test_tx_id_is_32_bytes(self):
        assert len(tx_id("t1")) == 32
        assert tx_id("t1") == tx_id("t1")


# ---------------------------------------------------------------------------
#  Canonical encoding
# ---------------------------------------------------------------------------


class TestStateEncoding:
    """encode_state / decode_state preserve the committed state."""

    def test_round_trip_preserves_root(self):
        state = _busy_state()
        decoded = decode_state(encode_state(state))
        assert commit_state(decoded) == commit_state(state)
        assert decoded.outstanding_credits == state.outstanding_credits
        assert decoded.user_balance == state.user_balance

    def test_truncated_bytes_raise(self):
        data = encode_state(_busy_state())
        with pytest.raises(StructuralError):
            decode_state(data[:-3])

    def test_trailing_bytes_raise(self):
        with pytest.raises(StructuralError):
            decode_state(encode_state(_busy_state()) + b"\x00")

    def test_clone_is_independent(self):
        state = _busy_state()
        copy = state.clone()
        copy.user_balance[(1, user_address("a1"))] = 0
        copy.set_cell(0, 0, PartStateCell(balance=9))
        assert state.user_balance[(1, user_address("a1"))] == 75
        assert state.cell(0, 0).balance == 0


# ---------------------------------------------------------------------------
#  Signatures
# ---------------------------------------------------------------------------


class TestSignatures:
    """Debit signatures bind (id, sender, recipient, amount) to the sender."""

    def test_sender_signature_verifies(self):
        assert verify_signature(sign_debit(_debit())) is True

    def test_mutated_amount_fails(self):
        signed = sign_debit(_debit())
        assert verify_signature(replace(signed, amount=31)) is False

    def test_other_users_key_fails(self):
        forged = sign_debit(_debit(), signer=user_address("mallory"))
        assert verify_signature(forged) is False

    def test_unsigned_fails(self):
        assert verify_signature(_debit()) is False
