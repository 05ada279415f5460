"""
JSONL trace persistence.

One self-describing record per line, keys sorted, no whitespace, so two runs
of the same scenario produce byte-identical files.  Record types:

  header     the full scenario the run was started from
  block      one proposed block (accepted or not), with proposer kind
  verdict    committee verdicts for that block
  decision   accepted / rejected
  crosslink  a registered crosslink
  slot       per-slot bytesFetched by shard
  audit      an audit snapshot (every slot when requested, always at the end)
  outcome    one TransferOutcome
  summary    final counts and exit code

Byte strings are lower-case hex.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, TextIO, Union

from services.beacon import Crosslink
from services.ledger import (
    CreditTx,
    DebitTx,
    Endpoint,
    StructuralError,
    ToCreditEvent,
    Transaction,
)
from services.merkle import MerkleProof
from services.proposer import Block, EETransfer, Receipt, RefundRecord

logger = logging.getLogger(__name__)

TRACE_VERSION = 1


def dumps(record: dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class TraceWriter:
    """Serialized sink for trace records; keeps lines in memory when no stream is given."""

    def __init__(self, stream: Optional[TextIO] = None) -> None:
        self._stream = stream
        self.lines: list[str] = []
        self.count = 0

    def write(self, record_type: str, **fields: Any) -> None:
        line = dumps({"type": record_type, **fields})
        self.count += 1
        if self._stream is None:
            self.lines.append(line)
        else:
            self._stream.write(line + "\n")


def iter_records(lines: Iterable[str]) -> Iterator[dict[str, Any]]:
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise StructuralError(f"trace line {number} is not JSON ({exc.msg})") from exc
        if not isinstance(record, dict) or "type" not in record:
            raise StructuralError(f"trace line {number} has no record type")
        yield record


def read_trace(source: Union[str, Path, Iterable[str]]) -> list[dict[str, Any]]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return list(iter_records(fh))
    return list(iter_records(source))


# ---------------------------------------------------------------------------
# Codecs
# ---------------------------------------------------------------------------

def _hex(data: bytes) -> str:
    return data.hex()


def _unhex(text: str, field: str) -> bytes:
    try:
        return bytes.fromhex(text)
    except (TypeError, ValueError) as exc:
        raise StructuralError(f"trace field {field} is not hex") from exc


def endpoint_to_dict(ep: Endpoint) -> dict[str, Any]:
    return {"shard": ep.shard, "ee": ep.ee, "user": _hex(ep.user)}


def endpoint_from_dict(data: dict[str, Any]) -> Endpoint:
    return Endpoint(int(data["shard"]), int(data["ee"]), _unhex(data["user"], "user"))


def event_to_dict(event: ToCreditEvent) -> dict[str, Any]:
    return {
        "sender": endpoint_to_dict(event.sender),
        "recipient": endpoint_to_dict(event.recipient),
        "amount": str(event.amount),
        "block_number": event.block_number,
        "index": event.index,
        "tx_id": _hex(event.tx_id),
    }


def event_from_dict(data: dict[str, Any]) -> ToCreditEvent:
    return ToCreditEvent(
        sender=endpoint_from_dict(data["sender"]),
        recipient=endpoint_from_dict(data["recipient"]),
        amount=int(data["amount"]),
        block_number=int(data["block_number"]),
        index=int(data["index"]),
        tx_id=_unhex(data["tx_id"], "tx_id"),
    )


def tx_to_dict(tx: Transaction) -> dict[str, Any]:
    if isinstance(tx, CreditTx):
        return {
            "kind": "credit",
            "event": event_to_dict(tx.event),
            "proof": {
                "leaf_index": tx.proof.leaf_index,
                "leaf_count": tx.proof.leaf_count,
                "siblings": [_hex(s) for s in tx.proof.siblings],
            },
        }
    return {
        "kind": "debit",
        "id": _hex(tx.id),
        "sender": endpoint_to_dict(tx.sender),
        "recipient": endpoint_to_dict(tx.recipient),
        "amount": str(tx.amount),
        "signature": _hex(tx.signature),
    }


def tx_from_dict(data: dict[str, Any]) -> Transaction:
    if data.get("kind") == "credit":
        proof = data["proof"]
        return CreditTx(
            event=event_from_dict(data["event"]),
            proof=MerkleProof(
                leaf_index=int(proof["leaf_index"]),
                siblings=tuple(_unhex(s, "proof.siblings") for s in proof["siblings"]),
                leaf_count=int(proof["leaf_count"]),
            ),
        )
    return DebitTx(
        id=_unhex(data["id"], "id"),
        sender=endpoint_from_dict(data["sender"]),
        recipient=endpoint_from_dict(data["recipient"]),
        amount=int(data["amount"]),
        signature=_unhex(data["signature"], "signature"),
    )


def block_to_dict(block: Block) -> dict[str, Any]:
    return {
        "shard": block.shard,
        "slot": block.slot,
        "parent_state_root": _hex(block.parent_state_root),
        "txs": [tx_to_dict(tx) for tx in block.txs],
        "receipts": [{"status": r.status, "reason": r.reason} for r in block.receipts],
        "events": [event_to_dict(e) for e in block.events],
        "event_root": _hex(block.event_root),
        "post_state_root": _hex(block.post_state_root),
        "expired": [event_to_dict(e) for e in block.expired],
        "refunds": [
            {"tx_id": _hex(r.tx_id), "account": endpoint_to_dict(r.account), "amount": str(r.amount), "lost": r.lost}
            for r in block.refunds
        ],
        "ee_transfers": [
            {"src_ee": t.src_ee, "dest_shard": t.dest_shard, "dest_ee": t.dest_ee, "amount": str(t.amount)}
            for t in block.ee_transfers
        ],
        "bytes_fetched": block.bytes_fetched,
    }


def block_from_dict(data: dict[str, Any]) -> Block:
    try:
        return Block(
            shard=int(data["shard"]),
            slot=int(data["slot"]),
            parent_state_root=_unhex(data["parent_state_root"], "parent_state_root"),
            txs=tuple(tx_from_dict(t) for t in data["txs"]),
            receipts=tuple(Receipt(r["status"], r.get("reason", "")) for r in data["receipts"]),
            events=tuple(event_from_dict(e) for e in data["events"]),
            event_root=_unhex(data["event_root"], "event_root"),
            post_state_root=_unhex(data["post_state_root"], "post_state_root"),
            expired=tuple(event_from_dict(e) for e in data.get("expired", [])),
            refunds=tuple(
                RefundRecord(
                    tx_id=_unhex(r["tx_id"], "refunds.tx_id"),
                    account=endpoint_from_dict(r["account"]),
                    amount=int(r["amount"]),
                    lost=bool(r["lost"]),
                )
                for r in data.get("refunds", [])
            ),
            ee_transfers=tuple(
                EETransfer(int(t["src_ee"]), int(t["dest_shard"]), int(t["dest_ee"]), int(t["amount"]))
                for t in data.get("ee_transfers", [])
            ),
            bytes_fetched=int(data.get("bytes_fetched", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StructuralError(f"malformed block record ({exc})") from exc


def crosslink_to_dict(link: Crosslink) -> dict[str, Any]:
    return {
        "shard": link.shard,
        "slot": link.slot,
        "state_root": _hex(link.state_root),
        "event_root": _hex(link.event_root),
    }
