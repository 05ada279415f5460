"""
Minimal Beacon chain: a slot clock plus an append-only crosslink registry.

Shard block number equals beacon slot number.  Crosslinks for slot t are
registered at the end of slot t and read by every shard from slot t + 1.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Literal, Optional

logger = logging.getLogger(__name__)

RejectReason = Literal["equivocation", "future", "stale"]


@dataclass(frozen=True)
class Crosslink:
    shard: int
    slot: int
    state_root: bytes
    event_root: bytes


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    reason: Optional[RejectReason] = None


class BeaconChain:
    """
    Slot clock and crosslink registry.

    Writes take an exclusive lock; reads return frozen records, so a reader
    never sees a partially registered link.
    """

    def __init__(self, genesis_slot: int = 0) -> None:
        self.current_slot = genesis_slot
        self._registry: dict[tuple[int, int], Crosslink] = {}
        self._latest: dict[int, list[int]] = {}
        self._lock = threading.Lock()

    def advance_slot(self) -> int:
        with self._lock:
            self.current_slot += 1
            return self.current_slot

    def submit_crosslink(self, link: Crosslink) -> SubmitResult:
        key = (link.shard, link.slot)
        with self._lock:
            existing = self._registry.get(key)
            if existing is not None:
                if existing == link:
                    return SubmitResult(accepted=True)
                logger.warning("Equivocating crosslink for shard %d slot %d", link.shard, link.slot)
                return SubmitResult(accepted=False, reason="equivocation")
            if link.slot > self.current_slot:
                return SubmitResult(accepted=False, reason="future")
            if link.slot < self.current_slot:
                return SubmitResult(accepted=False, reason="stale")
            self._registry[key] = link
            self._latest.setdefault(link.shard, []).append(link.slot)
        logger.debug("Crosslink registered: shard %d slot %d", link.shard, link.slot)
        return SubmitResult(accepted=True)

    def get_crosslink(self, shard: int, slot: int) -> Optional[Crosslink]:
        with self._lock:
            return self._registry.get((shard, slot))

    def _slots(self, shard: int) -> list[int]:
        with self._lock:
            return list(self._latest.get(shard, ()))

    def latest_crosslink(self, shard: int, at_or_before: int) -> Optional[Crosslink]:
        """Most recent crosslink of shard with slot ≤ at_or_before."""
        for slot in reversed(self._slots(shard)):
            if slot <= at_or_before:
                return self.get_crosslink(shard, slot)
        return None

    def crosslinked_slots(self, shard: int, first: int, last: int) -> list[int]:
        """Slots in [first, last] for which shard has a crosslink, ascending."""
        return [s for s in self._slots(shard) if first <= s <= last]
