"""
Pluggable debit-signature schemes.

The protocol only needs signatures as authentication of the sender, so the
scheme is an interface.  The default DeterministicTestScheme signs with
SHA-256(message || per-user secret), which is reproducible across runs and
needs no key management.
"""

from __future__ import annotations

import hashlib
import hmac
import logging
from dataclasses import replace
from typing import Protocol

from services.ledger import DebitTx, debit_message

logger = logging.getLogger(__name__)

SIGNATURE_BYTES = 32


class SignatureScheme(Protocol):
    """Anything that can sign for a user and verify a debit against its sender."""

    def sign(self, user: bytes, message: bytes) -> bytes: ...

    def verify(self, user: bytes, message: bytes, signature: bytes) -> bool: ...


class DeterministicTestScheme:
    """
    signature = SHA-256(message || secret(user)), where secret(user) is derived
    from the scheme's domain and the user address.
    """

    def __init__(self, domain: bytes = b"netted-ledger/test-keys") -> None:
        self._domain = domain

    def secret_for(self, user: bytes) -> bytes:
        return hashlib.sha256(self._domain + b"|" + user).digest()

    def sign(self, user: bytes, message: bytes) -> bytes:
        return hashlib.sha256(message + self.secret_for(user)).digest()

    def verify(self, user: bytes, message: bytes, signature: bytes) -> bool:
        if not isinstance(signature, (bytes, bytearray)) or len(signature) != SIGNATURE_BYTES:
            return False
        return hmac.compare_digest(self.sign(user, message), bytes(signature))


DEFAULT_SCHEME = DeterministicTestScheme()


def sign_debit(tx: DebitTx, scheme: SignatureScheme = DEFAULT_SCHEME, signer: bytes | None = None) -> DebitTx:
    """Return tx signed by signer (the sender by default)."""
    user = signer if signer is not None else tx.sender.user
    return replace(tx, signature=scheme.sign(user, debit_message(tx)))


def verify_signature(tx: DebitTx, scheme: SignatureScheme = DEFAULT_SCHEME) -> bool:
    """True iff tx.signature binds (id, sender, recipient, amount) to the sender."""
    try:
        message = debit_message(tx)
    except Exception:  # malformed fields never verify
        logger.debug("Unencodable debit %s treated as unsigned", tx.id.hex()[:12])
        return False
    return scheme.verify(tx.sender.user, message, tx.signature)
