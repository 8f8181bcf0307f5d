"""Signed asset records and their canonical byte layout."""

from __future__ import annotations

import enum
import hashlib
import struct
import time
from dataclasses import dataclass, replace
from typing import Sequence

from ..content_store import ContentId
from ..errors import ValidationError
from ..identity import KEY_LEN, SIGNATURE_LEN, Fingerprint, Identity, fingerprint, sign, verify_sig

MAX_DESCRIPTION = 1024

ACCESS_PUBLIC = 0
ACCESS_LIST = 1


class TxRejection(str, enum.Enum):
    BAD_SIGNATURE = "bad-signature"
    FINGERPRINT_MISMATCH = "fingerprint-mismatch"
    EMPTY_ACCESS_LIST = "empty-access-list"
    UNSORTED_ACCESS_LIST = "unsorted-access-list"
    OVERSIZE_DESCRIPTION = "oversize-description"
    MALFORMED_CONTENT_ID = "malformed-content-id"


@dataclass(frozen=True)
class RecordTransaction:
    content_id: ContentId
    owner: Fingerprint
    access: tuple[Fingerprint, ...] | None  # None means public
    description: str
    timestamp: int
    owner_pubkey: bytes
    signature: bytes = b""

    @property
    def is_public(self) -> bool:
        return self.access is None

    def to_json(self) -> dict:
        return {
            "content_id": str(self.content_id),
            "owner": self.owner.hex,
            "access": "public" if self.access is None else [f.hex for f in self.access],
            "description": self.description,
            "timestamp": self.timestamp,
            "tx_id": tx_id(self).hex(),
        }


def canonical_tx_bytes(tx: RecordTransaction, include_signature: bool = True) -> bytes:
    desc = tx.description.encode("utf-8")
    if len(desc) > MAX_DESCRIPTION:
        raise ValidationError(f"description is {len(desc)} bytes, limit {MAX_DESCRIPTION}")
    mh = tx.content_id.multihash
    parts = [struct.pack(">H", len(mh)), mh, tx.owner.digest]
    if tx.access is None:
        parts.append(bytes([ACCESS_PUBLIC]))
    else:
        parts.append(struct.pack(">BH", ACCESS_LIST, len(tx.access)))
        parts.extend(f.digest for f in tx.access)
    parts += [struct.pack(">I", len(desc)), desc, struct.pack(">Q", tx.timestamp), tx.owner_pubkey]
    if include_signature:
        parts.append(tx.signature)
    return b"".join(parts)


def parse_tx(data: bytes) -> RecordTransaction:
    """Inverse of ``canonical_tx_bytes(tx, True)``; rejects trailing bytes."""
    tx, end = _parse_tx_at(memoryview(data), 0)
    if end != len(data):
        raise ValidationError("trailing bytes after transaction")
    return tx


def _parse_tx_at(buf: memoryview, pos: int) -> tuple[RecordTransaction, int]:
    def take(n: int) -> bytes:
        nonlocal pos
        if n < 0 or pos + n > len(buf):
            raise ValidationError("truncated transaction")
        out = bytes(buf[pos : pos + n])
        pos += n
        return out

    (mh_len,) = struct.unpack(">H", take(2))
    cid = ContentId(take(mh_len))
    owner = Fingerprint(take(32))
    flag = take(1)[0]
    if flag == ACCESS_PUBLIC:
        access = None
    elif flag == ACCESS_LIST:
        (n,) = struct.unpack(">H", take(2))
        access = tuple(Fingerprint(take(32)) for _ in range(n))
    else:
        raise ValidationError(f"unknown access flag {flag}")
    (desc_len,) = struct.unpack(">I", take(4))
    if desc_len > MAX_DESCRIPTION:
        raise ValidationError("oversize description")
    try:
        desc = take(desc_len).decode("utf-8")
    except UnicodeDecodeError:
        raise ValidationError("description is not UTF-8") from None
    (ts,) = struct.unpack(">Q", take(8))
    pub = take(KEY_LEN)
    sig = take(SIGNATURE_LEN)
    return RecordTransaction(cid, owner, access, desc, ts, pub, sig), pos


def tx_id(tx: RecordTransaction) -> bytes:
    return hashlib.sha256(canonical_tx_bytes(tx, include_signature=True)).digest()


def normalize_access(recipients: Sequence[Fingerprint] | None) -> tuple[Fingerprint, ...] | None:
    if recipients is None:
        return None
    return tuple(sorted(set(recipients)))


def make_record(
    content_id: ContentId,
    identity: Identity,
    access: Sequence[Fingerprint] | None,
    description: str = "",
    timestamp: int | None = None,
) -> RecordTransaction:
    """Build and sign a record owned by ``identity``."""
    unsigned = RecordTransaction(
        content_id=content_id,
        owner=identity.fingerprint,
        access=normalize_access(access),
        description=description,
        timestamp=int(time.time()) if timestamp is None else timestamp,
        owner_pubkey=identity.signing_public,
    )
    return sign_tx(unsigned, identity)


def sign_tx(tx: RecordTransaction, identity: Identity) -> RecordTransaction:
    unsigned = replace(tx, owner_pubkey=identity.signing_public, signature=b"")
    return replace(unsigned, signature=sign(canonical_tx_bytes(unsigned, False), identity))


def validate_tx(tx: RecordTransaction) -> TxRejection | None:
    """Return None when ``tx`` is acceptable, otherwise the first failing check."""
    if not tx.content_id.is_wellformed():
        return TxRejection.MALFORMED_CONTENT_ID
    if len(tx.description.encode("utf-8")) > MAX_DESCRIPTION:
        return TxRejection.OVERSIZE_DESCRIPTION
    if tx.access is not None:
        if not tx.access:
            return TxRejection.EMPTY_ACCESS_LIST
        if list(tx.access) != sorted(set(tx.access)):
            return TxRejection.UNSORTED_ACCESS_LIST
    if len(tx.owner_pubkey) != KEY_LEN or fingerprint(tx.owner_pubkey) != tx.owner:
        return TxRejection.FINGERPRINT_MISMATCH
    if len(tx.signature) != SIGNATURE_LEN:
        return TxRejection.BAD_SIGNATURE
    if not verify_sig(canonical_tx_bytes(tx, False), tx.signature, tx.owner_pubkey):
        return TxRejection.BAD_SIGNATURE
    return None
