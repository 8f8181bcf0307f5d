"""Block headers, proof of work, mining and context checks against a parent."""

from __future__ import annotations

import enum
import hashlib
import random
import struct
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from ..errors import ValidationError
from ..identity import Fingerprint
from .tx import RecordTransaction, _parse_tx_at, canonical_tx_bytes, tx_id, validate_tx

MAX_BLOCK_SIZE = 1 << 20
MAX_FUTURE_DRIFT = 7200
ZERO_HASH = bytes(32)
NONCE_SPACE = 1 << 64

# parent, height, timestamp, merkle root, difficulty | nonce | miner
_HEADER_PREFIX = struct.Struct(">32sQQ32sQ")
_NONCE = struct.Struct(">Q")
HEADER_LEN = _HEADER_PREFIX.size + _NONCE.size + 32


class BlockRejection(str, enum.Enum):
    PARENT_MISMATCH = "parent-mismatch"
    BAD_HEIGHT = "bad-height"
    MERKLE_MISMATCH = "merkle-mismatch"
    BAD_POW = "bad-pow"
    BAD_DIFFICULTY = "bad-difficulty"
    TIMESTAMP_TOO_OLD = "timestamp-before-parent"
    FUTURE_TIMESTAMP = "future-timestamp"
    INVALID_TX = "invalid-tx"
    DUPLICATE_TX = "duplicate-tx"
    OVERSIZE = "oversize-block"


@dataclass(frozen=True)
class BlockHeader:
    parent_hash: bytes
    height: int
    timestamp: int
    tx_merkle_root: bytes
    difficulty: int
    nonce: int
    miner: Fingerprint

    def prefix_bytes(self) -> bytes:
        return _HEADER_PREFIX.pack(
            self.parent_hash, self.height, self.timestamp, self.tx_merkle_root, self.difficulty
        )

    def serialize(self) -> bytes:
        return self.prefix_bytes() + _NONCE.pack(self.nonce) + self.miner.digest

    @classmethod
    def parse(cls, data: bytes) -> BlockHeader:
        if len(data) != HEADER_LEN:
            raise ValidationError("header must be %d bytes" % HEADER_LEN)
        parent, height, ts, root, difficulty = _HEADER_PREFIX.unpack_from(data, 0)
        (nonce,) = _NONCE.unpack_from(data, _HEADER_PREFIX.size)
        miner = Fingerprint(data[_HEADER_PREFIX.size + _NONCE.size :])
        return cls(parent, height, ts, root, difficulty, nonce, miner)


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[RecordTransaction, ...] = ()

    @property
    def hash(self) -> bytes:
        return block_hash(self.header)

    def serialize(self) -> bytes:
        parts = [self.header.serialize(), struct.pack(">I", len(self.transactions))]
        for tx in self.transactions:
            raw = canonical_tx_bytes(tx, True)
            parts += [struct.pack(">I", len(raw)), raw]
        return b"".join(parts)

    @classmethod
    def parse(cls, data: bytes) -> Block:
        if len(data) > MAX_BLOCK_SIZE:
            raise ValidationError("block exceeds size cap")
        if len(data) < HEADER_LEN + 4:
            raise ValidationError("truncated block")
        header = BlockHeader.parse(data[:HEADER_LEN])
        (count,) = struct.unpack_from(">I", data, HEADER_LEN)
        buf = memoryview(data)
        pos = HEADER_LEN + 4
        txs = []
        for _ in range(count):
            if pos + 4 > len(data):
                raise ValidationError("truncated block")
            (n,) = struct.unpack_from(">I", data, pos)
            pos += 4
            if pos + n > len(data):
                raise ValidationError("truncated block")
            tx, end = _parse_tx_at(buf[: pos + n], pos)
            if end != pos + n:
                raise ValidationError("transaction length prefix mismatch")
            txs.append(tx)
            pos = end
        if pos != len(data):
            raise ValidationError("trailing bytes after block")
        return cls(header, tuple(txs))


@dataclass
class MiningStats:
    trials: int = 0


def merkle_root(tx_ids: Sequence[bytes]) -> bytes:
    if not tx_ids:
        return ZERO_HASH
    level = list(tx_ids)
    while True:
        if len(level) % 2:
            level.append(level[-1])
        level = [hashlib.sha256(level[i] + level[i + 1]).digest() for i in range(0, len(level), 2)]
        if len(level) == 1:
            return level[0]


def block_hash(header: BlockHeader) -> bytes:
    return hashlib.sha256(header.serialize()).digest()


def target_for(difficulty: int) -> int:
    if difficulty <= 0:
        raise ValidationError("difficulty must be positive")
    return (1 << 256) // difficulty


def pow_valid(header: BlockHeader) -> bool:
    return int.from_bytes(block_hash(header), "big") < target_for(header.difficulty)


def block_size(block: Block) -> int:
    return len(block.serialize())


def mine_block(
    parent: BlockHeader,
    txs: Sequence[RecordTransaction],
    miner: Fingerprint,
    clock: Callable[[], float] = time.time,
    *,
    difficulty: int | None = None,
    cancel: threading.Event | None = None,
    stats: MiningStats | None = None,
    start_nonce: int | None = None,
) -> Block | None:
    """Search nonces from a random start until the header meets its target.

    Returns None if ``cancel`` is set before a solution is found.
    """
    difficulty = parent.difficulty if difficulty is None else difficulty
    target = target_for(difficulty)
    txs = tuple(txs)
    header = BlockHeader(
        parent_hash=block_hash(parent),
        height=parent.height + 1,
        timestamp=max(int(clock()), parent.timestamp),
        tx_merkle_root=merkle_root([tx_id(t) for t in txs]),
        difficulty=difficulty,
        nonce=0,
        miner=miner,
    )
    nonce = random.getrandbits(64) if start_nonce is None else start_nonce % NONCE_SPACE
    # Comparing big-endian digests as bytes is the same as comparing integers.
    target_bytes = target.to_bytes(33, "big")[1:] if target < (1 << 256) else None
    midstate = hashlib.sha256(header.prefix_bytes())
    tail = miner.digest
    pack = _NONCE.pack
    trials = 0
    while True:
        for _ in range(4096):
            trials += 1
            h = midstate.copy()
            h.update(pack(nonce) + tail)
            if target_bytes is None or h.digest() < target_bytes:
                if stats is not None:
                    stats.trials += trials
                return Block(replace(header, nonce=nonce), txs)
            nonce = (nonce + 1) % NONCE_SPACE
        if cancel is not None and cancel.is_set():
            if stats is not None:
                stats.trials += trials
            return None


def validate_block(
    block: Block,
    parent: BlockHeader,
    *,
    difficulty: int | None = None,
    now: float | None = None,
) -> BlockRejection | None:
    """Check ``block`` against its parent header.  Returns None when valid."""
    h = block.header
    if h.parent_hash != block_hash(parent):
        return BlockRejection.PARENT_MISMATCH
    if h.height != parent.height + 1:
        return BlockRejection.BAD_HEIGHT
    expected = parent.difficulty if difficulty is None else difficulty
    if h.difficulty != expected:
        return BlockRejection.BAD_DIFFICULTY
    if h.timestamp < parent.timestamp:
        return BlockRejection.TIMESTAMP_TOO_OLD
    now = time.time() if now is None else now
    if h.timestamp > now + MAX_FUTURE_DRIFT:
        return BlockRejection.FUTURE_TIMESTAMP
    try:
        size = block_size(block)
    except ValidationError:
        return BlockRejection.INVALID_TX
    if size > MAX_BLOCK_SIZE:
        return BlockRejection.OVERSIZE
    ids = [tx_id(t) for t in block.transactions]
    if merkle_root(ids) != h.tx_merkle_root:
        return BlockRejection.MERKLE_MISMATCH
    if len(set(ids)) != len(ids):
        return BlockRejection.DUPLICATE_TX
    if not pow_valid(h):
        return BlockRejection.BAD_POW
    if any(validate_tx(t) is not None for t in block.transactions):
        return BlockRejection.INVALID_TX
    return None
