"""Append-only block log: ``DDCL`` + version + genesis hash, then length-prefixed blocks."""

from __future__ import annotations

import logging
import os
import struct
import threading
from pathlib import Path
from typing import Iterator

from ..errors import GenesisMismatchError, PersistenceError, ValidationError
from .block import MAX_BLOCK_SIZE, Block

log = logging.getLogger(__name__)

MAGIC = b"DDCL"
VERSION = 1
HEADER = struct.Struct(">4sH32s")
_LEN = struct.Struct(">I")


class ChainLog:
    def __init__(self, path: str | os.PathLike, genesis_hash: bytes):
        self.path = Path(path)
        self.genesis_hash = genesis_hash
        self._lock = threading.Lock()
        self.truncated_bytes = 0
        try:
            if not self.path.exists() or self.path.stat().st_size == 0:
                with open(self.path, "wb") as fh:
                    fh.write(HEADER.pack(MAGIC, VERSION, genesis_hash))
                    fh.flush()
                    os.fsync(fh.fileno())
            else:
                self._check_header()
        except OSError as exc:
            raise PersistenceError(f"cannot open chain log {self.path}: {exc}") from exc

    def _check_header(self) -> None:
        with open(self.path, "rb") as fh:
            head = fh.read(HEADER.size)
        if len(head) < HEADER.size:
            raise PersistenceError(f"chain log {self.path} has a truncated header")
        magic, version, genesis = HEADER.unpack(head)
        if magic != MAGIC or version != VERSION:
            raise PersistenceError(f"{self.path} is not a chain log")
        if genesis != self.genesis_hash:
            raise GenesisMismatchError(
                f"chain log was created for genesis {genesis.hex()[:16]}, "
                f"configured genesis is {self.genesis_hash.hex()[:16]}"
            )

    def read_blocks(self) -> Iterator[Block]:
        """Yield every intact record; a torn or unparsable tail is truncated away."""
        with open(self.path, "rb") as fh:
            data = fh.read()
        pos = HEADER.size
        good_end = pos
        while pos < len(data):
            if pos + _LEN.size > len(data):
                break
            (n,) = _LEN.unpack_from(data, pos)
            if n > MAX_BLOCK_SIZE or pos + _LEN.size + n > len(data):
                break
            try:
                block = Block.parse(data[pos + _LEN.size : pos + _LEN.size + n])
            except ValidationError:
                break
            pos += _LEN.size + n
            good_end = pos
            yield block
        if good_end < len(data):
            self.truncated_bytes = len(data) - good_end
            log.warning("truncating %d bytes of torn chain log tail", self.truncated_bytes)
            with open(self.path, "r+b") as fh:
                fh.truncate(good_end)

    def append(self, block: Block) -> None:
        raw = block.serialize()
        record = _LEN.pack(len(raw)) + raw
        with self._lock:
            try:
                fd = os.open(self.path, os.O_WRONLY | os.O_APPEND)
                try:
                    os.write(fd, record)
                finally:
                    os.close(fd)
            except OSError as exc:
                raise PersistenceError(f"cannot append to chain log: {exc}") from exc
