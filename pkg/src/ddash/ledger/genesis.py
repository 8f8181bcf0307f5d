"""Genesis configuration (``genesis.json``) and the block derived from it."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

from ..errors import ConfigError
from ..identity import Fingerprint
from .block import ZERO_HASH, Block, BlockHeader, block_hash

DEFAULT_NETWORK_ID = 4828
DEFAULT_DIFFICULTY = 1_000_000


@dataclass(frozen=True)
class GenesisConfig:
    network_id: int = DEFAULT_NETWORK_ID
    difficulty: int = DEFAULT_DIFFICULTY
    timestamp: int = 0
    comment: str = ""

    def canonical_bytes(self) -> bytes:
        comment = self.comment.encode("utf-8")
        return struct.pack(">QQQI", self.network_id, self.difficulty, self.timestamp, len(comment)) + comment

    def block(self) -> Block:
        # Every field is folded into the root slot so any edit changes the genesis hash.
        header = BlockHeader(
            parent_hash=ZERO_HASH,
            height=0,
            timestamp=self.timestamp,
            tx_merkle_root=hashlib.sha256(self.canonical_bytes()).digest(),
            difficulty=self.difficulty,
            nonce=0,
            miner=Fingerprint(ZERO_HASH),
        )
        return Block(header, ())

    @property
    def hash(self) -> bytes:
        return block_hash(self.block().header)

    @classmethod
    def from_dict(cls, raw: dict) -> GenesisConfig:
        try:
            cfg = cls(
                network_id=int(raw["network_id"]),
                difficulty=int(raw["difficulty"]),
                timestamp=int(raw.get("timestamp", 0)),
                comment=str(raw.get("comment", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid genesis: {exc}") from None
        if not 0 < cfg.network_id < 2**32:
            raise ConfigError("genesis network_id must be a positive u32")
        if cfg.difficulty <= 0:
            raise ConfigError("genesis difficulty must be positive")
        if cfg.timestamp < 0:
            raise ConfigError("genesis timestamp must be non-negative")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> GenesisConfig:
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"genesis not found: {path}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"unreadable genesis {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("genesis must be a JSON object")
        return cls.from_dict(raw)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")
