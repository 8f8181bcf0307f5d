"""Proof-of-work ledger of signed asset records."""

from .block import (
    MAX_BLOCK_SIZE,
    MAX_FUTURE_DRIFT,
    Block,
    BlockHeader,
    BlockRejection,
    MiningStats,
    block_hash,
    merkle_root,
    mine_block,
    pow_valid,
    target_for,
    validate_block,
)
from .chain import Chain, ChainEvent, Mempool
from .chainlog import ChainLog
from .genesis import GenesisConfig
from .tx import (
    RecordTransaction,
    TxRejection,
    canonical_tx_bytes,
    make_record,
    parse_tx,
    sign_tx,
    tx_id,
    validate_tx,
)

__all__ = [
    "MAX_BLOCK_SIZE",
    "MAX_FUTURE_DRIFT",
    "Block",
    "BlockHeader",
    "BlockRejection",
    "Chain",
    "ChainEvent",
    "ChainLog",
    "GenesisConfig",
    "Mempool",
    "MiningStats",
    "RecordTransaction",
    "TxRejection",
    "block_hash",
    "canonical_tx_bytes",
    "make_record",
    "merkle_root",
    "mine_block",
    "parse_tx",
    "pow_valid",
    "sign_tx",
    "target_for",
    "tx_id",
    "validate_block",
    "validate_tx",
]
