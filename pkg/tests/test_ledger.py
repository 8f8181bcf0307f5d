import hashlib
import time
from dataclasses import replace
from pathlib import Path

import pytest

import oracles
from ddash.content_store import ContentId
from ddash.errors import ValidationError
from ddash.identity import Fingerprint, Identity, fingerprint, generate_identity
from ddash.ledger import (
    Block,
    BlockHeader,
    BlockRejection,
    GenesisConfig,
    MiningStats,
    RecordTransaction,
    TxRejection,
    block_hash,
    canonical_tx_bytes,
    make_record,
    merkle_root,
    mine_block,
    parse_tx,
    pow_valid,
    sign_tx,
    tx_id,
    validate_block,
    validate_tx,
)

VECTORS = Path(__file__).parent / "vectors"
LEDGER = VECTORS / "ledger"
OWNER_SEED = bytes.fromhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")


def golden_tx() -> RecordTransaction:
    owner = Identity.from_seed(OWNER_SEED)
    access = [fingerprint(bytes([1]) * 32), fingerprint(bytes([2]) * 32)]
    return make_record(ContentId.for_bytes(b"ddash golden record"), owner, access, "golden vector", 1700000000)


def test_canonical_bytes_match_golden():
    tx = golden_tx()
    assert canonical_tx_bytes(tx, True).hex() == (VECTORS / "tx.hex").read_text().strip()
    assert tx_id(tx).hex() == (LEDGER / "tx_id.hex").read_text().strip()
    assert parse_tx(canonical_tx_bytes(tx)) == tx


def test_canonical_bytes_are_deterministic():
    tx = golden_tx()
    assert canonical_tx_bytes(tx) == canonical_tx_bytes(tx)


def test_timestamp_only_difference():
    a = golden_tx()
    b = replace(a, timestamp=a.timestamp + 1)
    ra, rb = canonical_tx_bytes(a, False), canonical_tx_bytes(b, False)
    diff = [i for i in range(len(ra)) if ra[i] != rb[i]]
    desc_len = len(a.description.encode())
    # Oracle offset: u16 + 34 mh + 32 owner + flag + u16 + 2*32 + u32 + desc
    ts_at = 2 + 34 + 32 + 1 + 2 + 64 + 4 + desc_len
    assert len(ra) == len(rb)
    assert all(ts_at <= i < ts_at + 8 for i in diff)
    assert ra[ts_at : ts_at + 8] == (1700000000).to_bytes(8, "big")


def test_public_layout_matches_oracle():
    ident = generate_identity()
    cid = ContentId.for_bytes(b"public")
    tx = make_record(cid, ident, None, "p", 5)
    expected = oracles.tx_bytes(cid.multihash, ident.fingerprint.digest, None, "p", 5, ident.signing_public, tx.signature)
    assert canonical_tx_bytes(tx) == expected


def test_tx_id_changes_with_signature():
    tx = golden_tx()
    sig = bytearray(tx.signature)
    sig[0] ^= 1
    assert tx_id(tx) != tx_id(replace(tx, signature=bytes(sig)))
    assert tx_id(tx) == tx_id(golden_tx())


def test_validate_ok():
    assert validate_tx(golden_tx()) is None


def test_empty_access_list():
    tx = make_record(ContentId.for_bytes(b"x"), generate_identity(), [], "no readers")
    assert tx.access == ()
    assert validate_tx(tx) == TxRejection.EMPTY_ACCESS_LIST


def test_resigned_by_other_identity():
    tx = golden_tx()
    thief = generate_identity()
    forged = sign_tx(tx, thief)  # owner field still the original fingerprint
    assert forged.owner == tx.owner
    assert validate_tx(forged) == TxRejection.FINGERPRINT_MISMATCH


def test_bad_signature():
    tx = golden_tx()
    forged = replace(tx, description="changed")
    assert validate_tx(forged) == TxRejection.BAD_SIGNATURE


def test_oversize_description():
    tx = replace(golden_tx(), description="x" * 1025)
    assert validate_tx(tx) == TxRejection.OVERSIZE_DESCRIPTION
    with pytest.raises(ValidationError):
        canonical_tx_bytes(tx)


def test_malformed_content_id():
    tx = replace(golden_tx(), content_id=ContentId(b"\x11\x20" + bytes(32)))
    assert validate_tx(tx) == TxRejection.MALFORMED_CONTENT_ID


def test_unsorted_access_list():
    tx = golden_tx()
    tx = replace(tx, access=tuple(reversed(tx.access)))
    assert validate_tx(tx) == TxRejection.UNSORTED_ACCESS_LIST


def test_merkle_base_cases():
    h = hashlib.sha256(b"h").digest()
    assert merkle_root([]) == bytes(32)
    assert merkle_root([h]) == hashlib.sha256(h + h).digest()


def test_merkle_three_leaves_golden():
    leaves = [hashlib.sha256(bytes([i])).digest() for i in range(3)]
    assert merkle_root(leaves).hex() == (LEDGER / "merkle3.hex").read_text().strip()


@pytest.mark.parametrize("n", [2, 4, 5, 7, 8, 13])
def test_merkle_matches_oracle(n):
    leaves = [hashlib.sha256(bytes([i])).digest() for i in range(n)]
    assert merkle_root(leaves) == oracles.merkle(leaves)


def test_genesis_hash_golden():
    g = GenesisConfig.load(LEDGER / "genesis.json")
    assert g.network_id == 4828 and g.difficulty == 1_000_000
    assert g.hash.hex() == (LEDGER / "genesis_hash.hex").read_text().strip()


@pytest.mark.parametrize("field,value", [("network_id", 4829), ("difficulty", 999), ("timestamp", 1), ("comment", "x")])
def test_any_genesis_field_changes_hash(field, value):
    g = GenesisConfig.load(LEDGER / "genesis.json")
    assert replace(g, **{field: value}).hash != g.hash


def test_golden_header_pow():
    raw = bytes.fromhex((LEDGER / "header.hex").read_text().strip())
    header = BlockHeader.parse(raw)
    assert header.nonce == int((LEDGER / "header_nonce.txt").read_text())
    assert header.serialize() == raw
    assert block_hash(header).hex() == (LEDGER / "header_hash.hex").read_text().strip()
    assert pow_valid(header)
    assert header.tx_merkle_root == merkle_root([tx_id(golden_tx())])
    g = GenesisConfig.load(LEDGER / "genesis.json")
    block = Block(header, (golden_tx(),))
    assert validate_block(block, g.block().header, difficulty=1000, now=1700000200) is None


def test_difficulty_one_accepts_every_nonce():
    base = BlockHeader(bytes(32), 1, 0, bytes(32), 1, 0, Fingerprint(bytes(32)))
    assert all(pow_valid(replace(base, nonce=n)) for n in range(200))


def test_difficulty_zero_is_validation_error():
    with pytest.raises(ValidationError):
        pow_valid(BlockHeader(bytes(32), 1, 0, bytes(32), 0, 0, Fingerprint(bytes(32))))


@pytest.fixture
def genesis():
    return GenesisConfig(4828, 1000, int(time.time()) - 100, "unit")


def test_mine_on_genesis(genesis):
    miner = generate_identity().fingerprint
    parent = genesis.block().header
    block = mine_block(parent, [], miner)
    assert block.header.height == 1
    assert block.header.tx_merkle_root == bytes(32)
    assert validate_block(block, parent) is None
    assert Block.parse(block.serialize()) == block


def test_mined_block_with_txs_validates(genesis):
    ident = generate_identity()
    txs = [make_record(ContentId.for_bytes(bytes([i])), ident, None, f"r{i}") for i in range(5)]
    parent = genesis.block().header
    block = mine_block(parent, txs, ident.fingerprint)
    assert validate_block(block, parent) is None


def test_mutated_tx_is_merkle_mismatch(genesis):
    ident = generate_identity()
    tx = make_record(ContentId.for_bytes(b"x"), ident, None, "orig")
    parent = genesis.block().header
    block = mine_block(parent, [tx], ident.fingerprint)
    bad = Block(block.header, (replace(tx, timestamp=tx.timestamp ^ 1),))
    assert validate_block(bad, parent) == BlockRejection.MERKLE_MISMATCH


def test_future_timestamp_rejected(genesis):
    now = 1_800_000_000.0
    parent = replace(genesis.block().header, timestamp=int(now) - 10)
    block = mine_block(parent, [], Fingerprint(bytes(32)), clock=lambda: now + 3 * 3600)
    assert validate_block(block, parent, now=now) == BlockRejection.FUTURE_TIMESTAMP
    assert validate_block(block, parent, now=now + 3 * 3600) is None


def test_timestamp_is_at_least_parent(genesis):
    parent = replace(genesis.block().header, timestamp=2_000_000_000)
    block = mine_block(parent, [], Fingerprint(bytes(32)), clock=lambda: 5)
    assert block.header.timestamp == parent.timestamp


def test_wrong_difficulty_rejected(genesis):
    parent = genesis.block().header
    block = mine_block(parent, [], Fingerprint(bytes(32)), difficulty=10)
    assert validate_block(block, parent) == BlockRejection.BAD_DIFFICULTY


def test_cancelled_mining_returns_none(genesis):
    import threading

    ev = threading.Event()
    ev.set()
    parent = replace(genesis.block().header, difficulty=10**15)
    assert mine_block(parent, [], Fingerprint(bytes(32)), cancel=ev) is None


def test_mining_trials_counted(genesis):
    stats = MiningStats()
    parent = replace(genesis.block().header, difficulty=1)
    mine_block(parent, [], Fingerprint(bytes(32)), stats=stats)
    assert stats.trials == 1


@pytest.mark.parametrize("difficulty", [1000, 10000])
def test_mining_mean_within_factor_five(difficulty):
    parent = BlockHeader(bytes(32), 0, 0, bytes(32), difficulty, 0, Fingerprint(bytes(32)))
    stats = MiningStats()
    blocks = 20
    for i in range(blocks):
        mine_block(replace(parent, height=i), [], Fingerprint(bytes(32)), stats=stats)
    mean = stats.trials / blocks
    assert difficulty / 5 <= mean <= difficulty * 5


def test_block_parse_rejects_truncation(genesis):
    ident = generate_identity()
    tx = make_record(ContentId.for_bytes(b"x"), ident, None, "t")
    block = mine_block(genesis.block().header, [tx], ident.fingerprint)
    raw = block.serialize()
    for cut in (1, 10, 100, len(raw) - 1):
        with pytest.raises(ValidationError):
            Block.parse(raw[:cut])
