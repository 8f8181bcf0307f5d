import random
import time
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from ddash.content_store import ContentId
from ddash.errors import GenesisMismatchError, ValidationError
from ddash.identity import Fingerprint, generate_identity
from ddash.ledger import Block, Chain, ChainLog, GenesisConfig, make_record, mine_block, tx_id, validate_block
from ddash.ledger.chain import EXTENDED, KNOWN, ORPHANED, REJECTED, REORG, STORED, Mempool

MINER = Fingerprint(bytes(32))


@pytest.fixture
def genesis():
    return GenesisConfig(4828, 1, int(time.time()) - 1000, "chain tests")


def child(chain_or_block, txs=(), nonce=None):
    parent = chain_or_block.header if isinstance(chain_or_block, Block) else chain_or_block
    return mine_block(parent, list(txs), MINER, start_nonce=nonce)


def index_oracle(chain):
    """Walk parent links from the head and rebuild the content index by hand."""
    path = []
    h = chain.head
    while h != chain.genesis_hash:
        path.append(h)
        h = chain.get_block(h).header.parent_hash
    path.reverse()
    index = {}
    for bh in path:
        for i, tx in enumerate(chain.get_block(bh).transactions):
            index.setdefault(tx.content_id, []).append((bh, i))
    return index


def test_extend_from_genesis(genesis):
    chain = Chain(genesis)
    b1 = child(genesis.block())
    ev = chain.accept_block(b1)
    assert ev.kind == EXTENDED
    assert chain.head == b1.hash and chain.height == 1
    assert chain.accept_block(b1).kind == KNOWN


def test_rejected_block_is_reported(genesis):
    chain = Chain(genesis)
    b1 = child(genesis.block())
    bad = Block(replace(b1.header, tx_merkle_root=b"\x01" * 32))
    ev = chain.accept_block(bad)
    assert ev.kind == REJECTED and ev.reason == "merkle-mismatch"
    assert chain.height == 0


def test_two_node_fork_then_extend_reorgs(genesis):
    a, b = Chain(genesis), Chain(genesis)
    g = genesis.block()
    a1 = child(g, nonce=1)
    b1 = child(g, nonce=2)
    assert a1.hash != b1.hash
    assert a.accept_block(a1).kind == EXTENDED
    assert b.accept_block(b1).kind == EXTENDED
    # Exchange: the equal-work tie goes to the smaller hash on both sides.
    ea, eb = a.accept_block(b1), b.accept_block(a1)
    assert a.head == b.head
    loser = a if ea.kind == REORG else b
    assert {ea.kind, eb.kind} == {REORG, STORED}
    # The side that is now behind sees the other branch extend.
    winner_tip = a.get_block(a.head)
    other = a1 if winner_tip.hash == b1.hash else b1
    a2 = child(other, nonce=3)
    ev_a = a.accept_block(a2)
    ev_b = b.accept_block(a2)
    assert a.head == b.head == a2.hash
    assert REORG in (ev_a.kind, ev_b.kind)
    assert max(ev_a.depth, ev_b.depth) == 1
    assert loser is a or loser is b


def test_orphan_connected_when_parent_arrives(genesis):
    chain = Chain(genesis)
    b1 = child(genesis.block())
    b2 = child(b1)
    b3 = child(b2)
    assert chain.accept_block(b3).kind == ORPHANED
    assert chain.accept_block(b2).kind == ORPHANED
    ev = chain.accept_block(b1)
    assert ev.kind == EXTENDED
    assert set(ev.connected) == {b1.hash, b2.hash, b3.hash}
    assert chain.head == b3.hash and chain.height == 3


def test_checkout_two_publishers_in_block_order(genesis):
    chain = Chain(genesis)
    alice, bob = generate_identity(), generate_identity()
    cid = ContentId.for_bytes(b"shared dataset")
    t1 = make_record(cid, alice, None, "alice copy")
    t2 = make_record(cid, bob, None, "bob copy")
    b1 = child(genesis.block(), [t1])
    b2 = child(b1, [t2])
    chain.accept_block(b1)
    chain.accept_block(b2)
    assert chain.checkout(cid) == [t1, t2]
    assert chain.checkout(str(cid)) == [t1, t2]
    assert chain.checkout(ContentId.for_bytes(b"never")) == []
    with pytest.raises(ValidationError):
        chain.checkout("not-an-id")


def test_reorg_returns_displaced_txs_to_mempool(genesis):
    chain = Chain(genesis)
    ident = generate_identity()
    tx = make_record(ContentId.for_bytes(b"doc"), ident, None, "d")
    g = genesis.block()
    a1 = child(g, [tx], nonce=10)
    chain.accept_block(a1)
    assert chain.checkout(tx.content_id) == [tx]
    b1 = child(g, nonce=20)
    b2 = child(b1)
    events = [chain.accept_block(b1), chain.accept_block(b2)]
    # b1 may already win the equal-work tiebreak; either way exactly one reorg of depth 1.
    assert [(e.kind, e.depth) for e in events if e.kind == REORG] == [(REORG, 1)]
    assert chain.head == b2.hash
    assert chain.checkout(tx.content_id) == []
    assert tx_id(tx) in chain.mempool


def test_mempool_rejects_confirmed_and_duplicate(genesis):
    chain = Chain(genesis)
    ident = generate_identity()
    tx = make_record(ContentId.for_bytes(b"m"), ident, None, "m")
    assert chain.add_tx(tx) is None
    assert chain.add_tx(tx) == "duplicate"
    chain.accept_block(child(genesis.block(), [tx]))
    assert tx_id(tx) not in chain.mempool
    assert chain.add_tx(tx) == "already-confirmed"


def test_block_repeating_confirmed_tx_rejected(genesis):
    chain = Chain(genesis)
    tx = make_record(ContentId.for_bytes(b"m"), generate_identity(), None, "m")
    b1 = child(genesis.block(), [tx])
    chain.accept_block(b1)
    assert chain.accept_block(child(b1, [tx])).kind == REJECTED


def test_mempool_fifo_eviction():
    pool = Mempool(limit=3)
    ident = generate_identity()
    txs = [make_record(ContentId.for_bytes(bytes([i])), ident, None, "") for i in range(5)]
    for t in txs:
        pool.add(t)
    assert len(pool) == 3
    assert [t for _, t in pool.items()] == txs[2:]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_index_equals_rebuild_on_random_forks(seed):
    rng = random.Random(seed)
    genesis = GenesisConfig(4828, 1, 1000, "fuzz")
    chain = Chain(genesis, clock=lambda: 10**9)
    ident = generate_identity()
    tips = [genesis.block()]
    best_work = chain.head_work()
    for i in range(rng.randint(5, 50)):
        parent = rng.choice(tips)
        txs = [
            make_record(ContentId.for_bytes(bytes([rng.randrange(6)])), ident, None, f"{i}-{k}", timestamp=i)
            for k in range(rng.randint(0, 2))
        ]
        block = child(parent, txs, nonce=rng.getrandbits(64))
        ev = chain.accept_block(block)
        if ev.kind == REJECTED:
            continue
        tips.append(block)
        assert chain.head_work() >= best_work
        best_work = chain.head_work()
        assert chain.content_index() == index_oracle(chain)
    for tip in tips:
        assert chain.work_of(tip.hash) <= chain.head_work()


def test_tamper_evidence_over_history(genesis):
    chain = Chain(genesis)
    ident = generate_identity()
    blocks = []
    parent = genesis.block()
    for i in range(6):
        txs = [make_record(ContentId.for_bytes(bytes([i])), ident, None, f"r{i}")]
        b = child(parent, txs)
        chain.accept_block(b)
        blocks.append(b)
        parent = b
    rng = random.Random(5)
    for _ in range(60):
        i = rng.randrange(len(blocks))
        raw = bytearray(blocks[i].serialize())
        pos = rng.randrange(len(raw))
        raw[pos] ^= 1 << rng.randrange(8)
        try:
            mutated = Block.parse(bytes(raw))
        except ValidationError:
            continue
        parent_header = genesis.block().header if i == 0 else blocks[i - 1].header
        broken = validate_block(mutated, parent_header, difficulty=genesis.difficulty) is not None
        if not broken:
            # A header change with difficulty 1 can still satisfy PoW, but the hash moves,
            # so the next block no longer links to it.
            assert mutated.hash != blocks[i].hash
            if i + 1 < len(blocks):
                assert validate_block(blocks[i + 1], mutated.header) is not None


def test_persist_and_replay(tmp_path, genesis):
    log = ChainLog(tmp_path / "chain.log", genesis.hash)
    chain = Chain(genesis, log)
    parent = genesis.block()
    forks = []
    for i in range(5):
        parent = child(parent)
        chain.accept_block(parent)
        if i == 2:
            forks.append(parent)
    side = child(forks[0], nonce=99)
    chain.accept_block(side)
    reloaded = Chain(genesis, ChainLog(tmp_path / "chain.log", genesis.hash))
    assert reloaded.replay_log() == 6
    assert reloaded.head == chain.head
    assert reloaded.content_index() == chain.content_index()


def test_torn_tail_is_truncated(tmp_path, genesis):
    path = tmp_path / "chain.log"
    chain = Chain(genesis, ChainLog(path, genesis.hash))
    b1 = child(genesis.block())
    chain.accept_block(b1)
    chain.accept_block(child(b1))
    good = path.stat().st_size
    with open(path, "ab") as fh:
        fh.write(b"\x00\x00\x01\x00partial")
    log = ChainLog(path, genesis.hash)
    reloaded = Chain(genesis, log)
    assert reloaded.replay_log() == 2
    assert log.truncated_bytes == 11
    assert path.stat().st_size == good


def test_chain_log_genesis_mismatch(tmp_path, genesis):
    ChainLog(tmp_path / "chain.log", genesis.hash)
    other = replace(genesis, comment="different")
    with pytest.raises(GenesisMismatchError):
        ChainLog(tmp_path / "chain.log", other.hash)


def test_locator_and_blocks_after(genesis):
    chain = Chain(genesis)
    parent = genesis.block()
    for _ in range(40):
        parent = child(parent)
        chain.accept_block(parent)
    loc = chain.locator()
    assert loc[0] == chain.head and loc[-1] == chain.genesis_hash
    assert len(loc) < 20
    main = chain.main_chain()
    after = chain.blocks_after([main[30]])
    assert [b.hash for b in after] == main[31:]
    assert [b.hash for b in chain.blocks_after([b"\x07" * 32])] == main[1:]
