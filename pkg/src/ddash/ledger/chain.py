"""Chain state: block tree, fork choice, head-chain content index and mempool."""

from __future__ import annotations

import logging
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Iterable

from ..content_store import ContentId
from .block import Block, BlockHeader, BlockRejection, block_size, validate_block
from .chainlog import ChainLog
from .genesis import GenesisConfig
from .tx import RecordTransaction, TxRejection, tx_id, validate_tx

log = logging.getLogger(__name__)

MEMPOOL_LIMIT = 10_000
ORPHAN_LIMIT = 1_000

EXTENDED = "extended"
REORG = "reorg"
ORPHANED = "orphaned"
REJECTED = "rejected"
STORED = "stored"  # valid, kept on a side branch
KNOWN = "known"


@dataclass(frozen=True)
class ChainEvent:
    kind: str
    block_hash: bytes
    depth: int = 0
    reason: str | None = None
    connected: tuple[bytes, ...] = ()

    @property
    def adopted(self) -> bool:
        return self.kind in (EXTENDED, REORG, STORED)


@dataclass(frozen=True)
class _Meta:
    height: int
    work: int
    parent: bytes


class Mempool:
    """FIFO of validated transactions keyed by tx id."""

    def __init__(self, limit: int = MEMPOOL_LIMIT):
        self.limit = limit
        self._txs: OrderedDict[bytes, RecordTransaction] = OrderedDict()

    def add(self, tx: RecordTransaction, txid: bytes | None = None) -> bool:
        txid = tx_id(tx) if txid is None else txid
        if txid in self._txs:
            return False
        self._txs[txid] = tx
        while len(self._txs) > self.limit:
            self._txs.popitem(last=False)
        return True

    def remove(self, txid: bytes) -> None:
        self._txs.pop(txid, None)

    def __contains__(self, txid: bytes) -> bool:
        return txid in self._txs

    def __len__(self) -> int:
        return len(self._txs)

    def get(self, txid: bytes) -> RecordTransaction | None:
        return self._txs.get(txid)

    def items(self) -> list[tuple[bytes, RecordTransaction]]:
        return list(self._txs.items())


class Chain:
    """Single-writer chain state.  All mutation goes through ``accept_block``/``add_tx``.

    Readers get consistent answers because every public method takes the same lock
    and the head-chain structures are swapped wholesale on reorg.
    """

    def __init__(
        self,
        genesis: GenesisConfig,
        chain_log: ChainLog | None = None,
        clock: Callable[[], float] = time.time,
    ):
        self.genesis = genesis
        self.difficulty = genesis.difficulty
        self.clock = clock
        self.log = chain_log
        self.lock = threading.RLock()
        g = genesis.block()
        self.genesis_hash = g.hash
        self._blocks: dict[bytes, Block] = {self.genesis_hash: g}
        self._meta: dict[bytes, _Meta] = {
            self.genesis_hash: _Meta(0, genesis.difficulty, b"")
        }
        self._orphans: dict[bytes, dict[bytes, Block]] = {}
        self._orphan_count = 0
        self.head = self.genesis_hash
        self._main: list[bytes] = [self.genesis_hash]
        self._index: dict[ContentId, list[tuple[bytes, int]]] = {}
        self._tx_index: dict[bytes, tuple[bytes, int]] = {}
        self.mempool = Mempool()
        self.listeners: list[Callable[[ChainEvent], None]] = []

    # -- loading -------------------------------------------------------------

    def replay_log(self) -> int:
        """Feed every persisted block back through validation; return blocks adopted."""
        if self.log is None:
            return 0
        log_ref, self.log = self.log, None
        adopted = 0
        try:
            for block in log_ref.read_blocks():
                ev = self.accept_block(block, now=float("inf"))
                if ev.adopted:
                    adopted += 1
                elif ev.kind == REJECTED:
                    log.warning("persisted block %s rejected: %s", block.hash.hex()[:16], ev.reason)
        finally:
            self.log = log_ref
        return adopted

    # -- queries --------------------------------------------------------------

    @property
    def height(self) -> int:
        with self.lock:
            return self._meta[self.head].height

    @property
    def head_header(self) -> BlockHeader:
        with self.lock:
            return self._blocks[self.head].header

    def head_work(self) -> int:
        with self.lock:
            return self._meta[self.head].work

    def get_block(self, h: bytes) -> Block | None:
        with self.lock:
            return self._blocks.get(h)

    def knows(self, h: bytes) -> bool:
        with self.lock:
            return h in self._blocks or any(h in o for o in self._orphans.values())

    def height_of(self, h: bytes) -> int | None:
        with self.lock:
            m = self._meta.get(h)
            return None if m is None else m.height

    def work_of(self, h: bytes) -> int | None:
        with self.lock:
            m = self._meta.get(h)
            return None if m is None else m.work

    def main_chain(self) -> list[bytes]:
        with self.lock:
            return list(self._main)

    def is_on_main(self, h: bytes) -> bool:
        with self.lock:
            m = self._meta.get(h)
            return m is not None and m.height < len(self._main) and self._main[m.height] == h

    def all_block_hashes(self) -> list[bytes]:
        with self.lock:
            return list(self._blocks)

    def checkout(self, cid: ContentId | str) -> list[RecordTransaction]:
        if isinstance(cid, str):
            cid = ContentId.parse(cid)
        with self.lock:
            return [self._blocks[b].transactions[i] for b, i in self._index.get(cid, [])]

    def content_index(self) -> dict[ContentId, list[tuple[bytes, int]]]:
        with self.lock:
            return {k: list(v) for k, v in self._index.items()}

    def tx_location(self, txid: bytes) -> tuple[bytes, int] | None:
        with self.lock:
            return self._tx_index.get(txid)

    def locator(self) -> list[bytes]:
        """Head-chain hashes at exponentially growing distance from the tip."""
        with self.lock:
            out, step, i = [], 1, len(self._main) - 1
            while i > 0:
                out.append(self._main[i])
                if len(out) >= 10:
                    step *= 2
                i -= step
            out.append(self._main[0])
            return out

    def blocks_after(self, locator: Iterable[bytes], limit: int = 500) -> list[Block]:
        with self.lock:
            start = 1  # genesis is always shared
            for h in locator:
                if self.is_on_main(h):
                    start = self._meta[h].height + 1
                    break
            return [self._blocks[h] for h in self._main[start : start + limit]]

    # -- mempool ----------------------------------------------------------------

    def add_tx(self, tx: RecordTransaction) -> TxRejection | str | None:
        """Admit ``tx`` to the mempool.  Returns None if newly added, else a reason."""
        reason = validate_tx(tx)
        if reason is not None:
            return reason
        txid = tx_id(tx)
        with self.lock:
            if txid in self._tx_index:
                return "already-confirmed"
            if not self.mempool.add(tx, txid):
                return "duplicate"
        return None

    def mining_candidates(self, max_bytes: int = (1 << 20) - 4096) -> list[RecordTransaction]:
        with self.lock:
            picked, used = [], 0
            for txid, tx in self.mempool.items():
                if txid in self._tx_index:
                    continue
                size = len(tx.description.encode()) + 300
                if used + size > max_bytes:
                    break
                picked.append(tx)
                used += size
            return picked

    # -- block acceptance -------------------------------------------------------

    def accept_block(self, block: Block, now: float | None = None) -> ChainEvent:
        h = block.hash
        with self.lock:
            if h in self._blocks:
                return ChainEvent(KNOWN, h)
            parent = block.header.parent_hash
            if parent not in self._blocks:
                return self._add_orphan(block, h)
            old_head = self.head
            reason = validate_block(
                block,
                self._blocks[parent].header,
                difficulty=self.difficulty,
                now=self.clock() if now is None else now,
            )
            if reason is not None:
                return ChainEvent(REJECTED, h, reason=reason.value)
            if parent == self.head and any(tx_id(t) in self._tx_index for t in block.transactions):
                return ChainEvent(REJECTED, h, reason=BlockRejection.DUPLICATE_TX.value)
            connected = [h]
            self._connect(block, h)
            # Pull in any orphans that were waiting on this block.
            queue = [h]
            while queue:
                p = queue.pop()
                for oh, ob in self._orphans.pop(p, {}).items():
                    self._orphan_count -= 1
                    r = validate_block(
                        ob, self._blocks[p].header, difficulty=self.difficulty,
                        now=self.clock() if now is None else now,
                    )
                    if r is None:
                        self._connect(ob, oh)
                        connected.append(oh)
                        queue.append(oh)
            event = self._choose_head(old_head, h, tuple(connected))
        for fn in list(self.listeners):
            fn(event)
        return event

    def _add_orphan(self, block: Block, h: bytes) -> ChainEvent:
        if block_size(block) > (1 << 20):
            return ChainEvent(REJECTED, h, reason=BlockRejection.OVERSIZE.value)
        if self._orphan_count >= ORPHAN_LIMIT:
            return ChainEvent(REJECTED, h, reason="orphan-pool-full")
        bucket = self._orphans.setdefault(block.header.parent_hash, {})
        if h not in bucket:
            bucket[h] = block
            self._orphan_count += 1
        return ChainEvent(ORPHANED, h)

    def _connect(self, block: Block, h: bytes) -> None:
        pm = self._meta[block.header.parent_hash]
        self._blocks[h] = block
        self._meta[h] = _Meta(pm.height + 1, pm.work + block.header.difficulty, block.header.parent_hash)
        if self.log is not None:
            self.log.append(block)

    def _better(self, a: bytes, b: bytes) -> bool:
        """True if tip ``a`` beats tip ``b``: more work, then smaller hash."""
        wa, wb = self._meta[a].work, self._meta[b].work
        if wa != wb:
            return wa > wb
        return int.from_bytes(a, "big") < int.from_bytes(b, "big")

    def _choose_head(self, old_head: bytes, first: bytes, connected: tuple[bytes, ...]) -> ChainEvent:
        best = old_head
        for c in connected:
            if self._better(c, best):
                best = c
        if best == old_head:
            return ChainEvent(STORED, first, connected=connected)
        new_branch = self._branch_to_main(best)
        fork_height = self._meta[new_branch[0]].height - 1 if new_branch else self._meta[best].height
        displaced = self._main[fork_height + 1 :]
        if not displaced:
            for bh in new_branch:
                self._main.append(bh)
                self._index_block(bh)
            self.head = best
            return ChainEvent(EXTENDED, first, connected=connected)
        # Reorg: swap the head chain, rebuild the index, recycle displaced txs.
        old_txs = [tx for bh in displaced for tx in self._blocks[bh].transactions]
        self._main = self._main[: fork_height + 1] + new_branch
        self.head = best
        self.rebuild_index()
        for tx in old_txs:
            txid = tx_id(tx)
            if txid not in self._tx_index:
                self.mempool.add(tx, txid)
        log.info("reorg depth %d to %s", len(displaced), best.hex()[:16])
        return ChainEvent(REORG, first, depth=len(displaced), connected=connected)

    def _branch_to_main(self, tip: bytes) -> list[bytes]:
        branch = []
        h = tip
        while not self.is_on_main(h):
            branch.append(h)
            h = self._meta[h].parent
        branch.reverse()
        return branch

    def _index_block(self, bh: bytes) -> None:
        for i, tx in enumerate(self._blocks[bh].transactions):
            txid = tx_id(tx)
            self._index.setdefault(tx.content_id, []).append((bh, i))
            self._tx_index[txid] = (bh, i)
            self.mempool.remove(txid)

    def rebuild_index(self) -> None:
        with self.lock:
            self._index = {}
            self._tx_index = {}
            for bh in self._main:
                self._index_block(bh)
