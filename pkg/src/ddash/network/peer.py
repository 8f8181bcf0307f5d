"""TCP peer sessions: genesis-gated handshake, INV gossip, chain sync and object fetch.

Every session gets one reader thread.  Blocks and transactions received from
peers go straight into ``Chain.accept_block`` / ``Chain.add_tx`` which validate
everything before it touches local state.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

from ..content_store import KIND_LEAF, ContentId, ContentStore
from ..errors import (
    CorruptionError,
    NotFoundError,
    ProtocolError,
    UnavailableError,
    ValidationError,
)
from ..ledger import Block, Chain, RecordTransaction, parse_tx, tx_id
from ..ledger.chain import ORPHANED, REJECTED
from ..ledger.tx import canonical_tx_bytes
from . import wire
from .wire import Hello, InvKind, MsgType

log = logging.getLogger(__name__)

HANDSHAKE_TIMEOUT = 10.0
BAN_SECONDS = 600.0
SEEN_CACHE_SIZE = 65536
SYNC_BATCH = 500
FETCH_TIMEOUT = 5.0
ANNOUNCE_INTERVAL = 1.0

HANDSHAKING = "handshaking"
ACTIVE = "active"
CLOSED = "closed"

FrameTap = Callable[[str, "PeerSession", MsgType, bytes], None]


@dataclass(frozen=True)
class HandshakeResult:
    active: bool
    reason: str | None = None
    session: PeerSession | None = None


class LRUSet:
    def __init__(self, capacity: int = SEEN_CACHE_SIZE):
        self.capacity = capacity
        self._d: OrderedDict[bytes, None] = OrderedDict()
        self._lock = threading.Lock()

    def add(self, key: bytes) -> bool:
        """Insert ``key``; return False if it was already present."""
        with self._lock:
            if key in self._d:
                self._d.move_to_end(key)
                return False
            self._d[key] = None
            if len(self._d) > self.capacity:
                self._d.popitem(last=False)
            return True

    def __contains__(self, key: bytes) -> bool:
        with self._lock:
            return key in self._d

    def __len__(self) -> int:
        return len(self._d)


class PeerSession:
    def __init__(self, network: PeerNetwork, sock: socket.socket, address: tuple[str, int], outbound: bool):
        self.network = network
        self.sock = sock
        self.address = address
        self.outbound = outbound
        self.state = HANDSHAKING
        self.remote: Hello | None = None
        self.last_seen = time.time()
        self._send_lock = threading.Lock()
        self._pending: dict[bytes, queue.Queue] = {}
        self._pending_lock = threading.Lock()
        self.syncing = False
        self.sync_adopted = 0
        self._sync_done = threading.Event()
        self._sync_done.set()
        self.close_reason: str | None = None

    @property
    def key(self) -> tuple[str, int]:
        """Identity used for bans: remote host plus its advertised listen port."""
        port = self.remote.listen_port if self.remote else self.address[1]
        return (self.address[0], port)

    @property
    def remote_head(self) -> tuple[bytes, int] | None:
        return None if self.remote is None else (self.remote.head_hash, self.remote.head_height)

    def send(self, mtype: MsgType, payload: bytes = b"") -> None:
        frame = wire.encode_frame(mtype, payload)
        for tap in self.network.taps:
            tap("out", self, mtype, payload)
        with self._send_lock:
            self.sock.sendall(frame)

    def close(self, reason: str | None = None) -> None:
        if self.state == CLOSED:
            return
        self.state = CLOSED
        self.close_reason = reason
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self._sync_done.set()
        with self._pending_lock:
            for q in self._pending.values():
                q.put(None)
        self.network._forget(self)

    def __repr__(self) -> str:
        return f"PeerSession({self.address[0]}:{self.address[1]}, {self.state})"


class PeerNetwork:
    def __init__(
        self,
        chain: Chain,
        store: ContentStore,
        *,
        host: str = "127.0.0.1",
        port: int = wire.DEFAULT_PORT,
        network_id: int | None = None,
    ):
        self.chain = chain
        self.store = store
        self.host = host
        self.port = port
        self.network_id = chain.genesis.network_id if network_id is None else network_id
        self.seen = LRUSet()
        self.taps: list[FrameTap] = []
        self.on_tx: list[Callable[[RecordTransaction], None]] = []
        self._sessions: list[PeerSession] = []
        self._lock = threading.Lock()
        self._banned: dict[tuple[str, int], float] = {}
        self._listener: socket.socket | None = None
        self._stopping = threading.Event()

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> None:
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind((self.host, self.port))
        s.listen(32)
        self.port = s.getsockname()[1]
        self._listener = s
        threading.Thread(target=self._accept_loop, name=f"p2p-accept-{self.port}", daemon=True).start()
        threading.Thread(target=self._announce_loop, name=f"p2p-announce-{self.port}", daemon=True).start()

    def stop(self) -> None:
        self._stopping.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for s in self.sessions(include_all=True):
            s.close("shutdown")

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            session = PeerSession(self, sock, addr, outbound=False)
            threading.Thread(target=self._run_session, args=(session,), daemon=True).start()

    def _announce_loop(self) -> None:
        # Re-announcing the head lets peers that missed an INV (e.g. mid-handshake) catch up.
        while not self._stopping.wait(ANNOUNCE_INTERVAL):
            payload = wire.encode_inv(InvKind.BLOCK, [self.chain.head])
            for s in self.sessions():
                try:
                    s.send(MsgType.INV, payload)
                except OSError:
                    s.close("send failed")

    def connect(self, host: str, port: int, timeout: float = HANDSHAKE_TIMEOUT) -> HandshakeResult:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            return HandshakeResult(False, f"unreachable: {exc}")
        session = PeerSession(self, sock, (host, port), outbound=True)
        result = self.handshake(session)
        if result.active:
            threading.Thread(target=self._reader_loop, args=(session,), daemon=True).start()
            self._after_handshake(session)
        return result

    def _run_session(self, session: PeerSession) -> None:
        if self.handshake(session).active:
            self._after_handshake(session)
            self._reader_loop(session)

    def sessions(self, include_all: bool = False) -> list[PeerSession]:
        with self._lock:
            return [s for s in self._sessions if include_all or s.state == ACTIVE]

    def _forget(self, session: PeerSession) -> None:
        with self._lock:
            if session in self._sessions:
                self._sessions.remove(session)

    # -- bans -------------------------------------------------------------------

    def ban(self, session: PeerSession, reason: str) -> None:
        log.warning("banning peer %s for %.0fs: %s", session.key, BAN_SECONDS, reason)
        self._banned[session.key] = time.time() + BAN_SECONDS
        session.close(reason)

    def is_banned(self, key: tuple[str, int]) -> bool:
        until = self._banned.get(key)
        if until is None:
            return False
        if until < time.time():
            del self._banned[key]
            return False
        return True

    # -- handshake ------------------------------------------------------------

    def local_hello(self) -> Hello:
        with self.chain.lock:
            head, height = self.chain.head, self.chain.height
        return Hello(
            wire.PROTOCOL_VERSION, self.network_id, self.chain.genesis_hash, head, height, self.port
        )

    def handshake(self, session: PeerSession) -> HandshakeResult:
        sock = session.sock
        try:
            sock.settimeout(HANDSHAKE_TIMEOUT)
            session.send(MsgType.HELLO, self.local_hello().encode())
            mtype, payload = wire.read_frame(sock)
            for tap in self.taps:
                tap("in", session, mtype, payload)
            if mtype != MsgType.HELLO:
                raise ProtocolError("expected HELLO")
            hello = Hello.decode(payload)
        except socket.timeout:
            return self._reject(session, "timeout")
        except ProtocolError:
            return self._reject(session, "protocol")
        except OSError as exc:
            return self._reject(session, f"io: {exc}")
        session.remote = hello
        if hello.version != wire.PROTOCOL_VERSION:
            return self._reject(session, "version-mismatch")
        # network_id is hashed into genesis, so a differing genesis is reported first.
        if hello.genesis_hash != self.chain.genesis_hash:
            return self._reject(session, "genesis-mismatch")
        if hello.network_id != self.network_id:
            return self._reject(session, "network-mismatch")
        if self.is_banned(session.key):
            return self._reject(session, "banned")
        sock.settimeout(None)
        session.state = ACTIVE
        session.last_seen = time.time()
        with self._lock:
            self._sessions.append(session)
        log.info("peer %s active (height %d)", session.key, hello.head_height)
        return HandshakeResult(True, None, session)

    def _reject(self, session: PeerSession, reason: str) -> HandshakeResult:
        log.info("handshake with %s rejected: %s", session.address, reason)
        session.close(reason)
        return HandshakeResult(False, reason, session)

    def _after_handshake(self, session: PeerSession) -> None:
        # Hand the new peer our pending txs; anything broadcast before it went active was missed.
        pending = [txid for txid, _ in self.chain.mempool.items()]
        for i in range(0, len(pending), 1000):
            try:
                session.send(MsgType.INV, wire.encode_inv(InvKind.TX, pending[i : i + 1000]))
            except OSError:
                session.close("send failed")
                return
        head, height = session.remote_head
        if height >= self.chain.height and not self.chain.knows(head):
            self._request_blocks(session)

    # -- reader -----------------------------------------------------------------

    def _reader_loop(self, session: PeerSession) -> None:
        decoder = wire.FrameDecoder()
        try:
            while session.state == ACTIVE:
                data = session.sock.recv(1 << 16)
                if not data:
                    break
                for mtype, payload in decoder.feed(data):
                    session.last_seen = time.time()
                    for tap in self.taps:
                        tap("in", session, mtype, payload)
                    self._dispatch(session, mtype, payload)
        except ProtocolError as exc:
            self.ban(session, f"protocol: {exc}")
        except (OSError, ConnectionError):
            pass
        except Exception:
            log.exception("session %s crashed", session.address)
        finally:
            session.close(session.close_reason or "disconnected")

    def _dispatch(self, session: PeerSession, mtype: MsgType, payload: bytes) -> None:
        if mtype == MsgType.INV:
            self._on_inv(session, *wire.decode_inv(payload))
        elif mtype == MsgType.GET_DATA:
            self._on_get_data(session, *wire.decode_get_data(payload))
        elif mtype == MsgType.TX:
            self._on_tx(session, payload)
        elif mtype == MsgType.GET_BLOCKS:
            self._on_get_blocks(session, wire.decode_get_blocks(payload))
        elif mtype == MsgType.BLOCKS:
            self._on_blocks(session, wire.decode_blocks(payload))
        elif mtype == MsgType.DATA:
            self._on_data(session, payload)
        elif mtype == MsgType.PING:
            session.send(MsgType.PONG, wire.encode_ping(wire.decode_ping(payload)))
        elif mtype == MsgType.PONG:
            wire.decode_ping(payload)
        elif mtype == MsgType.HELLO:
            raise ProtocolError("unexpected HELLO after handshake")

    def _on_inv(self, session: PeerSession, kind: InvKind, ids: list[bytes]) -> None:
        if kind == InvKind.TX:
            want = [
                i for i in ids
                if i not in self.seen and i not in self.chain.mempool and self.chain.tx_location(i) is None
            ]
        elif kind == InvKind.BLOCK:
            want = [i for i in ids if not self.chain.knows(i)]
        else:
            raise ProtocolError("INV of objects is not used")
        if want:
            session.send(MsgType.GET_DATA, wire.encode_get_data(kind, want))

    def _on_get_data(self, session: PeerSession, kind: InvKind, ids: list[bytes]) -> None:
        for item in ids:
            if kind == InvKind.TX:
                tx = self.chain.mempool.get(item)
                if tx is None:
                    loc = self.chain.tx_location(item)
                    if loc is not None:
                        tx = self.chain.get_block(loc[0]).transactions[loc[1]]
                if tx is not None:
                    session.send(MsgType.TX, canonical_tx_bytes(tx, True))
            elif kind == InvKind.BLOCK:
                block = self.chain.get_block(item)
                if block is not None:
                    session.send(MsgType.BLOCKS, wire.encode_blocks([block.serialize()]))
            else:
                self._serve_object(session, item)

    def _serve_object(self, session: PeerSession, item: bytes) -> None:
        cid = ContentId(item)
        try:
            kind, payload = self.store.read_object(cid) if cid.is_wellformed() else (None, None)
        except (NotFoundError, CorruptionError):
            kind = None
        if kind is None:
            session.send(MsgType.DATA, wire.encode_data(item, False))
        else:
            session.send(MsgType.DATA, wire.encode_data(item, True, kind, payload))

    def _on_tx(self, session: PeerSession, payload: bytes) -> None:
        try:
            tx = parse_tx(payload)
        except ValidationError as exc:
            raise ProtocolError(f"undecodable TX: {exc}") from None
        txid = tx_id(tx)
        reason = self.chain.add_tx(tx)
        if reason is None:
            for fn in self.on_tx:
                fn(tx)
            self._announce(InvKind.TX, txid, exclude=session)
        elif reason not in ("duplicate", "already-confirmed"):
            self.ban(session, f"invalid tx: {reason}")

    def _on_get_blocks(self, session: PeerSession, locator: list[bytes]) -> None:
        raw, size = [], 2
        for block in self.chain.blocks_after(locator, SYNC_BATCH):
            b = block.serialize()
            if size + 4 + len(b) + 1 > wire.MAX_FRAME:
                break
            raw.append(b)
            size += 4 + len(b)
        session.send(MsgType.BLOCKS, wire.encode_blocks(raw))

    def _on_blocks(self, session: PeerSession, raw_blocks: list[bytes]) -> None:
        adopted = 0
        head_before = self.chain.head
        need_sync = False
        last = None
        for raw in raw_blocks:
            try:
                block = Block.parse(raw)
            except ValidationError as exc:
                self.ban(session, f"undecodable block: {exc}")
                return
            ev = self.chain.accept_block(block)
            if ev.kind == REJECTED:
                self.ban(session, f"invalid block: {ev.reason}")
                return
            if ev.kind == ORPHANED:
                need_sync = True
            if ev.adopted:
                adopted += len(ev.connected)
                for h in ev.connected:
                    self.seen.add(h)
            last = ev.block_hash
        if self.chain.head != head_before:
            self._announce(InvKind.BLOCK, self.chain.head, exclude=session)
        if session.syncing:
            session.sync_adopted += adopted
            if raw_blocks and adopted:
                self._request_blocks(session, after=last)
            else:
                session.syncing = False
                session._sync_done.set()
        elif need_sync:
            self._request_blocks(session)

    def _on_data(self, session: PeerSession, payload: bytes) -> None:
        item_id, found, kind, body = wire.decode_data(payload)
        with session._pending_lock:
            q = session._pending.get(item_id)
        if q is not None:
            q.put((found, kind, body))

    # -- gossip -------------------------------------------------------------------

    def _announce(self, kind: InvKind, item: bytes, exclude: PeerSession | None = None) -> None:
        self.seen.add(item)
        payload = wire.encode_inv(kind, [item])
        for s in self.sessions():
            if s is exclude:
                continue
            try:
                s.send(MsgType.INV, payload)
            except OSError:
                s.close("send failed")

    def broadcast_tx(self, tx: RecordTransaction) -> None:
        self._announce(InvKind.TX, tx_id(tx))

    def broadcast_block(self, block: Block) -> None:
        self._announce(InvKind.BLOCK, block.hash)

    # -- sync -------------------------------------------------------------------

    def _request_blocks(self, session: PeerSession, after: bytes | None = None) -> None:
        locator = self.chain.locator()
        if after is not None:
            locator = [after] + locator
        if not session.syncing:
            session.syncing = True
            session.sync_adopted = 0
            session._sync_done.clear()
        try:
            session.send(MsgType.GET_BLOCKS, wire.encode_get_blocks(locator[:1000]))
        except OSError:
            session.close("send failed")

    def sync(self, session: PeerSession, timeout: float = 30.0) -> int:
        """Pull blocks from ``session`` until caught up; return how many were adopted."""
        if session.state != ACTIVE:
            return 0
        session._sync_done.wait(timeout)  # let an in-flight sync finish first
        self._request_blocks(session)
        session._sync_done.wait(timeout)
        return session.sync_adopted

    # -- content fetch -----------------------------------------------------------

    def _request_object(self, session: PeerSession, cid: ContentId, timeout: float):
        q: queue.Queue = queue.Queue()
        key = cid.multihash
        with session._pending_lock:
            session._pending[key] = q
        try:
            session.send(MsgType.GET_DATA, wire.encode_get_data(InvKind.OBJECT, [key]))
            return q.get(timeout=timeout)
        except (queue.Empty, OSError):
            return None
        finally:
            with session._pending_lock:
                session._pending.pop(key, None)

    def _fetch_object(self, cid: ContentId, peers: list[PeerSession], timeout: float) -> int:
        """Fetch one object into the store from the first peer that serves valid bytes."""
        for session in peers:
            if session.state != ACTIVE:
                continue
            reply = self._request_object(session, cid, timeout)
            if reply is None:
                continue
            found, kind, body = reply
            if not found:
                continue
            try:
                self.store.put_object(cid, kind, body)
            except ValidationError as exc:
                self.ban(session, f"bad object {cid}: {exc}")
                continue
            return kind
        raise UnavailableError(f"no peer could supply {cid}")

    def fetch_content(self, cid: ContentId, timeout: float = FETCH_TIMEOUT) -> bytes:
        if self.store.has(cid):
            try:
                if not self.store.missing_children(cid):
                    return self.store.get(cid)
            except CorruptionError:
                pass
        peers = self.sessions()
        if not peers:
            raise UnavailableError(f"{cid} not stored locally and no peers connected")
        if not self.store.has(cid):
            self._fetch_object(cid, peers, timeout)
        for child in self.store.missing_children(cid):
            kind = self._fetch_object(child, peers, timeout)
            if kind != KIND_LEAF:
                raise UnavailableError(f"manifest child {child} is not a leaf")
        return self.store.get(cid)
