"""Composition root: wires store, keyring, chain, peer network, miner and control socket."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .content_store import ContentId, ContentStore
from .errors import (
    ConfigError,
    DdashError,
    PersistenceError,
    ValidationError,
)
from .identity import EncryptionKey, Keyring, decrypt, encrypt_for, is_container
from .ledger import Block, Chain, ChainEvent, ChainLog, GenesisConfig, make_record, mine_block, tx_id
from .ledger.block import MiningStats
from .ledger.chain import EXTENDED, REORG
from .network import DEFAULT_PORT, PeerNetwork

log = logging.getLogger(__name__)

DEFAULT_CONTROL_PORT = 8545
SANITY_OK = "store and ledger appear to be running."


def parse_address(text: str, default_port: int = DEFAULT_PORT) -> tuple[str, int]:
    host, sep, port = text.strip().rpartition(":")
    if not sep:
        return text.strip(), default_port
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ValidationError(f"bad peer address {text!r}") from None


@dataclass
class NodeConfig:
    data_dir: Path
    genesis_path: Path | None = None
    listen_port: int = DEFAULT_PORT
    control_port: int = DEFAULT_CONTROL_PORT
    static_peers: list[str] = field(default_factory=list)
    mining_enabled: bool = False
    host: str = "127.0.0.1"
    mining_interval: float = 0.0

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)
        if self.genesis_path is None:
            self.genesis_path = self.data_dir / "genesis.json"
        self.genesis_path = Path(self.genesis_path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> NodeConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config not found: {path}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"unreadable config {path}: {exc}") from None
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "data_dir" not in raw:
            raise ConfigError("config needs data_dir")
        return cls(**raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data_dir"] = str(self.data_dir)
        d["genesis_path"] = str(self.genesis_path)
        return d

    def dump(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass
class SessionSelections:
    """Mutable state of one interactive session (working dir, chosen keys, pending upload)."""

    working_dir: Path = field(default_factory=Path.cwd)
    key_index: int = 0
    account_index: int = 0
    recipients: list[EncryptionKey] = field(default_factory=list)
    file_path: Path | None = None
    encrypted: bytes | None = None


@dataclass(frozen=True)
class PublishResult:
    content_id: ContentId
    tx_id: bytes
    block_height: int | None = None


@dataclass
class CheckoutResult:
    records: list
    plaintext: bytes | None = None
    error: DdashError | None = None


def init_data_dir(data_dir: str | os.PathLike, genesis_path: str | os.PathLike) -> NodeConfig:
    """Create the on-disk layout (objects/, keys/, chain.log) and a default config."""
    data_dir = Path(data_dir)
    genesis = GenesisConfig.load(genesis_path)
    data_dir.mkdir(parents=True, exist_ok=True)
    local_genesis = data_dir / "genesis.json"
    if Path(genesis_path).resolve() != local_genesis.resolve():
        genesis.dump(local_genesis)
    ContentStore(data_dir)
    keyring = Keyring(data_dir / "keys")
    if not keyring.accounts():
        keyring.new_account()
    ChainLog(data_dir / "chain.log", genesis.hash)
    config = NodeConfig(data_dir=data_dir, genesis_path=local_genesis)
    config_path = data_dir / "config.json"
    if not config_path.exists():
        config.dump(config_path)
    return config


class Node:
    def __init__(self, config: NodeConfig):
        self.config = config
        self.store: ContentStore | None = None
        self.keyring: Keyring | None = None
        self.chain: Chain | None = None
        self.network: PeerNetwork | None = None
        self.control = None
        self.events: list[ChainEvent] = []
        self.mining_stats = MiningStats()
        self._mining = threading.Event()
        self._head_moved = threading.Event()
        self._stopped = threading.Event()
        self._miner_thread: threading.Thread | None = None
        self._write_lock = threading.Lock()

    # -- lifecycle ----------------------------------------------------------------

    @classmethod
    def start(cls, config: NodeConfig, *, control: bool = True) -> Node:
        node = cls(config)
        node._open()
        try:
            node.network.start()
            if control:
                from .control import ControlServer

                node.control = ControlServer(node, port=config.control_port)
                node.control.start()
        except OSError as exc:
            node.stop()
            raise PersistenceError(f"cannot bind port: {exc}") from exc
        for peer in config.static_peers:
            threading.Thread(target=node._dial_static, args=(peer,), daemon=True).start()
        if config.mining_enabled:
            node.set_mining(True)
        return node

    def _open(self) -> None:
        cfg = self.config
        genesis = GenesisConfig.load(cfg.genesis_path)
        try:
            cfg.data_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise PersistenceError(f"data dir {cfg.data_dir} not writable: {exc}") from exc
        if not os.access(cfg.data_dir, os.W_OK):
            raise PersistenceError(f"data dir {cfg.data_dir} not writable")
        self.store = ContentStore(cfg.data_dir)
        self.keyring = Keyring(cfg.data_dir / "keys")
        if not self.keyring.accounts():
            self.keyring.new_account()
        chain_log = ChainLog(cfg.data_dir / "chain.log", genesis.hash)
        self.chain = Chain(genesis, chain_log)
        if chain_log.truncated_bytes:
            log.warning("chain log tail was torn; recovered")
        replayed = self.chain.replay_log()
        log.info("replayed %d blocks, head height %d", replayed, self.chain.height)
        self.chain.listeners.append(self._on_chain_event)
        self.network = PeerNetwork(self.chain, self.store, host=cfg.host, port=cfg.listen_port)

    def stop(self) -> None:
        self._stopped.set()
        self.set_mining(False)
        if self.control is not None:
            self.control.stop()
        if self.network is not None:
            self.network.stop()

    def _dial_static(self, peer: str) -> None:
        host, port = parse_address(peer)
        while not self._stopped.is_set():
            connected = any(s.key == (host, port) or s.address == (host, port) for s in self.network.sessions())
            if not connected:
                self.network.connect(host, port)
            self._stopped.wait(2.0)

    def _on_chain_event(self, event: ChainEvent) -> None:
        self.events.append(event)
        if event.kind in (EXTENDED, REORG):
            self._head_moved.set()

    # -- peers ----------------------------------------------------------------------

    def connect(self, address: str):
        host, port = parse_address(address)
        return self.network.connect(host, port)

    def peers(self) -> list[dict]:
        return [
            {
                "address": f"{s.address[0]}:{s.address[1]}",
                "listen_port": s.remote.listen_port if s.remote else None,
                "head_height": s.remote.head_height if s.remote else None,
                "outbound": s.outbound,
            }
            for s in self.network.sessions()
        ]

    # -- mining -----------------------------------------------------------------------

    @property
    def mining(self) -> bool:
        return self._mining.is_set()

    def set_mining(self, on: bool) -> None:
        if on:
            if self._mining.is_set():
                return
            self._mining.set()
            self._miner_thread = threading.Thread(target=self._mine_loop, name="miner", daemon=True)
            self._miner_thread.start()
        else:
            self._mining.clear()
            self._head_moved.set()
            t = self._miner_thread
            if t is not None and t is not threading.current_thread():
                t.join(timeout=10)
            self._miner_thread = None

    def miner_fingerprint(self):
        return self.keyring.account(0).fingerprint

    def mine_once(self, cancel: threading.Event | None = None) -> Block | None:
        """Mine one block on the current head and submit it."""
        self._head_moved.clear()
        parent = self.chain.head_header
        txs = self.chain.mining_candidates()
        block = mine_block(
            parent, txs, self.miner_fingerprint(),
            difficulty=self.chain.difficulty,
            cancel=cancel if cancel is not None else self._head_moved,
            stats=self.mining_stats,
        )
        if block is None:
            return None
        event = self.chain.accept_block(block)
        if event.kind in (EXTENDED, REORG):
            self.network.broadcast_block(block)
            return block
        return None

    def _mine_loop(self) -> None:
        while self._mining.is_set() and not self._stopped.is_set():
            try:
                self.mine_once()
            except Exception:
                log.exception("mining iteration failed")
                time.sleep(0.5)
            if self.config.mining_interval:
                self._stopped.wait(self.config.mining_interval)

    # -- keys --------------------------------------------------------------------------

    def new_key(self) -> EncryptionKey:
        with self._write_lock:
            return self.keyring.new_key()

    def resolve_recipient(self, ref: str) -> EncryptionKey:
        return self.keyring.resolve(ref)

    # -- publish / checkout ------------------------------------------------------------

    def publish_bytes(
        self,
        data: bytes,
        recipients: Sequence[EncryptionKey] | None,
        description: str = "",
        account_index: int = 0,
        key_index: int = 0,
        *,
        encrypted: bytes | None = None,
        wait: float = 0.0,
    ) -> PublishResult:
        """Store ``data`` (encrypted unless ``recipients`` is None) and submit its record.

        ``encrypted`` lets a caller pass a container it already produced.
        """
        account = self.keyring.account(account_index)
        if recipients is None:
            payload, access = data, None
        else:
            owner_key = self.keyring.key(key_index).public()
            everyone = [owner_key, *recipients]
            container = encrypted
            if container is None:
                container = encrypt_for(data, everyone).serialize()
            payload = container
            access = sorted({k.fingerprint for k in everyone})
        if len(description.encode("utf-8")) > 1024:
            raise ValidationError("description exceeds 1024 bytes")
        cid = self.store.put_blob(payload)
        tx = make_record(cid, account, access, description)
        reason = self.chain.add_tx(tx)
        if reason is not None and reason != "duplicate":
            raise ValidationError(f"record rejected: {getattr(reason, 'value', reason)}")
        self.network.broadcast_tx(tx)
        txid = tx_id(tx)
        height = self.wait_for_tx(txid, wait) if wait else None
        return PublishResult(cid, txid, height)

    def publish(
        self,
        file_path: str | os.PathLike,
        access: str | Sequence[str | EncryptionKey] = "public",
        description: str = "",
        account_index: int = 0,
        key_index: int = 0,
        wait: float = 0.0,
    ) -> PublishResult:
        try:
            data = Path(file_path).read_bytes()
        except OSError as exc:
            raise ValidationError(f"cannot read {file_path}: {exc}") from None
        if access == "public":
            recipients = None
        else:
            recipients = [r if isinstance(r, EncryptionKey) else self.resolve_recipient(r) for r in access]
            if not recipients:
                raise ValidationError("private publish needs at least one recipient")
        return self.publish_bytes(data, recipients, description, account_index, key_index, wait=wait)

    def wait_for_tx(self, txid: bytes, timeout: float) -> int | None:
        deadline = time.time() + timeout
        while True:
            loc = self.chain.tx_location(txid)
            if loc is not None:
                return self.chain.height_of(loc[0])
            if time.time() >= deadline:
                return None
            time.sleep(0.02)

    def checkout_full(self, cid: ContentId | str, try_decrypt: bool = False, key_index: int = 0) -> CheckoutResult:
        if isinstance(cid, str):
            cid = ContentId.parse(cid)
        records = self.chain.checkout(cid)
        result = CheckoutResult(records)
        if not records or not try_decrypt:
            return result
        try:
            data = self.network.fetch_content(cid)
            if all(r.is_public for r in records) and not is_container(data):
                result.plaintext = data
            else:
                result.plaintext = decrypt(data, self.keyring.key(key_index))
        except DdashError as exc:
            result.error = exc
        return result

    # -- status --------------------------------------------------------------------------

    def sanity_check(self) -> dict:
        store_ok = self.store is not None and self.store.objects_dir.is_dir() and os.access(
            self.store.objects_dir, os.W_OK
        )
        ledger_ok = self.chain is not None and self.chain.get_block(self.chain.head) is not None
        ok = bool(store_ok and ledger_ok)
        return {
            "ok": ok,
            "message": SANITY_OK if ok else "store or ledger is not running.",
            "store": bool(store_ok),
            "ledger": bool(ledger_ok),
            "height": self.chain.height if self.chain else None,
            "head": self.chain.head.hex() if self.chain else None,
            "peers": len(self.network.sessions()) if self.network else 0,
            "mining": self.mining,
            "network_id": self.chain.genesis.network_id if self.chain else None,
            "listen_port": self.network.port if self.network else None,
        }


def start(config: NodeConfig, **kwargs) -> Node:
    return Node.start(config, **kwargs)
