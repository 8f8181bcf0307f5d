"""Loopback control socket: newline-delimited JSON requests mirroring the CLI verbs.

Request:  ``{"cmd": "use_key", "args": {"index": 0}}``
Response: ``{"ok": true, "result": ...}`` or ``{"ok": false, "error": "<code>", "message": "..."}``

Each connection carries its own SessionSelections, so one REPL equals one session.
"""

from __future__ import annotations

import json
import logging
import os
import socket
import socketserver
import threading
from pathlib import Path
from typing import Any

from .content_store import ContentId
from .errors import ERROR_CLASSES, DdashError, NotFoundError, ValidationError
from .identity import encrypt_for
from .node import Node, SessionSelections

log = logging.getLogger(__name__)

LOOPBACK = "127.0.0.1"
MAX_LINE = 1 << 20


class ControlError(DdashError):
    code = "control"
    exit_status = 3


def _key_info(i: int, k) -> dict:
    return {"index": i, "fingerprint": k.fingerprint.hex, "short_id": k.fingerprint.short_id, "public": k.dh_public.hex()}


def _account_info(i: int, a) -> dict:
    return {"index": i, "fingerprint": a.fingerprint.hex, "short_id": a.fingerprint.short_id}


class Commands:
    """Implements every control verb against one node and one session."""

    def __init__(self, node: Node, session: SessionSelections | None = None):
        self.node = node
        self.session = session or SessionSelections()

    def dispatch(self, cmd: str, args: dict) -> Any:
        fn = getattr(self, "cmd_" + cmd.replace("-", "_"), None)
        if fn is None or not isinstance(cmd, str):
            raise ValidationError(f"unknown command {cmd!r}")
        return fn(**args)

    def _path(self, p: str) -> Path:
        path = Path(os.path.expanduser(p))
        return path if path.is_absolute() else self.session.working_dir / path

    # -- the interactive verbs --------------------------------------------------

    def cmd_sanity_check(self):
        return self.node.sanity_check()

    def cmd_set_directory(self, path: str):
        d = self._path(path)
        if not d.is_dir():
            raise NotFoundError(f"directory {d} does not exist")
        if not os.access(d, os.R_OK | os.W_OK):
            raise ValidationError(f"directory {d} needs read/write permission")
        self.session.working_dir = d.resolve()
        return {"working_dir": str(self.session.working_dir)}

    def cmd_new_key(self):
        key = self.node.new_key()
        index = len(self.node.keyring.keys()) - 1
        return _key_info(index, key)

    def cmd_show_keys(self):
        return [_key_info(i, k) for i, k in enumerate(self.node.keyring.keys())]

    def cmd_use_key(self, index: int):
        self.node.keyring.key(int(index))
        self.session.key_index = int(index)
        return {"key_index": self.session.key_index}

    def cmd_new_account(self):
        acct = self.node.keyring.new_account()
        return _account_info(len(self.node.keyring.accounts()) - 1, acct)

    def cmd_show_accounts(self):
        return [_account_info(i, a) for i, a in enumerate(self.node.keyring.accounts())]

    def cmd_use_account(self, index: int):
        self.node.keyring.account(int(index))
        self.session.account_index = int(index)
        return {"account_index": self.session.account_index}

    def cmd_set_recipient(self, fingerprint: str):
        key = self.node.resolve_recipient(fingerprint)
        if all(r.fingerprint != key.fingerprint for r in self.session.recipients):
            self.session.recipients.append(key)
        self.session.encrypted = None
        return {"recipients": [r.fingerprint.hex for r in self.session.recipients]}

    def cmd_clear_recipients(self):
        self.session.recipients = []
        self.session.encrypted = None
        return {"recipients": []}

    def cmd_set_file(self, path: str):
        p = self._path(path)
        if not p.is_file():
            raise NotFoundError(f"file {p} not found")
        if not os.access(p, os.R_OK):
            raise ValidationError(f"file {p} is not readable")
        self.session.file_path = p.resolve()
        self.session.encrypted = None
        return {"file": str(self.session.file_path), "size": p.stat().st_size}

    def cmd_encrypt(self):
        s = self.session
        if s.file_path is None:
            raise ValidationError("no file selected; use `set file <path>` first")
        if not s.recipients:
            raise ValidationError("no recipient selected; use `set recipient <fingerprint>` first")
        owner = self.node.keyring.key(s.key_index).public()
        container = encrypt_for(s.file_path.read_bytes(), [owner, *s.recipients]).serialize()
        s.encrypted = container
        out = s.working_dir / (s.file_path.name + ".dde")
        try:
            out.write_bytes(container)
        except OSError as exc:
            raise ValidationError(f"cannot write {out}: {exc}") from None
        return {"output": str(out), "size": len(container), "recipients": len(s.recipients) + 1}

    def cmd_upload(self, description: str = "", wait: float = 0.0):
        s = self.session
        if s.file_path is None:
            raise ValidationError("no file selected; use `set file <path>` first")
        if s.recipients and s.encrypted is None:
            raise ValidationError("recipients are set but the file is not encrypted; run `encrypt` first")
        data = s.file_path.read_bytes()
        result = self.node.publish_bytes(
            data,
            s.recipients if s.recipients else None,
            description or s.file_path.name,
            s.account_index,
            s.key_index,
            encrypted=s.encrypted,
            wait=float(wait),
        )
        return {
            "content_id": str(result.content_id),
            "tx_id": result.tx_id.hex(),
            "access": [r.fingerprint.hex for r in s.recipients] or "public",
            "block_height": result.block_height,
        }

    def cmd_checkout(self, id: str, try_decrypt: bool = True, output: str | None = None):
        cid = ContentId.parse(id)
        res = self.node.checkout_full(cid, try_decrypt=try_decrypt, key_index=self.session.key_index)
        out = {"records": [r.to_json() for r in res.records], "plaintext_size": None, "output": None, "error": None}
        if res.plaintext is not None:
            out["plaintext_size"] = len(res.plaintext)
            if output is not None:
                path = self._path(output)
                path.write_bytes(res.plaintext)
                out["output"] = str(path)
        if res.error is not None:
            out["error"] = {"error": res.error.code, "message": str(res.error)}
        return out

    # -- plumbing ------------------------------------------------------------------------

    def cmd_connect(self, address: str):
        result = self.node.connect(address)
        if not result.active:
            raise ControlError(f"connection to {address} rejected: {result.reason}")
        return {"address": address, "state": "active"}

    def cmd_mine(self, on: bool):
        self.node.set_mining(bool(on))
        return {"mining": self.node.mining}

    def cmd_peers(self):
        return self.node.peers()

    def cmd_status(self):
        return self.node.sanity_check()

    def cmd_import_key(self, public: str):
        try:
            raw = bytes.fromhex(public)
        except ValueError:
            raise ValidationError("public key must be hex") from None
        key = self.node.keyring.import_public(raw)
        return {"fingerprint": key.fingerprint.hex, "short_id": key.fingerprint.short_id}

    def cmd_export_key(self, index: int | None = None):
        i = self.session.key_index if index is None else int(index)
        return _key_info(i, self.node.keyring.key(i))

    def cmd_publish(
        self,
        path: str,
        public: bool = False,
        recipients: list[str] | None = None,
        description: str = "",
        account: int | None = None,
        key: int | None = None,
        wait: float = 0.0,
    ):
        access = "public" if public else list(recipients or [])
        if not public and not access:
            raise ValidationError("give --public or at least one recipient")
        result = self.node.publish(
            self._path(path),
            access,
            description,
            self.session.account_index if account is None else int(account),
            self.session.key_index if key is None else int(key),
            wait=float(wait),
        )
        return {"content_id": str(result.content_id), "tx_id": result.tx_id.hex(), "block_height": result.block_height}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        commands = Commands(self.server.node)
        while True:
            line = self.rfile.readline(MAX_LINE)
            if not line:
                return
            reply = handle_line(commands, line)
            self.wfile.write((json.dumps(reply) + "\n").encode())
            self.wfile.flush()


def handle_line(commands: Commands, line: bytes | str) -> dict:
    try:
        req = json.loads(line)
        if not isinstance(req, dict) or not isinstance(req.get("cmd"), str):
            raise ValidationError("request must be an object with a string 'cmd'")
        args = req.get("args") or {}
        if not isinstance(args, dict):
            raise ValidationError("'args' must be an object")
        return {"ok": True, "result": commands.dispatch(req["cmd"], args)}
    except json.JSONDecodeError as exc:
        return {"ok": False, "error": "protocol", "message": f"bad JSON: {exc}"}
    except DdashError as exc:
        return {"ok": False, "error": exc.code, "message": str(exc)}
    except TypeError as exc:
        return {"ok": False, "error": "validation", "message": f"bad arguments: {exc}"}
    except Exception as exc:  # keep the daemon alive on unexpected faults
        log.exception("control command failed")
        return {"ok": False, "error": "internal", "message": f"{type(exc).__name__}: {exc}"}


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class ControlServer:
    """Binds loopback only; remote control is deliberately unsupported."""

    def __init__(self, node: Node, port: int):
        self._server = _Server((LOOPBACK, port), _Handler)
        self._server.node = node
        self.port = self._server.server_address[1]

    def start(self) -> None:
        threading.Thread(target=self._server.serve_forever, name="control", daemon=True).start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class ControlClient:
    def __init__(self, port: int, host: str = LOOPBACK, timeout: float = 120.0):
        self.port = port
        self.host = host
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._file = None

    def connect(self) -> ControlClient:
        try:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise ControlError(f"cannot reach daemon on {self.host}:{self.port}: {exc}") from None
        self._file = self._sock.makefile("rwb")
        return self

    def close(self) -> None:
        if self._sock is not None:
            self._file.close()
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self.connect() if self._sock is None else self

    def __exit__(self, *exc):
        self.close()

    def request(self, cmd: str, **args) -> dict:
        """Send one request and return the raw response dict."""
        if self._sock is None:
            self.connect()
        try:
            self._file.write((json.dumps({"cmd": cmd, "args": args}) + "\n").encode())
            self._file.flush()
            line = self._file.readline(MAX_LINE)
        except OSError as exc:
            self.close()
            raise ControlError(f"daemon connection lost: {exc}") from None
        if not line:
            self.close()
            raise ControlError("daemon closed the connection")
        return json.loads(line)

    def call(self, cmd: str, **args) -> Any:
        """Like ``request`` but raises the matching DdashError on failure."""
        reply = self.request(cmd, **args)
        if reply.get("ok"):
            return reply.get("result")
        cls = ERROR_CLASSES.get(reply.get("error"), ControlError if reply.get("error") == "control" else DdashError)
        err = cls(reply.get("message", "request failed"))
        err.code = reply.get("error", err.code)
        raise err
