"""Command line: the interactive ``ddash>`` session plus one-shot subcommands.

The REPL and the one-shot commands are thin clients of a running daemon's
control socket; ``daemon`` and ``init`` act locally.
"""

from __future__ import annotations

import argparse
import logging
import os
import shlex
import signal
import sys
import threading
from pathlib import Path
from typing import Callable, TextIO

from .control import ControlClient, ControlError
from .errors import ConfigError, DdashError
from .node import DEFAULT_CONTROL_PORT, Node, NodeConfig, init_data_dir

BANNER = r"""
  ____   ____      _     ____  _   _
 |  _ \ |  _ \    / \   / ___|| | | |
 | | | || | | |  / _ \  \___ \| |_| |
 | |_| || |_| | / ___ \  ___) |  _  |
 |____/ |____/ /_/   \_\|____/|_| |_|

 ::: distributed data sharing node :::

Welcome to the DDASH Command Line Interface.
"""

HELP = """commands:
  sanity check                  check that store and ledger are up
  set directory <path>          working directory for files
  new key                       generate an encryption keypair
  show keys                     list encryption keys
  use key <i>                   select encryption key i
  show accounts                 list signing accounts
  use account <i>               select account i for records
  set recipient <fingerprint>   add a recipient (repeatable)
  set file <path>               choose the file to share
  encrypt                       encrypt the file for the recipients
  upload [description]          store the file and record it on the ledger
  checkout <ContentId>          list records for an id and decrypt if possible
  connect <host:port>           dial a peer
  mine on|off                   start or stop mining
  peers                         list connected peers
  import key <hex>              add someone's public encryption key
  export key                    print the selected public encryption key
  help                          this text
  quit                          leave the session"""

EXIT_USAGE = 2
EXIT_CONNECTION = 3

log = logging.getLogger("ddash")


def _default_data_dir() -> Path | None:
    env = os.environ.get("DDASH_DATA_DIR")
    return Path(env) if env else None


def _render_records(records: list[dict], out: TextIO) -> None:
    if not records:
        print("    no records for this id", file=out)
    for r in records:
        access = r["access"] if r["access"] == "public" else ", ".join(f[-16:] for f in r["access"])
        print(
            f"    record {r['tx_id'][:16]} owner {r['owner'][-16:]} access {access} "
            f"time {r['timestamp']} description {r['description']!r}",
            file=out,
        )


class Repl:
    """Line-oriented session.  ``execute`` never raises on bad input."""

    def __init__(self, client: ControlClient, out: TextIO = sys.stdout, confirm_timeout: float = 30.0):
        self.client = client
        self.out = out
        self.counter = 0
        self.errors = 0
        self.confirm_timeout = confirm_timeout
        self.last_checkout: dict | None = None

    @property
    def prompt(self) -> str:
        return f"[{self.counter + 1}] ddash> "

    def _say(self, text: str) -> None:
        print(f"    {text}", file=self.out)

    def _fail(self, kind: str, message: str) -> bool:
        self.errors += 1
        self._say(f"error ({kind}): {message}")
        return True

    def execute(self, line: str) -> bool:
        """Run one command line; return False when the session should end."""
        line = line.strip()
        if not line:
            return True
        self.counter += 1
        try:
            words = shlex.split(line)
        except ValueError:
            words = line.split()
        if not words:
            return True
        try:
            return self._run(words)
        except ControlError as exc:
            self._fail("connection", str(exc))
        except DdashError as exc:
            self._fail(exc.code, str(exc))
        except (ValueError, IndexError) as exc:
            self._fail("usage", str(exc) or "bad arguments")
        return True

    def _run(self, w: list[str]) -> bool:
        verb = [x.lower() for x in w[:2]]
        c = self.client.call
        if verb[0] in ("quit", "exit"):
            return False
        if verb[0] == "help":
            print(HELP, file=self.out)
        elif verb == ["sanity", "check"]:
            r = c("sanity_check")
            self._say(r["message"])
            self._say(f"height {r['height']}, peers {r['peers']}, mining {'on' if r['mining'] else 'off'}")
        elif verb == ["set", "directory"] and len(w) == 3:
            self._say("working directory " + c("set_directory", path=w[2])["working_dir"])
        elif verb == ["new", "key"]:
            r = c("new_key")
            self._say(f"created key {r['index']}: {r['fingerprint']}")
        elif verb == ["show", "keys"]:
            keys = c("show_keys")
            if not keys:
                self._say("no keys; use `new key`")
            for k in keys:
                self._say(f"[{k['index']}] {k['fingerprint']}")
        elif verb == ["use", "key"] and len(w) == 3:
            self._say(f"using key {c('use_key', index=int(w[2]))['key_index']}")
        elif verb == ["show", "accounts"]:
            for a in c("show_accounts"):
                self._say(f"[{a['index']}] {a['fingerprint']}")
        elif verb == ["use", "account"] and len(w) == 3:
            self._say(f"using account {c('use_account', index=int(w[2]))['account_index']}")
        elif verb == ["set", "recipient"] and len(w) == 3:
            r = c("set_recipient", fingerprint=w[2])
            self._say(f"{len(r['recipients'])} recipient(s) selected")
        elif verb == ["set", "file"] and len(w) >= 3:
            r = c("set_file", path=" ".join(w[2:]))
            self._say(f"file {r['file']} ({r['size']} bytes)")
        elif verb == ["encrypt"]:
            r = c("encrypt")
            self._say(f"encrypted for {r['recipients']} key(s) -> {r['output']}")
        elif verb == ["upload"]:
            mining = c("sanity_check")["mining"]
            r = c("upload", description=" ".join(w[1:]), wait=self.confirm_timeout if mining else 0.0)
            self._say(f"uploaded {r['content_id']}")
            where = f"confirmed at height {r['block_height']}" if r["block_height"] is not None else "pending"
            self._say(f"record {r['tx_id'][:16]} {where}")
        elif verb[0] == "checkout" and len(w) >= 2:
            output = w[2] if len(w) > 2 else None
            r = c("checkout", id=w[1], try_decrypt=True, output=output)
            self.last_checkout = r
            _render_records(r["records"], self.out)
            if r["error"]:
                self._fail(r["error"]["error"], r["error"]["message"])
            elif r["plaintext_size"] is not None:
                dest = f" -> {r['output']}" if r["output"] else ""
                self._say(f"content available: {r['plaintext_size']} bytes{dest}")
        elif verb[0] == "connect" and len(w) == 2:
            c("connect", address=w[1])
            self._say(f"connected to {w[1]}")
        elif verb[0] == "mine" and len(w) == 2 and verb[1] in ("on", "off"):
            r = c("mine", on=verb[1] == "on")
            self._say(f"mining {'on' if r['mining'] else 'off'}")
        elif verb[0] == "peers":
            peers = c("peers")
            if not peers:
                self._say("no peers")
            for p in peers:
                self._say(f"{p['address']} listen {p['listen_port']} height {p['head_height']}")
        elif verb == ["import", "key"] and len(w) == 3:
            self._say("imported " + c("import_key", public=w[2])["fingerprint"])
        elif verb == ["export", "key"]:
            r = c("export_key")
            self._say(f"[{r['index']}] public {r['public']} fingerprint {r['fingerprint']}")
        else:
            self._fail("usage", f"unknown command {' '.join(w)!r}; type `help`")
        return True

    def run(self, stdin: TextIO = sys.stdin, echo: bool = False) -> int:
        print(BANNER, file=self.out)
        while True:
            print(self.prompt, end="", file=self.out, flush=True)
            line = stdin.readline()
            if not line:
                print(file=self.out)
                return 0
            if echo:
                print(line.rstrip("\n"), file=self.out)
            if not self.execute(line):
                return 0


def repl(control_port: int, stdin: TextIO = sys.stdin, out: TextIO = sys.stdout, echo: bool = False) -> int:
    client = ControlClient(control_port)
    try:
        return Repl(client, out).run(stdin, echo=echo)
    finally:
        client.close()


# -- subcommands -------------------------------------------------------------------


def _load_config(args) -> NodeConfig:
    if args.config:
        return NodeConfig.load(args.config)
    data_dir = _default_data_dir()
    if data_dir is None:
        raise ConfigError("no --config given and DDASH_DATA_DIR is not set")
    path = data_dir / "config.json"
    return NodeConfig.load(path) if path.exists() else NodeConfig(data_dir=data_dir)


def _control_port(args) -> int:
    if args.control_port is not None:
        return args.control_port
    try:
        return _load_config(args).control_port
    except ConfigError:
        return DEFAULT_CONTROL_PORT


def cmd_daemon(args, out: TextIO) -> int:
    config = _load_config(args)
    if not config.genesis_path.exists():
        raise ConfigError(f"genesis not found: {config.genesis_path}")
    node = Node.start(config)
    print(
        f"ddash daemon listening on {config.host}:{node.network.port}, "
        f"control 127.0.0.1:{node.control.port}, height {node.chain.height}",
        file=out,
        flush=True,
    )
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait()
    node.stop()
    return 0


def cmd_init(args, out: TextIO) -> int:
    data_dir = Path(args.data_dir) if args.data_dir else _default_data_dir()
    if data_dir is None:
        raise ConfigError("--data-dir is required (or set DDASH_DATA_DIR)")
    config = init_data_dir(data_dir, args.genesis)
    print(f"initialized {config.data_dir} (objects/, keys/, chain.log, config.json)", file=out)
    return 0


def cmd_publish(args, out: TextIO) -> int:
    with ControlClient(_control_port(args)) as client:
        r = client.call(
            "publish",
            path=str(Path(args.file).resolve()),
            public=args.public,
            recipients=args.recipient or [],
            description=args.description,
            wait=args.wait,
        )
    print(f"{r['content_id']} {r['tx_id']}", file=out)
    return 0


def cmd_checkout(args, out: TextIO) -> int:
    output = str(Path(args.output).resolve()) if args.output else None
    with ControlClient(_control_port(args)) as client:
        if args.key is not None:
            client.call("use_key", index=args.key)
        r = client.call("checkout", id=args.id, try_decrypt=output is not None, output=output)
    _render_records(r["records"], out)
    if r["error"]:
        print(f"error ({r['error']['error']}): {r['error']['message']}", file=sys.stderr)
        return 9 if r["error"]["error"] == "not-a-recipient" else 1
    if not r["records"]:
        return 4
    return 0


def cmd_keygen(args, out: TextIO) -> int:
    with ControlClient(_control_port(args)) as client:
        r = client.call("new_account" if args.account else "new_key")
    print(f"{r['index']} {r['fingerprint']}", file=out)
    return 0


def cmd_repl(args, out: TextIO) -> int:
    return repl(_control_port(args), out=out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddash", description="Distributed data sharing node")
    p.add_argument("--control-port", type=int, default=None, help="daemon control port (default 8545)")
    p.add_argument("--config", default=None, help="node config JSON")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    sub.add_parser("daemon", help="run the node").set_defaults(fn=cmd_daemon)

    s = sub.add_parser("init", help="create a data directory from a genesis file")
    s.add_argument("--data-dir", default=None)
    s.add_argument("--genesis", required=True)
    s.set_defaults(fn=cmd_init)

    s = sub.add_parser("publish", help="store a file and record it")
    s.add_argument("file")
    s.add_argument("--public", action="store_true")
    s.add_argument("--recipient", action="append", help="recipient key fingerprint (repeatable)")
    s.add_argument("--description", default="")
    s.add_argument("--wait", type=float, default=0.0, help="seconds to wait for confirmation")
    s.set_defaults(fn=cmd_publish)

    s = sub.add_parser("checkout", help="show records for a content id")
    s.add_argument("id")
    s.add_argument("--output", "-o", default=None, help="write (decrypted) content here")
    s.add_argument("--key", type=int, default=None, help="encryption key index for decryption")
    s.set_defaults(fn=cmd_checkout)

    s = sub.add_parser("keygen", help="generate an encryption key")
    s.add_argument("--account", action="store_true", help="generate a signing account instead")
    s.set_defaults(fn=cmd_keygen)

    sub.add_parser("repl", help="interactive session (default)").set_defaults(fn=cmd_repl)
    return p


def main(argv: list[str] | None = None, out: TextIO = sys.stdout) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    fn: Callable = getattr(args, "fn", cmd_repl)
    try:
        return fn(args, out)
    except ControlError as exc:
        print(f"error (connection): {exc}", file=sys.stderr)
        return EXIT_CONNECTION
    except DdashError as exc:
        print(f"error ({exc.code}): {exc}", file=sys.stderr)
        return exc.exit_status


if __name__ == "__main__":
    sys.exit(main())
