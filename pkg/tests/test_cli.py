import io
import random
import re
import subprocess
import sys
import time

import pytest
from hypothesis import given, settings, strategies as st

from ddash.cli import BANNER, Repl, main
from ddash.control import ControlClient
from ddash.identity import generate_encryption_key
from ddash.ledger import GenesisConfig
from ddash.node import SANITY_OK, Node, NodeConfig, init_data_dir


@pytest.fixture(scope="module")
def fuzz_client(tmp_path_factory):
    root = tmp_path_factory.mktemp("fuzz")
    GenesisConfig(4828, 1000, int(time.time()), "fuzz").dump(root / "genesis.json")
    init_data_dir(root / "d", root / "genesis.json")
    node = Node.start(NodeConfig(data_dir=root / "d", listen_port=0, control_port=0))
    client = ControlClient(node.control.port).connect()
    yield client
    client.close()
    node.stop()


def run_session(port, lines):
    out = io.StringIO()
    with ControlClient(port) as client:
        repl = Repl(client, out, confirm_timeout=20)
        for line in lines:
            if callable(line):
                line = line(out.getvalue())
            repl.execute(line)
    return repl, out.getvalue()


def twelve_step_lines(workdir, recipient_fp):
    def checkout(text):
        return "checkout " + re.findall(r"uploaded (Qm\w+)", text)[-1]

    return [
        "sanity check",
        f"set directory {workdir}",
        "new key",
        "show keys",
        "use key 0",
        "show accounts",
        "use account 0",
        f"set recipient {recipient_fp}",
        "set file data.csv",
        "encrypt",
        "upload",
        checkout,
    ]


def test_twelve_step_session(node_factory, tmp_path):
    node = node_factory(mining_enabled=True)
    work = tmp_path / "work"
    work.mkdir()
    (work / "data.csv").write_text("patient,outcome\n1,ok\n")
    colleague = generate_encryption_key()
    node.keyring.import_public(colleague.dh_public)
    repl, text = run_session(node.control.port, twelve_step_lines(work, colleague.fingerprint.hex))
    assert repl.errors == 0, text
    assert repl.counter == 12
    assert SANITY_OK in text
    rec = repl.last_checkout["records"]
    assert len(rec) == 1
    assert colleague.fingerprint.hex in rec[0]["access"]
    assert repl.last_checkout["plaintext_size"] == len((work / "data.csv").read_bytes())
    assert (work / "data.csv.dde").exists()


def test_use_key_out_of_range_continues(node_factory):
    node = node_factory()
    node.new_key()
    repl, text = run_session(node.control.port, ["use key 99", "sanity check"])
    assert repl.errors == 1
    assert "error (validation)" in text and "out of range" in text
    assert SANITY_OK in text


def test_unknown_verb_prints_usage(node_factory):
    repl, text = run_session(node_factory().control.port, ["frobnicate now", "help"])
    assert repl.errors == 1
    assert "unknown command" in text and "checkout <ContentId>" in text


def test_prompt_numbering_and_banner(node_factory):
    node = node_factory()
    stdin = io.StringIO("sanity check\n\nshow keys\nquit\n")
    out = io.StringIO()
    with ControlClient(node.control.port) as client:
        assert Repl(client, out).run(stdin) == 0
    text = out.getvalue()
    assert text.startswith(BANNER)
    assert "Welcome to the DDASH Command Line Interface." in text
    assert re.findall(r"\[(\d+)\] ddash> ", text) == ["1", "2", "2", "3"]


@settings(max_examples=60, deadline=None)
@given(st.text(max_size=4096))
def test_repl_survives_fuzz_lines(fuzz_client, line):
    repl = Repl(fuzz_client, io.StringIO())
    assert repl.execute(line.replace("quit", "").replace("exit", "")) is True


def test_repl_survives_random_verbs(node_factory):
    node = node_factory()
    rng = random.Random(3)
    words = ["set", "use", "key", "file", "checkout", "upload", "encrypt", "99", "-1", "Qm", "'", '"', "connect", "mine", "x:y"]
    lines = [" ".join(rng.choice(words) for _ in range(rng.randint(1, 4))) for _ in range(200)]
    repl, _ = run_session(node.control.port, lines + ["sanity check"])
    assert repl.counter == len([l for l in lines if l.strip()]) + 1


def test_daemon_unreachable_is_connection_error():
    out = io.StringIO()
    client = ControlClient(1, timeout=1)
    repl = Repl(client, out)
    repl.execute("sanity check")
    assert "error (connection)" in out.getvalue()
    assert main(["--control-port", "1", "keygen"], out) == 3


def test_init_creates_layout(tmp_path, genesis_file):
    d = tmp_path / "data"
    assert main(["init", "--data-dir", str(d), "--genesis", str(genesis_file)], io.StringIO()) == 0
    for sub in ("objects", "keys", "chain.log", "config.json", "genesis.json"):
        assert (d / sub).exists()


def test_publish_then_checkout_subcommands(node_factory, tmp_path):
    node = node_factory(mining_enabled=True)
    f = tmp_path / "f.csv"
    f.write_bytes(b"x,y\n3,4\n")
    port = ["--control-port", str(node.control.port)]
    out = io.StringIO()
    assert main(port + ["publish", "--public", str(f), "--description", "table", "--wait", "20"], out) == 0
    cid = out.getvalue().split()[0]
    dest = tmp_path / "back.csv"
    out = io.StringIO()
    assert main(port + ["checkout", cid, "--output", str(dest)], out) == 0
    assert dest.read_bytes() == f.read_bytes()
    assert "description 'table'" in out.getvalue()
    assert main(port + ["checkout", "QmdfTbBqBPQ7VNxZEYEj14VmRuZBkqFbiwReogJgS1zR1n"], io.StringIO()) == 4


def test_keygen_subcommand(node_factory):
    node = node_factory()
    out = io.StringIO()
    assert main(["--control-port", str(node.control.port), "keygen"], out) == 0
    assert out.getvalue().startswith("0 ")


def test_bad_flags_exit_two(capsys):
    assert main(["--no-such-flag"]) == 2
    assert main(["publish"]) == 2
    assert "usage" in capsys.readouterr().err


def test_daemon_missing_genesis_exits_nonzero(tmp_path):
    env = {"DDASH_DATA_DIR": str(tmp_path / "empty"), "PATH": "/usr/bin:/bin"}
    proc = subprocess.run(
        [sys.executable, "-m", "ddash", "daemon"], env=env, capture_output=True, text=True, timeout=30
    )
    assert proc.returncode != 0
    assert "genesis not found" in proc.stderr
