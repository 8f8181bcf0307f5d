import tempfile
import time
from pathlib import Path

from ddash.ledger import GenesisConfig
from ddash.node import Node, NodeConfig, init_data_dir

root = Path(tempfile.mkdtemp())
GenesisConfig(4828, 1000, int(time.time()) - 60, "two node demo").dump(root / "genesis.json")


def start(name):
    init_data_dir(root / name, root / "genesis.json")
    return Node.start(NodeConfig(data_dir=root / name, listen_port=0, control_port=0))


a, b = start("a"), start("b")
print(a.sanity_check()["message"])

# b connects to a; the handshake checks that both use the same genesis
res = b.connect(f"127.0.0.1:{a.network.port}")
print("handshake:", "active" if res.active else res.reason)

# a shares a file privately with b
b_key = b.new_key()
a.new_key()
a.keyring.import_public(b_key.dh_public)
f = root / "notes.txt"
f.write_text("only for b\n")
pub = a.publish(f, [b_key.fingerprint.hex], "notes for b")
a.mine_once()
print("published:", pub.content_id)

while b.chain.height < 1:
    time.sleep(0.05)
out = b.checkout_full(pub.content_id, try_decrypt=True)
print("b sees", len(out.records), "record(s) and reads:", out.plaintext)

a.stop()
b.stop()
