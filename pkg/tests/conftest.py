import time

import pytest

from ddash.ledger import GenesisConfig
from ddash.node import Node, NodeConfig, init_data_dir


@pytest.fixture
def genesis_file(tmp_path):
    """Test network genesis at difficulty 1e3 so blocks take milliseconds."""
    path = tmp_path / "genesis.json"
    GenesisConfig(4828, 1000, int(time.time()) - 3600, "test network").dump(path)
    return path


@pytest.fixture
def node_factory(tmp_path, genesis_file):
    nodes = []

    def make(name="n", genesis=None, control=True, **overrides):
        data_dir = tmp_path / f"node-{name}-{len(nodes)}"
        init_data_dir(data_dir, genesis or genesis_file)
        cfg = NodeConfig(data_dir=data_dir, listen_port=0, control_port=0, **overrides)
        node = Node.start(cfg, control=control)
        nodes.append(node)
        return node

    yield make
    for n in nodes:
        n.stop()
