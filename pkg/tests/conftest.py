"""Shared builders for in-process node topologies.

Unit and integration tests run nodes inside the test process (real
sockets on 127.0.0.1, ephemeral ports) with the all-zeros performance
profile so nothing spins or sleeps.  Tests that need the calibrated
profile or OS scheduling build subprocess clusters via harness.py.
"""

import time

import pytest

from nickv.client import Conn, Endpoint
from nickv.config import NodeConfig
from nickv.node import build_node
from nickv.perf import PerfProfile, Role


def zero_profile() -> PerfProfile:
    return PerfProfile.zero()


def wait_until(pred, timeout: float = 5.0, interval: float = 0.01) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(interval)
    return pred()


class Farm:
    """Tracks started nodes and client conns, tears them down in reverse."""

    def __init__(self):
        self.nodes = []
        self.conns = []

    def spawn(self, kind: str, **kwargs):
        kwargs.setdefault("profile", PerfProfile.zero())
        node = build_node(NodeConfig(kind=kind, **kwargs))
        node.start()
        self.nodes.append(node)
        return node

    def connect(self, node, role: Role = Role.HOST, my_role: Role = Role.HOST,
                profile: PerfProfile | None = None) -> Conn:
        conn = Conn(Endpoint("127.0.0.1", node.port, role),
                    my_role=my_role, profile=profile or PerfProfile.zero())
        self.conns.append(conn)
        return conn

    def close(self):
        for conn in self.conns:
            conn.close()
        for node in reversed(self.nodes):
            node.stop(drain=False)


@pytest.fixture
def farm():
    f = Farm()
    yield f
    f.close()


def endpoint_of(node, role: Role = Role.HOST) -> Endpoint:
    return Endpoint("127.0.0.1", node.port, role)
