"""Client-side routing across a two-shard deployment.

The router owns one connection per shard and picks the shard by slot,
so routing adds zero network round trips.  Single-key commands only:
a range scan would have to merge answers from both shards, which this
deployment deliberately does not offer.
"""

from . import wire
from .client import Conn, Endpoint, TargetUnavailable
from .perf import PerfProfile, Role
from .slots import SlotMap, slot_of


class UnsupportedOperation(Exception):
    """Command cannot be routed (SCAN spans shards)."""


class EndpointUnavailable(Exception):
    """The shard that owns the key is unreachable."""


class ShardRouter:
    def __init__(self, host: Endpoint, nic: Endpoint, slot_map: SlotMap,
                 my_role: Role = Role.HOST, profile: PerfProfile | None = None,
                 timeout: float = 30.0):
        if (host.address, host.port) == (nic.address, nic.port):
            raise ValueError("shard endpoints must be distinct")
        self.slot_map = slot_map
        self._conns = {
            Role.HOST: Conn(host, my_role=my_role, profile=profile, timeout=timeout),
            Role.NIC: Conn(nic, my_role=my_role, profile=profile, timeout=timeout),
        }

    def connect(self) -> None:
        for conn in self._conns.values():
            conn.connect()

    def conn_for(self, key: bytes) -> Conn:
        return self._conns[self.slot_map.owner(slot_of(key))]

    def request(self, cmd: wire.Command) -> wire.Reply:
        if cmd.opcode == wire.OP_SCAN:
            raise UnsupportedOperation("SCAN is not routable across shards")
        owner = self.slot_map.owner(slot_of(cmd.key))
        try:
            return self._conns[owner].request(cmd)
        except TargetUnavailable as exc:
            raise EndpointUnavailable("%s shard: %s" % (owner.value, exc)) from None

    def set(self, key: bytes, value: bytes) -> wire.Reply:
        return self.request(wire.set_cmd(key, value))

    def get(self, key: bytes) -> wire.Reply:
        return self.request(wire.get_cmd(key))

    def delete(self, key: bytes) -> wire.Reply:
        return self.request(wire.del_cmd(key))

    def close(self):
        for conn in self._conns.values():
            conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
