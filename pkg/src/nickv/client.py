"""Blocking client connection used by tools, benchmarks and nodes.

A Conn speaks the frame protocol over one TCP connection.  It sends a
Hello on connect so the peer can charge the right hop latency, and it
charges its own side of the model: a send spin per outgoing frame and
a hop sleep per received frame.
"""

import json
import socket
from dataclasses import dataclass

from . import wire
from .perf import PerfProfile, Role, sleep_us, spin_us
from .wire import Frame, FrameDecoder, Reply


class TargetUnavailable(Exception):
    """Peer refused, dropped or timed out the connection."""


class ProtocolError(Exception):
    """Peer sent a frame that makes no sense at this point."""


ROLE_BYTES = {Role.HOST: wire.ROLE_HOST, Role.NIC: wire.ROLE_NIC}
BYTE_ROLES = {v: k for k, v in ROLE_BYTES.items()}


@dataclass(frozen=True)
class Endpoint:
    address: str
    port: int
    role: Role = Role.HOST

    def __post_init__(self):
        if not 0 < self.port <= 65535:
            raise ValueError("port out of range: %d" % self.port)

    def __str__(self):
        return "%s:%d" % (self.address, self.port)


class Conn:
    def __init__(self, endpoint: Endpoint, my_role: Role = Role.HOST,
                 profile: PerfProfile | None = None, timeout: float = 30.0):
        self.endpoint = endpoint
        self.my_role = my_role
        self.profile = profile or PerfProfile.zero()
        self.timeout = timeout
        self._sock = None
        self._decoder = FrameDecoder()
        self._inbox = []
        self._send_spin_us = self.profile.send_cost_us(my_role)
        self._hop_us = self.profile.hop_delay_us(endpoint.role, my_role)

    def _ensure(self):
        if self._sock is not None:
            return
        try:
            sock = socket.create_connection(
                (self.endpoint.address, self.endpoint.port), timeout=self.timeout)
        except OSError as exc:
            raise TargetUnavailable("%s: %s" % (self.endpoint, exc)) from None
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(self.timeout)
        self._sock = sock
        self._decoder = FrameDecoder()
        self._inbox = []
        self.send_frame(wire.KIND_HELLO, wire.pack_hello(ROLE_BYTES[self.my_role]))

    def connect(self) -> None:
        """Open the connection now instead of on first use."""
        self._ensure()

    def send_frame(self, kind: int, payload: bytes) -> None:
        self._ensure()
        buf = wire.encode_frame(kind, payload)
        spin_us(self._send_spin_us)
        try:
            self._sock.sendall(buf)
        except OSError as exc:
            self._drop()
            raise TargetUnavailable("%s: %s" % (self.endpoint, exc)) from None

    def recv_frame(self) -> Frame:
        while not self._inbox:
            try:
                chunk = self._sock.recv(65536)
            except OSError as exc:
                self._drop()
                raise TargetUnavailable("%s: %s" % (self.endpoint, exc)) from None
            if not chunk:
                self._drop()
                raise TargetUnavailable("%s closed the connection" % (self.endpoint,))
            self._inbox.extend(self._decoder.feed(chunk))
        frame = self._inbox.pop(0)
        sleep_us(self._hop_us)  # inbound link latency
        return frame

    def _expect(self, kind: int) -> Frame:
        frame = self.recv_frame()
        if frame.kind != kind:
            self._drop()
            raise ProtocolError("expected frame kind 0x%02X, got 0x%02X"
                                % (kind, frame.kind))
        return frame

    def request(self, cmd: wire.Command) -> Reply:
        self.send_frame(wire.KIND_REQUEST, wire.encode_command(cmd))
        return wire.decode_reply(self._expect(wire.KIND_REPLY).payload)

    def replicate(self, cmd: wire.Command) -> None:
        """Fire-and-forget write propagation; no reply is read."""
        self.send_frame(wire.KIND_REPLICATE, wire.encode_command(cmd))

    def register(self, role: Role, address: str, port: int) -> None:
        self.send_frame(wire.KIND_REGISTER_SLAVE,
                        wire.pack_register(ROLE_BYTES[role], address, port))
        self._expect(wire.KIND_ACK)

    def status(self) -> dict:
        self.send_frame(wire.KIND_STATUS_REQUEST, b"")
        frame = self._expect(wire.KIND_STATUS_REPLY)
        return json.loads(frame.payload.decode())

    def set(self, key: bytes, value: bytes) -> Reply:
        return self.request(wire.set_cmd(key, value))

    def get(self, key: bytes) -> Reply:
        return self.request(wire.get_cmd(key))

    def delete(self, key: bytes) -> Reply:
        return self.request(wire.del_cmd(key))

    def scan(self, key: bytes, count: int):
        rep = self.request(wire.scan_cmd(key, count))
        if rep.status != wire.ST_OK:
            raise ProtocolError("scan failed: %s" % rep.status_name())
        return wire.unpack_entries(rep.value)

    def _drop(self):
        sock, self._sock = self._sock, None
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass

    def close(self):
        self._drop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def dump_entries(conn: Conn, batch: int = 512) -> dict:
    """Full contents of a store via repeated bounded scans."""
    out = {}
    start = b"\x00"
    while True:
        entries = conn.scan(start, batch)
        for key, value in entries:
            out[key] = value
        if len(entries) < batch:
            return out
        start = entries[-1][0] + b"\x00"  # next possible key
