"""TCP node framework and the concrete node roles.

One thread per accepted connection, blocking sockets throughout.  The
hot path is deliberately short: decode, charge the modelled cost,
apply, reply.  Write propagation never happens on the request thread;
masters and proxies enqueue to per-downstream sender threads so a slow
or dead replica cannot stall a client.

Role overview:

  plain       standalone store, no replication
  master      store + fan-out of writes (direct) or a single forward
              to the offload proxy (offload)
  proxy       no store; replays Replicate frames to registered slaves
  slave       store fed by Replicate frames; serves reads
  shard       store that owns one side of the slot map
  cachefront  defined in cache.py: look-through LRU over a plain node
"""

import json
import os
import queue
import socket
import threading
import time

from . import wire
from .client import BYTE_ROLES, ROLE_BYTES, Endpoint
from .config import NodeConfig
from .perf import PerfProfile, Role, reduce_timer_slack, sleep_us, spin_us
from .store import Store
from .wire import Command, Reply

_SEND_BATCH = 64  # frames a sender drains per wakeup


class BindError(Exception):
    """Listen address could not be bound."""


def _apply_sched(sched: str) -> None:
    # idle-class threads only run when nothing else wants the CPU; used
    # to emulate nodes that own dedicated silicon elsewhere
    if sched == "idle" and hasattr(os, "SCHED_IDLE"):
        try:
            os.sched_setscheduler(0, os.SCHED_IDLE, os.sched_param(0))
        except (OSError, PermissionError):
            pass


class Stats:
    """Exact counters shared across connection threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = {}

    def inc(self, name: str, n: int = 1) -> None:
        with self._lock:
            self._counts[name] = self._counts.get(name, 0) + n

    def get(self, name: str) -> int:
        with self._lock:
            return self._counts.get(name, 0)

    def snapshot(self) -> dict:
        with self._lock:
            return dict(self._counts)


class DownstreamSender:
    """Ordered fire-and-forget frame pipe to one downstream node.

    enqueue() never blocks the caller.  The sender thread drains in
    batches so one syscall can carry many frames, but each frame still
    pays its modelled send cost.  Connection failures drop the affected
    frames, bump a counter and back off; they never propagate upstream.
    """

    RECONNECT_COOLDOWN = 0.05

    def __init__(self, endpoint: Endpoint, my_role: Role, profile: PerfProfile,
                 stats: Stats, sched: str = "normal"):
        self.endpoint = endpoint
        self._my_role = my_role
        self._hello = wire.encode_frame(wire.KIND_HELLO,
                                        wire.pack_hello(ROLE_BYTES[my_role]))
        self._send_spin_us = profile.send_cost_us(my_role)
        self._stats = stats
        self._sched = sched
        self._queue = queue.Queue()
        self._sock = None
        self._next_attempt = 0.0
        self._stopping = False
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="sender-%s" % endpoint)
        self._thread.start()

    def enqueue(self, frame_bytes: bytes) -> None:
        self._queue.put(frame_bytes)

    def pending(self) -> int:
        return self._queue.unfinished_tasks

    def _connect(self):
        now = time.monotonic()
        if now < self._next_attempt:
            return None
        try:
            sock = socket.create_connection(
                (self.endpoint.address, self.endpoint.port), timeout=2.0)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.settimeout(10.0)
            sock.sendall(self._hello)
            return sock
        except OSError:
            self._next_attempt = now + self.RECONNECT_COOLDOWN
            return None

    def _run(self):
        _apply_sched(self._sched)
        q = self._queue
        while True:
            item = q.get()
            if item is None:
                q.task_done()
                return
            batch = [item]
            while len(batch) < _SEND_BATCH:
                try:
                    nxt = q.get_nowait()
                except queue.Empty:
                    break
                if nxt is None:
                    q.task_done()
                    self._finish(batch)
                    return
                batch.append(nxt)
            self._finish(batch)

    def _finish(self, batch):
        q = self._queue
        if self._stopping:
            for _ in batch:
                q.task_done()
            self._stats.inc("replicate_dropped", len(batch))
            return
        if self._sock is None:
            self._sock = self._connect()
        if self._sock is None:
            for _ in batch:
                q.task_done()
            self._stats.inc("replicate_dropped", len(batch))
            return
        for frame_bytes in batch:
            spin_us(self._send_spin_us)
        try:
            self._sock.sendall(b"".join(batch))
            self._stats.inc("replicate_sent", len(batch))
        except OSError:
            self._stats.inc("replicate_dropped", len(batch))
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None
        finally:
            for _ in batch:
                q.task_done()

    def stop(self):
        self._stopping = True
        self._queue.put(None)

    def join(self, timeout=5.0):
        self._thread.join(timeout)
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None


class _ConnState:
    __slots__ = ("sock", "peer_role", "extra")

    def __init__(self, sock):
        self.sock = sock
        self.peer_role = Role.HOST  # until a Hello says otherwise
        self.extra = None


class NodeServer:
    kind = "plain"
    has_store = True

    def __init__(self, config: NodeConfig, profile: PerfProfile | None = None):
        self.config = config
        self.profile = profile or config.profile
        self.my_role = config.perf_role
        self.stats = Stats()
        self.store = Store() if self.has_store else None
        self.store_lock = threading.Lock()
        self._listener = None
        self._threads = []
        self._conns = set()
        self._conns_lock = threading.Lock()
        self._stopping = threading.Event()
        self.port = None
        # per-role modelled costs, resolved once
        self._op_spin_us = self.profile.op_cost_us(self.my_role)
        self._send_spin_us = self.profile.send_cost_us(self.my_role)
        self._hops = {role: self.profile.hop_delay_us(role, self.my_role)
                      for role in Role}

    # -- lifecycle -----------------------------------------------------

    def start(self) -> "NodeServer":
        reduce_timer_slack()
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((self.config.listen_address, self.config.listen_port))
        except OSError as exc:
            listener.close()
            raise BindError("cannot bind %s:%d: %s" % (
                self.config.listen_address, self.config.listen_port, exc)) from None
        listener.listen(128)
        self._listener = listener
        self.port = listener.getsockname()[1]
        t = threading.Thread(target=self._accept_loop, daemon=True,
                             name="%s-accept-%d" % (self.kind, self.port))
        t.start()
        self._threads.append(t)
        self._post_start()
        return self

    def _post_start(self) -> None:
        pass

    def endpoint(self) -> Endpoint:
        return Endpoint(self.config.listen_address, self.port, self.my_role)

    def _accept_loop(self):
        _apply_sched(self.config.sched)
        while not self._stopping.is_set():
            try:
                sock, _addr = self._listener.accept()
            except OSError:
                return
            if self._stopping.is_set():
                # raced with stop(): never serve a connection accepted
                # after shutdown began
                try:
                    sock.close()
                except OSError:
                    pass
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            cs = _ConnState(sock)
            with self._conns_lock:
                self._conns.add(cs)
            t = threading.Thread(target=self._serve_conn, args=(cs,), daemon=True)
            t.start()

    def _serve_conn(self, cs: _ConnState):
        _apply_sched(self.config.sched)
        decoder = wire.FrameDecoder()
        sock = cs.sock
        try:
            while True:
                chunk = sock.recv(262144)
                if not chunk:
                    return
                try:
                    frames = decoder.feed(chunk)
                except (wire.MalformedFrame, wire.FrameTooLarge):
                    self.stats.inc("frames_rejected")
                    return
                for frame in frames:
                    self._dispatch(cs, frame)
        except OSError:
            return
        finally:
            self._close_conn(cs)

    def _close_conn(self, cs):
        with self._conns_lock:
            self._conns.discard(cs)
        if cs.extra is not None:
            try:
                cs.extra.close()
            except Exception:
                pass
            cs.extra = None
        try:
            cs.sock.close()
        except OSError:
            pass

    # -- frame handling ------------------------------------------------

    def _dispatch(self, cs: _ConnState, frame):
        kind = frame.kind
        if kind == wire.KIND_HELLO:
            try:
                cs.peer_role = BYTE_ROLES[wire.unpack_hello(frame.payload)]
            except wire.MalformedCommand:
                self.stats.inc("frames_rejected")
            return
        sleep_us(self._hops[cs.peer_role])  # inbound link latency

        if kind == wire.KIND_REQUEST:
            spin_us(self._op_spin_us)
            try:
                cmd = wire.decode_command(frame.payload)
            except wire.MalformedCommand:
                self.stats.inc("requests_malformed")
                self._send(cs, wire.KIND_REPLY,
                           wire.encode_reply(Reply(wire.ST_ERROR, b"malformed command")))
                return
            self.stats.inc("requests_in")
            reply = self.handle_request(cs, cmd)
            self._send(cs, wire.KIND_REPLY, wire.encode_reply(reply))
        elif kind == wire.KIND_REPLICATE:
            self.stats.inc("replicate_received")
            spin_us(self._op_spin_us)
            try:
                cmd = wire.decode_command(frame.payload)
            except wire.MalformedCommand:
                self.stats.inc("replicate_malformed")
                return
            if not wire.is_write(cmd):
                self.stats.inc("replicate_violation")  # reads must not be replicated
                return
            self.handle_replicate(cs, cmd, frame.payload)
        elif kind == wire.KIND_REGISTER_SLAVE:
            try:
                role_byte, address, port = wire.unpack_register(frame.payload)
            except wire.MalformedCommand:
                self.stats.inc("register_malformed")
                return
            self.handle_register(Endpoint(address, port, BYTE_ROLES[role_byte]))
            self._send(cs, wire.KIND_ACK, b"")
        elif kind == wire.KIND_STATUS_REQUEST:
            payload = json.dumps(self.status()).encode()
            self._send(cs, wire.KIND_STATUS_REPLY, payload)
        elif kind == wire.KIND_ACK:
            self.stats.inc("acks_in")
        else:
            self.stats.inc("frames_unexpected")

    def _send(self, cs: _ConnState, kind: int, payload: bytes):
        try:
            buf = wire.encode_frame(kind, payload)
        except wire.FrameTooLarge:
            self.stats.inc("replies_oversize")
            buf = wire.encode_frame(
                wire.KIND_REPLY, wire.encode_reply(Reply(wire.ST_ERROR, b"reply too large")))
        spin_us(self._send_spin_us)
        try:
            cs.sock.sendall(buf)
            self.stats.inc("frames_out")
        except OSError:
            self.stats.inc("send_failures")

    # -- role hooks ------------------------------------------------------

    def handle_request(self, cs, cmd: Command) -> Reply:
        if self.store is None:
            return Reply(wire.ST_ERROR, b"role serves no commands")
        with self.store_lock:
            return self.store.apply(cmd)

    def handle_replicate(self, cs, cmd: Command, payload: bytes) -> None:
        self.stats.inc("replicate_unexpected")  # this role is not a replica

    def handle_register(self, endpoint: Endpoint) -> None:
        self.stats.inc("register_unexpected")

    # -- introspection ---------------------------------------------------

    def status(self) -> dict:
        out = {
            "kind": self.kind,
            "name": self.config.name,
            "perf_role": self.my_role.value,
            "listen": "%s:%s" % (self.config.listen_address, self.port),
            "counters": self.stats.snapshot(),
        }
        if self.store is not None:
            with self.store_lock:
                digest = self.store.digest()
                out["write_count"] = self.store.write_count
            out["entry_count"] = digest.entry_count
            out["digest"] = digest.hex()
        return out

    # -- shutdown ----------------------------------------------------------

    def _senders(self):
        return ()

    def drain(self, timeout: float | None = None) -> bool:
        """Block until queued downstream frames are flushed."""
        deadline = None if timeout is None else time.monotonic() + timeout
        for sender in self._senders():
            while sender.pending():
                if deadline is not None and time.monotonic() > deadline:
                    return False
                time.sleep(0.001)
        return True

    def stop(self, drain: bool = True) -> None:
        self._stopping.set()
        if self._listener is not None:
            # a plain close() does not wake a thread blocked in accept();
            # the kernel keeps the port alive until that accept returns,
            # which would let one more connection get served after stop
            try:
                self._listener.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._listener.close()
            except OSError:
                pass
        if drain:
            self.drain(self.config.drain_timeout)
        for sender in self._senders():
            sender.stop()
        for sender in self._senders():
            sender.join()
        with self._conns_lock:
            conns = list(self._conns)
        for cs in conns:
            try:
                cs.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                cs.sock.close()
            except OSError:
                pass


class PlainNode(NodeServer):
    kind = "plain"


class ShardNode(NodeServer):
    """Serves only the slots the map assigns to its side."""

    kind = "shard"

    def __init__(self, config, profile=None):
        super().__init__(config, profile)
        self.side = config.shard_side
        self.slot_map = config.slot_map

    def handle_request(self, cs, cmd: Command) -> Reply:
        # single-key commands must land on the owning shard; SCAN just
        # lists whatever this shard holds, so the start key is not keyed
        # to a slot
        if cmd.opcode != wire.OP_SCAN and \
                self.slot_map.owner_of_key(cmd.key) is not self.side:
            self.stats.inc("requests_misrouted")
            return Reply(wire.ST_ERROR, b"wrong shard")
        with self.store_lock:
            return self.store.apply(cmd)


class MasterNode(NodeServer):
    """Store plus write propagation.

    direct mode: one sender per registered slave, every write fans out
    here.  offload mode: a single sender to the proxy carries each
    write exactly once; the proxy owns the fan-out.
    """

    kind = "master"

    def __init__(self, config, profile=None):
        super().__init__(config, profile)
        self.mode = config.mode
        self._reg_lock = threading.Lock()
        self._registry = {}   # (address, port) -> DownstreamSender, insertion order
        self._proxy_sender = None

    def _post_start(self):
        if self.mode == "offload":
            self._proxy_sender = DownstreamSender(
                self.config.proxy, self.my_role, self.profile, self.stats,
                sched=self.config.sched)

    def _senders(self):
        if self._proxy_sender is not None:
            return (self._proxy_sender,)
        with self._reg_lock:
            return tuple(self._registry.values())

    def handle_register(self, endpoint: Endpoint) -> None:
        if self.mode != "direct":
            self.stats.inc("register_ignored")  # offload slaves belong to the proxy
            return
        key = (endpoint.address, endpoint.port)
        with self._reg_lock:
            if key in self._registry:
                return
            self._registry[key] = DownstreamSender(
                endpoint, self.my_role, self.profile, self.stats,
                sched=self.config.sched)
        self.stats.inc("slaves_registered")

    def handle_request(self, cs, cmd: Command) -> Reply:
        if not wire.is_write(cmd):
            with self.store_lock:
                return self.store.apply(cmd)
        # lock covers apply + enqueue so every downstream sees writes in
        # exactly the order this store applied them
        frame = wire.encode_frame(wire.KIND_REPLICATE, wire.encode_command(cmd))
        if self._proxy_sender is not None:
            with self.store_lock:
                reply = self.store.apply(cmd)
                self._proxy_sender.enqueue(frame)
            self.stats.inc("replicate_enqueued")
        else:
            with self.store_lock:
                reply = self.store.apply(cmd)
                with self._reg_lock:
                    senders = tuple(self._registry.values())
                for sender in senders:
                    sender.enqueue(frame)
            if senders:
                self.stats.inc("replicate_enqueued", len(senders))
        return reply

    def status(self):
        out = super().status()
        out["mode"] = self.mode
        with self._reg_lock:
            out["slaves"] = ["%s:%d" % key for key in self._registry]
        out["queued"] = sum(s.pending() for s in self._senders())
        return out


class ProxyNode(NodeServer):
    """Replication fan-out point; holds no data."""

    kind = "proxy"
    has_store = False

    def __init__(self, config, profile=None):
        super().__init__(config, profile)
        self._reg_lock = threading.Lock()
        self._registry = {}

    def _senders(self):
        with self._reg_lock:
            return tuple(self._registry.values())

    def handle_register(self, endpoint: Endpoint) -> None:
        key = (endpoint.address, endpoint.port)
        with self._reg_lock:
            if key in self._registry:
                return
            self._registry[key] = DownstreamSender(
                endpoint, self.my_role, self.profile, self.stats,
                sched=self.config.sched)
        self.stats.inc("slaves_registered")

    def handle_replicate(self, cs, cmd: Command, payload: bytes) -> None:
        frame = wire.encode_frame(wire.KIND_REPLICATE, payload)  # forward verbatim
        with self._reg_lock:
            senders = tuple(self._registry.values())
        for sender in senders:
            sender.enqueue(frame)
        if senders:
            self.stats.inc("replicate_enqueued", len(senders))

    def status(self):
        out = super().status()
        with self._reg_lock:
            out["slaves"] = ["%s:%d" % key for key in self._registry]
        out["queued"] = sum(s.pending() for s in self._senders())
        return out


class SlaveNode(NodeServer):
    """Read-only replica fed by Replicate frames."""

    kind = "slave"

    REGISTER_ATTEMPTS = 40
    REGISTER_DELAY = 0.25

    def __init__(self, config, profile=None):
        super().__init__(config, profile)
        self.registered = threading.Event()

    def _post_start(self):
        t = threading.Thread(target=self._register_loop, daemon=True,
                             name="register-%d" % self.port)
        t.start()
        self._threads.append(t)

    def _register_loop(self):
        from .client import Conn
        _apply_sched(self.config.sched)
        addr, port = self.config.advertised(self.port)
        for _ in range(self.REGISTER_ATTEMPTS):
            if self._stopping.is_set():
                return
            try:
                with Conn(self.config.register_to, my_role=self.my_role,
                          profile=self.profile, timeout=2.0) as conn:
                    conn.register(self.my_role, addr, port)
                self.registered.set()
                return
            except Exception:
                self._stopping.wait(self.REGISTER_DELAY)
        self.stats.inc("register_gave_up")

    def handle_request(self, cs, cmd: Command) -> Reply:
        if wire.is_write(cmd):
            self.stats.inc("writes_refused")
            return Reply(wire.ST_ERROR, b"read-only replica")
        with self.store_lock:
            return self.store.apply(cmd)

    def handle_replicate(self, cs, cmd: Command, payload: bytes) -> None:
        with self.store_lock:
            self.store.apply(cmd)

    def status(self):
        out = super().status()
        out["registered"] = self.registered.is_set()
        return out


def build_node(config: NodeConfig, profile: PerfProfile | None = None) -> NodeServer:
    if config.kind == "cachefront":
        from .cache import CacheFrontNode
        return CacheFrontNode(config, profile)
    cls = {
        "plain": PlainNode,
        "master": MasterNode,
        "proxy": ProxyNode,
        "slave": SlaveNode,
        "shard": ShardNode,
    }[config.kind]
    return cls(config, profile)
