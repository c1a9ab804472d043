"""Look-through LRU cache node sitting in front of a backing store.

Reads served from cache skip the backing hop entirely; misses fetch
from the backing node, populate the cache and relay the answer.
Writes always go through to the backing store first, then update the
cache, so the cache never holds a value the backing store has not
accepted.  Lookups that miss on the backing side too are not cached
(no negative entries).
"""

import threading
from collections import OrderedDict

from . import wire
from .client import Conn, TargetUnavailable
from .node import NodeServer
from .wire import Command, Reply


class HostUnavailable(Exception):
    """Backing store cannot be reached."""


class LruCache:
    """Bounded mapping with least-recently-used eviction.

    Not thread-safe; the owning node holds its own lock.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1, got %d" % capacity)
        self.capacity = capacity
        self._map = OrderedDict()

    def __len__(self):
        return len(self._map)

    def __contains__(self, key):
        return key in self._map

    def get(self, key: bytes):
        value = self._map.get(key)
        if value is not None:
            self._map.move_to_end(key)
        return value

    def put(self, key: bytes, value: bytes) -> None:
        self._map[key] = value
        self._map.move_to_end(key)
        while len(self._map) > self.capacity:
            self._map.popitem(last=False)

    def delete(self, key: bytes) -> None:
        self._map.pop(key, None)

    def keys(self):
        return list(self._map.keys())


class CacheFrontNode(NodeServer):
    kind = "cachefront"
    has_store = False

    def __init__(self, config, profile=None):
        super().__init__(config, profile)
        self.cache = LruCache(config.capacity)
        self.cache_lock = threading.Lock()

    def _upstream(self, cs) -> Conn:
        # one backing connection per client connection, created lazily
        if cs.extra is None:
            cs.extra = Conn(self.config.host_endpoint, my_role=self.my_role,
                            profile=self.profile, timeout=10.0)
        return cs.extra

    def _fetch(self, cs, cmd: Command) -> Reply:
        try:
            reply = self._upstream(cs).request(cmd)
        except (TargetUnavailable, OSError) as exc:
            self.stats.inc("host_errors")
            raise HostUnavailable(str(exc)) from None
        return reply

    def handle_request(self, cs, cmd: Command) -> Reply:
        op = cmd.opcode
        try:
            if op == wire.OP_GET:
                return self._serve_get(cs, cmd)
            if op == wire.OP_SET:
                reply = self._fetch(cs, cmd)
                if reply.status == wire.ST_OK:  # write-through on success only
                    with self.cache_lock:
                        self.cache.put(cmd.key, cmd.value)
                return reply
            if op == wire.OP_DEL:
                reply = self._fetch(cs, cmd)
                with self.cache_lock:
                    self.cache.delete(cmd.key)
                return reply
            return self._fetch(cs, cmd)  # SCAN and anything else: relay
        except HostUnavailable:
            return Reply(wire.ST_ERROR, b"host unavailable")

    def _serve_get(self, cs, cmd: Command) -> Reply:
        with self.cache_lock:
            value = self.cache.get(cmd.key)
            if value is not None:
                self.stats.inc("cache_hits")
                return Reply(wire.ST_OK, value)
            self.stats.inc("cache_misses")
        self.stats.inc("host_fetches")
        reply = self._fetch(cs, cmd)
        if reply.status == wire.ST_OK:
            with self.cache_lock:
                self.cache.put(cmd.key, reply.value)
        return reply

    def status(self):
        out = super().status()
        with self.cache_lock:
            out["cache_entries"] = len(self.cache)
        out["capacity"] = self.cache.capacity
        out["host_endpoint"] = str(self.config.host_endpoint)
        return out
