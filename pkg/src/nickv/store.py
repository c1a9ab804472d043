"""Ordered in-memory key-value store with an incremental content digest.

The digest is an order-insensitive 64-bit sum of per-entry hashes, so
two stores holding the same entries compare equal no matter how they
got there.  It is maintained incrementally: SET and DEL adjust the
running sum instead of rehashing the whole map, which keeps digest
reads O(1) for replica comparison.

No locking here; the owning node serialises access.
"""

import struct
from dataclasses import dataclass
from hashlib import blake2b

from sortedcontainers import SortedDict

from . import wire
from .wire import Command, Reply

_U32 = struct.Struct(">I")
_MASK64 = (1 << 64) - 1


def entry_hash(key: bytes, value: bytes) -> int:
    h = blake2b(digest_size=8)
    h.update(_U32.pack(len(key)))
    h.update(key)
    h.update(_U32.pack(len(value)))
    h.update(value)
    return int.from_bytes(h.digest(), "big")


@dataclass(frozen=True)
class StoreDigest:
    hash: int
    entry_count: int

    def hex(self) -> str:
        return "%016x:%d" % (self.hash, self.entry_count)


class Store:
    """Lexicographically ordered map of bytes to bytes."""

    def __init__(self):
        self._map = SortedDict()
        self._acc = 0
        # counts applied SET/DEL commands, not state changes: a DEL of a
        # missing key still bumps it, so replicas fed the same command
        # stream agree on the count even when individual ops were no-ops
        self.write_count = 0

    def __len__(self):
        return len(self._map)

    @property
    def entry_count(self) -> int:
        return len(self._map)

    def digest(self) -> StoreDigest:
        return StoreDigest(self._acc & _MASK64, len(self._map))

    def get(self, key: bytes):
        return self._map.get(key)

    def items(self):
        return self._map.items()

    def set(self, key: bytes, value: bytes) -> None:
        old = self._map.get(key)
        if old is not None:
            self._acc -= entry_hash(key, old)
        self._map[key] = value
        self._acc = (self._acc + entry_hash(key, value)) & _MASK64
        self.write_count += 1

    def delete(self, key: bytes) -> bool:
        old = self._map.pop(key, None)
        self.write_count += 1
        if old is None:
            return False
        self._acc = (self._acc - entry_hash(key, old)) & _MASK64
        return True

    def scan(self, start: bytes, count: int):
        """First `count` entries with key >= start, in key order."""
        out = []
        for key in self._map.irange(minimum=start):
            out.append((key, self._map[key]))
            if len(out) >= count:
                break
        return out

    def apply(self, cmd: Command) -> Reply:
        op = cmd.opcode
        if op == wire.OP_SET:
            self.set(cmd.key, cmd.value)
            return Reply(wire.ST_OK)
        if op == wire.OP_GET:
            value = self._map.get(cmd.key)
            if value is None:
                return Reply(wire.ST_NOT_FOUND)
            return Reply(wire.ST_OK, value)
        if op == wire.OP_DEL:
            found = self.delete(cmd.key)
            return Reply(wire.ST_OK if found else wire.ST_NOT_FOUND)
        if op == wire.OP_SCAN:
            return Reply(wire.ST_OK, wire.pack_entries(self.scan(cmd.key, cmd.count)))
        return Reply(wire.ST_ERROR, b"unknown opcode")
