"""Key-to-slot hashing and the slot ownership bitmap.

Keys hash with CRC16/XMODEM (poly 0x1021, init 0, no reflection, no
final xor; crc16(b"123456789") == 0x31C3) and land in one of 16384
slots.  Ownership is a 2048-byte bitmap, one bit per slot, LSB-first
within each byte: bit set means the host shard owns the slot, clear
means the offload shard owns it.  The map is built once and shipped to
clients, so routing never costs a network round trip.
"""

from .perf import Role

SLOT_COUNT = 16384
SLOT_MAP_BYTES = SLOT_COUNT // 8

_POLY = 0x1021


def _build_table():
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ _POLY) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
        table.append(crc)
    return tuple(table)


_TABLE = _build_table()


class SlotOutOfRange(Exception):
    """Slot index outside 0..16383."""


def crc16(data: bytes) -> int:
    crc = 0
    table = _TABLE
    for byte in data:
        crc = ((crc << 8) & 0xFF00) ^ table[(crc >> 8) ^ byte]
    return crc


def slot_of(key: bytes) -> int:
    if not key:
        raise ValueError("empty key has no slot")
    return crc16(key) % SLOT_COUNT


class SlotMap:
    """Immutable slot -> owner bitmap (1 = host, 0 = nic)."""

    __slots__ = ("_bits",)

    def __init__(self, raw: bytes):
        if len(raw) != SLOT_MAP_BYTES:
            raise ValueError("slot map must be exactly %d bytes, got %d"
                             % (SLOT_MAP_BYTES, len(raw)))
        self._bits = bytes(raw)

    @classmethod
    def build(cls, owner_fn) -> "SlotMap":
        """owner_fn(slot) -> Role for every slot."""
        raw = bytearray(SLOT_MAP_BYTES)
        for slot in range(SLOT_COUNT):
            if owner_fn(slot) is Role.HOST:
                raw[slot >> 3] |= 1 << (slot & 7)
        return cls(bytes(raw))

    @classmethod
    def half(cls) -> "SlotMap":
        """Slots 0..8191 on the host shard, the rest offloaded."""
        return cls(b"\xff" * (SLOT_MAP_BYTES // 2) + b"\x00" * (SLOT_MAP_BYTES // 2))

    @classmethod
    def even(cls) -> "SlotMap":
        """Even slots on the host shard, odd slots offloaded."""
        return cls(b"\x55" * SLOT_MAP_BYTES)

    @classmethod
    def all_host(cls) -> "SlotMap":
        return cls(b"\xff" * SLOT_MAP_BYTES)

    def owner(self, slot: int) -> Role:
        if not 0 <= slot < SLOT_COUNT:
            raise SlotOutOfRange("slot %d" % slot)
        return Role.HOST if (self._bits[slot >> 3] >> (slot & 7)) & 1 else Role.NIC

    def owner_of_key(self, key: bytes) -> Role:
        return self.owner(slot_of(key))

    def to_bytes(self) -> bytes:
        return self._bits

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self._bits)

    @classmethod
    def load(cls, path) -> "SlotMap":
        with open(path, "rb") as fh:
            return cls(fh.read())

    def __eq__(self, other):
        return isinstance(other, SlotMap) and self._bits == other._bits

    def __hash__(self):
        return hash(self._bits)
