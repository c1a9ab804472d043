"""Binary wire format shared by every node and client.

Frames carry one message each over a TCP stream:

    +----------------+--------+------------------+
    | payload_len    | kind   | payload          |
    | u32 big-endian | u8     | payload_len bytes|
    +----------------+--------+------------------+

Request, Replicate and the payload of a few control frames embed a
command record:

    +--------+----------------+-----+----------------+-------+----------------+
    | opcode | key_len u32 BE | key | val_len u32 BE | value | count u32 BE   |
    +--------+----------------+-----+----------------+-------+----------------+

A Reply payload is a status byte followed by the value bytes.  For SCAN
the value bytes are a concatenation of (key_len u32 BE, key, val_len
u32 BE, val) entries in key order.

Decoding is strict: a frame with an unknown kind, or a command that
violates the shape rules (empty key, SET without a value, trailing
bytes, GET/DEL with a count, ...) is rejected rather than repaired.
"""

import struct
from dataclasses import dataclass

MAX_PAYLOAD = 16 * 1024 * 1024  # refuse anything larger before allocating it

# frame kinds
KIND_REQUEST = 0x01
KIND_REPLY = 0x02
KIND_REPLICATE = 0x03
KIND_REGISTER_SLAVE = 0x04
KIND_ACK = 0x05
KIND_STATUS_REQUEST = 0x06
KIND_STATUS_REPLY = 0x07
KIND_HELLO = 0x08

_KNOWN_KINDS = frozenset((
    KIND_REQUEST, KIND_REPLY, KIND_REPLICATE, KIND_REGISTER_SLAVE,
    KIND_ACK, KIND_STATUS_REQUEST, KIND_STATUS_REPLY, KIND_HELLO,
))

# command opcodes
OP_SET = 0x01
OP_GET = 0x02
OP_DEL = 0x03
OP_SCAN = 0x04

_OP_NAMES = {OP_SET: "SET", OP_GET: "GET", OP_DEL: "DEL", OP_SCAN: "SCAN"}

# reply status codes
ST_OK = 0x00
ST_NOT_FOUND = 0x01
ST_ERROR = 0x02

_ST_NAMES = {ST_OK: "OK", ST_NOT_FOUND: "NotFound", ST_ERROR: "Error"}

MAX_KEY_LEN = 65535

# role bytes used by Hello and RegisterSlave payloads
ROLE_HOST = 0x00
ROLE_NIC = 0x01

_U32 = struct.Struct(">I")
_U16 = struct.Struct(">H")
_HDR = struct.Struct(">IB")


class MalformedFrame(Exception):
    """Frame header or kind byte is not decodable."""


class FrameTooLarge(Exception):
    """Declared payload length exceeds MAX_PAYLOAD."""


class MalformedCommand(Exception):
    """Command payload is truncated, oversized or breaks a shape rule."""


@dataclass(frozen=True)
class Command:
    opcode: int
    key: bytes
    value: bytes = b""
    count: int = 0

    def op_name(self) -> str:
        return _OP_NAMES.get(self.opcode, "0x%02X" % self.opcode)


@dataclass(frozen=True)
class Reply:
    status: int
    value: bytes = b""

    def status_name(self) -> str:
        return _ST_NAMES.get(self.status, "0x%02X" % self.status)


@dataclass(frozen=True)
class Frame:
    kind: int
    payload: bytes


def set_cmd(key: bytes, value: bytes) -> Command:
    return Command(OP_SET, key, value)


def get_cmd(key: bytes) -> Command:
    return Command(OP_GET, key)


def del_cmd(key: bytes) -> Command:
    return Command(OP_DEL, key)


def scan_cmd(key: bytes, count: int) -> Command:
    return Command(OP_SCAN, key, b"", count)


def is_write(cmd: Command) -> bool:
    return cmd.opcode in (OP_SET, OP_DEL)


def _check_command(cmd: Command) -> None:
    op = cmd.opcode
    if op not in _OP_NAMES:
        raise MalformedCommand("unknown opcode 0x%02X" % op)
    if not cmd.key:
        raise MalformedCommand("empty key")
    if len(cmd.key) > MAX_KEY_LEN:
        raise MalformedCommand("key longer than %d bytes" % MAX_KEY_LEN)
    if op == OP_SET:
        # an empty value is legal; only the count field is off-limits
        if cmd.count != 0:
            raise MalformedCommand("SET carries a count")
    elif op == OP_SCAN:
        if cmd.value:
            raise MalformedCommand("SCAN carries a value")
        if cmd.count < 1:
            raise MalformedCommand("SCAN count must be >= 1")
    else:  # GET / DEL
        if cmd.value:
            raise MalformedCommand("%s carries a value" % _OP_NAMES[op])
        if cmd.count != 0:
            raise MalformedCommand("%s carries a count" % _OP_NAMES[op])


def encode_command(cmd: Command) -> bytes:
    _check_command(cmd)
    return b"".join((
        bytes((cmd.opcode,)),
        _U32.pack(len(cmd.key)), cmd.key,
        _U32.pack(len(cmd.value)), cmd.value,
        _U32.pack(cmd.count),
    ))


def decode_command(buf: bytes) -> Command:
    if len(buf) < 13:  # opcode + three u32 fields is the floor
        raise MalformedCommand("truncated command (%d bytes)" % len(buf))
    op = buf[0]
    key_len = _U32.unpack_from(buf, 1)[0]
    pos = 5 + key_len
    if pos + 4 > len(buf):
        raise MalformedCommand("truncated key")
    key = buf[5:pos]
    val_len = _U32.unpack_from(buf, pos)[0]
    vpos = pos + 4
    end = vpos + val_len
    if end + 4 > len(buf):
        raise MalformedCommand("truncated value")
    value = buf[vpos:end]
    count = _U32.unpack_from(buf, end)[0]
    if end + 4 != len(buf):
        raise MalformedCommand("%d trailing bytes" % (len(buf) - end - 4))
    cmd = Command(op, key, value, count)
    _check_command(cmd)
    return cmd


def encode_reply(rep: Reply) -> bytes:
    if rep.status == ST_NOT_FOUND and rep.value:
        raise ValueError("NotFound reply must carry an empty value")
    return bytes((rep.status,)) + rep.value


def decode_reply(buf: bytes) -> Reply:
    if not buf:
        raise MalformedCommand("empty reply payload")
    rep = Reply(buf[0], buf[1:])
    if rep.status == ST_NOT_FOUND and rep.value:
        raise MalformedCommand("NotFound reply carries a value")
    return rep


def pack_entries(entries) -> bytes:
    """Pack (key, value) pairs into SCAN reply value bytes."""
    parts = []
    for key, value in entries:
        parts.append(_U32.pack(len(key)))
        parts.append(key)
        parts.append(_U32.pack(len(value)))
        parts.append(value)
    return b"".join(parts)


def unpack_entries(buf: bytes):
    """Inverse of pack_entries.  Returns a list of (key, value) pairs."""
    out = []
    pos = 0
    n = len(buf)
    while pos < n:
        if pos + 4 > n:
            raise MalformedCommand("truncated entry key length")
        klen = _U32.unpack_from(buf, pos)[0]
        pos += 4
        if pos + klen + 4 > n:
            raise MalformedCommand("truncated entry key")
        key = buf[pos:pos + klen]
        pos += klen
        vlen = _U32.unpack_from(buf, pos)[0]
        pos += 4
        if pos + vlen > n:
            raise MalformedCommand("truncated entry value")
        out.append((key, buf[pos:pos + vlen]))
        pos += vlen
    return out


def pack_register(role_byte: int, address: str, port: int) -> bytes:
    """RegisterSlave payload: role u8, port u16 BE, address utf-8."""
    if role_byte not in (ROLE_HOST, ROLE_NIC):
        raise ValueError("bad role byte 0x%02X" % role_byte)
    if not 0 < port <= 65535:
        raise ValueError("port out of range: %d" % port)
    return bytes((role_byte,)) + _U16.pack(port) + address.encode()


def unpack_register(buf: bytes):
    if len(buf) < 4:
        raise MalformedCommand("truncated register payload")
    role_byte = buf[0]
    if role_byte not in (ROLE_HOST, ROLE_NIC):
        raise MalformedCommand("bad role byte 0x%02X" % role_byte)
    port = _U16.unpack_from(buf, 1)[0]
    if port == 0:
        raise MalformedCommand("zero port")
    try:
        address = buf[3:].decode()
    except UnicodeDecodeError:
        raise MalformedCommand("address is not utf-8") from None
    return role_byte, address, port


def pack_hello(role_byte: int) -> bytes:
    if role_byte not in (ROLE_HOST, ROLE_NIC):
        raise ValueError("bad role byte 0x%02X" % role_byte)
    return bytes((role_byte,))


def unpack_hello(buf: bytes) -> int:
    if len(buf) != 1 or buf[0] not in (ROLE_HOST, ROLE_NIC):
        raise MalformedCommand("bad hello payload")
    return buf[0]


def encode_frame(kind: int, payload: bytes) -> bytes:
    if kind not in _KNOWN_KINDS:
        raise MalformedFrame("unknown frame kind 0x%02X" % kind)
    if len(payload) > MAX_PAYLOAD:
        raise FrameTooLarge("payload of %d bytes" % len(payload))
    return _HDR.pack(len(payload), kind) + payload


class FrameDecoder:
    """Incremental frame decoder, independent of TCP chunk boundaries.

    feed() buffers arbitrary byte chunks and returns every frame that
    became complete.  Header errors raise immediately; the caller is
    expected to drop the connection, so no resynchronisation is
    attempted.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes):
        self._buf += chunk
        out = []
        buf = self._buf
        pos = 0
        n = len(buf)
        while n - pos >= 5:
            length, kind = _HDR.unpack_from(buf, pos)
            if length > MAX_PAYLOAD:
                raise FrameTooLarge("declared payload of %d bytes" % length)
            if kind not in _KNOWN_KINDS:
                raise MalformedFrame("unknown frame kind 0x%02X" % kind)
            if n - pos - 5 < length:
                break
            out.append(Frame(kind, bytes(buf[pos + 5:pos + 5 + length])))
            pos += 5 + length
        if pos:
            del buf[:pos]
        return out

    def pending(self) -> int:
        return len(self._buf)
