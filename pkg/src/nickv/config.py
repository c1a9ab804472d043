"""Node configuration parsing and validation.

Everything is checked here, before a socket is touched, so a typo in a
topology file fails fast with the offending field named instead of
surfacing as a half-started cluster.
"""

import json
from dataclasses import dataclass, field

from .client import Endpoint
from .perf import PerfProfile, Role, load_profile
from .slots import SlotMap

NODE_KINDS = ("master", "slave", "proxy", "shard", "cachefront", "plain")
MODES = ("direct", "offload")
SCHEDS = ("normal", "idle")


class ConfigError(Exception):
    """A configuration field is missing, malformed or inconsistent."""


def parse_role(text, field_name: str) -> Role:
    try:
        return Role(text)
    except ValueError:
        raise ConfigError("%s: unknown role %r (host or nic)" % (field_name, text)) from None


def parse_hostport(text, field_name: str):
    if not isinstance(text, str) or ":" not in text:
        raise ConfigError("%s: expected host:port, got %r" % (field_name, text))
    host, _, port_text = text.rpartition(":")
    try:
        port = int(port_text)
    except ValueError:
        raise ConfigError("%s: port %r is not an integer" % (field_name, port_text)) from None
    if not host:
        raise ConfigError("%s: empty host in %r" % (field_name, text))
    if not 0 <= port <= 65535:
        raise ConfigError("%s: port %d out of range" % (field_name, port))
    return host, port


def parse_endpoint(value, field_name: str, default_role: Role = Role.HOST) -> Endpoint:
    """Accepts "host:port" or {"address", "port", "role"?}."""
    if isinstance(value, str):
        host, port = parse_hostport(value, field_name)
        role = default_role
    elif isinstance(value, dict):
        unknown = set(value) - {"address", "port", "role"}
        if unknown:
            raise ConfigError("%s: unknown keys %s" % (field_name, sorted(unknown)))
        try:
            host = value["address"]
            port = value["port"]
        except KeyError as exc:
            raise ConfigError("%s: missing %s" % (field_name, exc)) from None
        if not isinstance(port, int):
            raise ConfigError("%s: port must be an integer" % field_name)
        role = parse_role(value["role"], field_name + ".role") if "role" in value else default_role
    else:
        raise ConfigError("%s: expected host:port or object, got %r" % (field_name, value))
    if not 0 < port <= 65535:
        raise ConfigError("%s: port %d out of range" % (field_name, port))
    return Endpoint(host, port, role)


@dataclass
class NodeConfig:
    kind: str
    listen_address: str = "127.0.0.1"
    listen_port: int = 0  # 0 picks an ephemeral port
    name: str = ""
    perf_role: Role = Role.HOST
    sched: str = "normal"
    mode: str | None = None            # master: direct | offload
    proxy: Endpoint | None = None      # master in offload mode
    register_to: Endpoint | None = None  # slave
    advertise_address: str | None = None
    advertise_port: int | None = None
    host_endpoint: Endpoint | None = None  # cachefront backing store
    capacity: int = 1024               # cachefront entries
    shard_side: Role | None = None
    slot_map: SlotMap | None = None
    drain_timeout: float = 10.0
    profile: PerfProfile = field(default_factory=PerfProfile.default)

    def validate(self) -> "NodeConfig":
        if self.kind not in NODE_KINDS:
            raise ConfigError("kind: unknown node kind %r" % (self.kind,))
        if self.sched not in SCHEDS:
            raise ConfigError("sched: expected normal or idle, got %r" % (self.sched,))
        if not 0 <= self.listen_port <= 65535:
            raise ConfigError("listen: port %d out of range" % self.listen_port)
        if self.capacity < 1:
            raise ConfigError("capacity: must be >= 1, got %d" % self.capacity)
        if self.drain_timeout < 0:
            raise ConfigError("drain_timeout: must be >= 0")

        if self.kind == "master":
            if self.mode not in MODES:
                raise ConfigError("mode: master requires direct or offload, got %r"
                                  % (self.mode,))
            if self.mode == "offload" and self.proxy is None:
                raise ConfigError("proxy: offload mode requires a proxy endpoint")
        elif self.mode is not None:
            raise ConfigError("mode: only master nodes take a mode")

        if self.kind == "slave":
            if self.register_to is None:
                raise ConfigError("register_to: slave requires an upstream endpoint")
        if self.kind == "cachefront":
            if self.host_endpoint is None:
                raise ConfigError("host_endpoint: cachefront requires a backing endpoint")
        if self.kind == "shard":
            if self.shard_side is None:
                raise ConfigError("shard_side: shard requires host or nic")
            if self.slot_map is None:
                raise ConfigError("slot_map: shard requires a slot map")
        return self

    def advertised(self, actual_port: int):
        addr = self.advertise_address or self.listen_address
        port = self.advertise_port or actual_port
        return addr, port


def resolve_slot_map(split, path) -> SlotMap | None:
    """Resolve --slot-split/--slot-map the same way everywhere.

    split is one of half|even|file (None means: file if a path was
    given, otherwise the half preset wherever a map is required).
    """
    if split is None:
        split = "file" if path else None
    if split is None:
        return None
    if split == "half":
        return SlotMap.half()
    if split == "even":
        return SlotMap.even()
    if split == "file":
        if not path:
            raise ConfigError("slot_map: slot_split=file needs a map path")
        try:
            return SlotMap.load(path)
        except FileNotFoundError:
            raise ConfigError("slot_map: %s not found" % path) from None
        except ValueError as exc:
            raise ConfigError("slot_map: %s" % exc) from None
    raise ConfigError("slot_split: unknown preset %r (half, even, file)" % (split,))


def node_config_from_dict(data: dict, profile: PerfProfile | None = None) -> NodeConfig:
    if not isinstance(data, dict):
        raise ConfigError("node entry must be an object")
    known = {
        "kind", "name", "listen", "perf_role", "sched", "mode", "proxy",
        "register_to", "advertise", "host_endpoint", "capacity", "shard_side",
        "slot_split", "slot_map", "drain_timeout",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError("unknown node fields: %s" % sorted(unknown))
    if "kind" not in data:
        raise ConfigError("kind: required")

    cfg = NodeConfig(kind=data["kind"])
    cfg.name = data.get("name", "")
    if "listen" in data:
        cfg.listen_address, cfg.listen_port = parse_hostport(data["listen"], "listen")
    if "perf_role" in data:
        cfg.perf_role = parse_role(data["perf_role"], "perf_role")
    cfg.sched = data.get("sched", "normal")
    cfg.mode = data.get("mode")
    if "proxy" in data:
        cfg.proxy = parse_endpoint(data["proxy"], "proxy", default_role=Role.NIC)
    if "register_to" in data:
        cfg.register_to = parse_endpoint(data["register_to"], "register_to")
    if "advertise" in data:
        cfg.advertise_address, cfg.advertise_port = parse_hostport(data["advertise"], "advertise")
    if "host_endpoint" in data:
        cfg.host_endpoint = parse_endpoint(data["host_endpoint"], "host_endpoint")
    if "capacity" in data:
        if not isinstance(data["capacity"], int):
            raise ConfigError("capacity: must be an integer")
        cfg.capacity = data["capacity"]
    if "shard_side" in data:
        cfg.shard_side = parse_role(data["shard_side"], "shard_side")
    if "slot_split" in data or "slot_map" in data:
        cfg.slot_map = resolve_slot_map(data.get("slot_split"), data.get("slot_map"))
    elif data["kind"] == "shard":
        cfg.slot_map = SlotMap.half()  # documented default split
    if "drain_timeout" in data:
        cfg.drain_timeout = float(data["drain_timeout"])
    if profile is not None:
        cfg.profile = profile
    return cfg.validate()


def load_topology(path):
    """Parse a cluster file: {"profile": ..., "nodes": [...]}.

    Returns (profile, [NodeConfig]).  The profile entry may be an
    inline object or a path to a profile file; omitted means defaults.
    """
    try:
        with open(path, "rb") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("cannot read topology file: %s" % exc) from None
    except ValueError as exc:
        raise ConfigError("topology file is not valid JSON: %s" % exc) from None
    if not isinstance(data, dict):
        raise ConfigError("topology file must hold a JSON object")
    unknown = set(data) - {"profile", "nodes"}
    if unknown:
        raise ConfigError("unknown topology fields: %s" % sorted(unknown))

    prof_entry = data.get("profile")
    if prof_entry is None:
        profile = PerfProfile.default()
    elif isinstance(prof_entry, str):
        profile = load_profile(prof_entry)
    else:
        profile = PerfProfile.from_dict(prof_entry)

    nodes_data = data.get("nodes")
    if not isinstance(nodes_data, list) or not nodes_data:
        raise ConfigError("nodes: topology needs a non-empty node list")
    return profile, [node_config_from_dict(entry, profile) for entry in nodes_data]
