"""Desk-scale key-value cluster with an emulated device performance model.

The package provides a small binary-protocol KV store plus the pieces
to run it as a replicated, sharded or cache-fronted cluster on one
machine, with per-role compute and link penalties standing in for
heterogeneous hardware.
"""

__version__ = "0.1.0"

from .client import Conn, Endpoint, TargetUnavailable
from .perf import PerfProfile, Role, load_profile
from .slots import SlotMap, crc16, slot_of
from .store import Store, StoreDigest
from .wire import Command, Frame, Reply

__all__ = [
    "Command", "Conn", "Endpoint", "Frame", "PerfProfile", "Reply", "Role",
    "SlotMap", "Store", "StoreDigest", "TargetUnavailable", "crc16",
    "load_profile", "slot_of", "__version__",
]
