"""Calibrated performance model injected into every node.

Two knobs emulate asymmetric hardware on whatever machine runs the
cluster:

* compute slowdown per role: command handling and frame sends burn a
  busy-spin penalty of cost_us * slowdown(role).  Spinning (instead of
  sleeping) makes an emulated slow core genuinely occupy the CPU, so
  colocated work feels the contention a weak core would cause.
* hop latency per role pair: each received frame is delayed by the
  link latency between the sender's role and ours.  Hops model wire
  time, not work, so they sleep and let other connections proceed.

Costs are microseconds.  The hop matrix is symmetric by construction:
profiles name unordered pairs (host_host, host_nic, nic_nic), so an
asymmetric matrix cannot be expressed.
"""

import ctypes
import ctypes.util
import enum
import json
import time


class ProfileParseError(Exception):
    """Profile file is not valid JSON or has unknown/ill-typed fields."""


class ProfileInvalid(Exception):
    """Profile parsed but a value is out of range."""


class Role(enum.Enum):
    HOST = "host"
    NIC = "nic"


_PAIR_KEYS = {
    "host_host": (Role.HOST, Role.HOST),
    "host_nic": (Role.HOST, Role.NIC),
    "nic_host": (Role.HOST, Role.NIC),  # alias, same unordered pair
    "nic_nic": (Role.NIC, Role.NIC),
}

DEFAULT_NIC_SLOWDOWN = 2.33      # hash-heavy duty cycle; 9.18 models raw compute
ALT_NIC_SLOWDOWN = 9.18
DEFAULT_HOP_US = 10.0
DEFAULT_NIC_HOP_US = 11.0        # host<->nic and nic<->nic sit one notch above
DEFAULT_BASE_OP_US = 2.0
DEFAULT_PER_SEND_US = 2.0


def _pair(a: Role, b: Role):
    # unordered: store with HOST first
    return (a, b) if a.value <= b.value else (b, a)


class PerfProfile:
    def __init__(self, slowdown, hop_us, base_op_cost_us, per_send_cost_us):
        for role in Role:
            if role not in slowdown:
                raise ProfileInvalid("missing slowdown for role %r" % role.value)
            if slowdown[role] <= 0:
                raise ProfileInvalid("slowdown for %r must be > 0" % role.value)
        for pair, us in hop_us.items():
            if us < 0:
                raise ProfileInvalid("negative hop latency for %s" % (pair,))
        if base_op_cost_us < 0:
            raise ProfileInvalid("base_op_cost_us must be >= 0")
        if per_send_cost_us < 0:
            raise ProfileInvalid("per_send_cost_us must be >= 0")
        self.slowdown = dict(slowdown)
        self.hop_us = {}
        for (a, b), us in hop_us.items():
            self.hop_us[_pair(a, b)] = us
        for a in Role:
            for b in Role:
                if _pair(a, b) not in self.hop_us:
                    raise ProfileInvalid("missing hop latency for %s->%s" % (a.value, b.value))
        self.base_op_cost_us = base_op_cost_us
        self.per_send_cost_us = per_send_cost_us

    @classmethod
    def default(cls) -> "PerfProfile":
        return cls(
            slowdown={Role.HOST: 1.0, Role.NIC: DEFAULT_NIC_SLOWDOWN},
            hop_us={
                (Role.HOST, Role.HOST): DEFAULT_HOP_US,
                (Role.HOST, Role.NIC): DEFAULT_NIC_HOP_US,
                (Role.NIC, Role.NIC): DEFAULT_NIC_HOP_US,
            },
            base_op_cost_us=DEFAULT_BASE_OP_US,
            per_send_cost_us=DEFAULT_PER_SEND_US,
        )

    @classmethod
    def zero(cls) -> "PerfProfile":
        """No penalties at all: measure the bare artifact."""
        return cls(
            slowdown={Role.HOST: 1.0, Role.NIC: 1.0},
            hop_us={
                (Role.HOST, Role.HOST): 0.0,
                (Role.HOST, Role.NIC): 0.0,
                (Role.NIC, Role.NIC): 0.0,
            },
            base_op_cost_us=0.0,
            per_send_cost_us=0.0,
        )

    def compute_penalty_us(self, role: Role, cost_us: float) -> float:
        return cost_us * self.slowdown[role]

    def op_cost_us(self, role: Role) -> float:
        return self.base_op_cost_us * self.slowdown[role]

    def send_cost_us(self, role: Role) -> float:
        return self.per_send_cost_us * self.slowdown[role]

    def hop_delay_us(self, src: Role, dst: Role) -> float:
        return self.hop_us[_pair(src, dst)]

    def to_dict(self) -> dict:
        return {
            "compute_slowdown": {r.value: s for r, s in self.slowdown.items()},
            "hop_latency_us": {
                "host_host": self.hop_us[(Role.HOST, Role.HOST)],
                "host_nic": self.hop_us[(Role.HOST, Role.NIC)],
                "nic_nic": self.hop_us[(Role.NIC, Role.NIC)],
            },
            "base_op_cost_us": self.base_op_cost_us,
            "per_send_cost_us": self.per_send_cost_us,
        }

    @classmethod
    def from_dict(cls, data) -> "PerfProfile":
        if not isinstance(data, dict):
            raise ProfileParseError("profile must be a JSON object")
        known = {"compute_slowdown", "hop_latency_us", "base_op_cost_us", "per_send_cost_us"}
        for key in data:
            if key not in known:
                raise ProfileParseError("unknown profile field %r" % key)

        base = cls.default()
        slowdown = dict(base.slowdown)
        hop_us = dict(base.hop_us)

        sd = data.get("compute_slowdown", {})
        if not isinstance(sd, dict):
            raise ProfileParseError("compute_slowdown must be an object")
        for name, val in sd.items():
            try:
                role = Role(name)
            except ValueError:
                raise ProfileParseError("unknown role %r in compute_slowdown" % name) from None
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ProfileParseError("compute_slowdown.%s must be a number" % name)
            slowdown[role] = float(val)

        hops = data.get("hop_latency_us", {})
        if not isinstance(hops, dict):
            raise ProfileParseError("hop_latency_us must be an object")
        for name, val in hops.items():
            if name not in _PAIR_KEYS:
                raise ProfileParseError("unknown hop pair %r" % name)
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ProfileParseError("hop_latency_us.%s must be a number" % name)
            hop_us[_PAIR_KEYS[name]] = float(val)

        for field in ("base_op_cost_us", "per_send_cost_us"):
            if field in data:
                val = data[field]
                if not isinstance(val, (int, float)) or isinstance(val, bool):
                    raise ProfileParseError("%s must be a number" % field)

        return cls(
            slowdown=slowdown,
            hop_us=hop_us,
            base_op_cost_us=float(data.get("base_op_cost_us", base.base_op_cost_us)),
            per_send_cost_us=float(data.get("per_send_cost_us", base.per_send_cost_us)),
        )


def load_profile(path) -> PerfProfile:
    """Read a JSON profile; absent fields fall back to the defaults."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.strip():
        return PerfProfile.default()
    try:
        data = json.loads(raw)
    except ValueError as exc:
        raise ProfileParseError("profile is not valid JSON: %s" % exc) from None
    return PerfProfile.from_dict(data)


def spin_us(us: float) -> None:
    """Burn CPU for `us` microseconds."""
    if us <= 0:
        return
    deadline = time.perf_counter_ns() + int(us * 1000)
    while time.perf_counter_ns() < deadline:
        pass


def sleep_us(us: float) -> None:
    if us > 0:
        time.sleep(us / 1e6)


_PR_SET_TIMERSLACK = 29


def reduce_timer_slack() -> bool:
    """Drop the kernel timer slack to 1ns so short sleeps land on time.

    Default slack is 50us, which would smear a 10us hop into ~65us.
    Harmless to call anywhere; returns False when unavailable.
    """
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6", use_errno=True)
        return libc.prctl(_PR_SET_TIMERSLACK, 1, 0, 0, 0) == 0
    except OSError:
        return False
