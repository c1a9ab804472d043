"""Deterministic workload generation for the benchmark harness.

A WorkloadSpec fully determines its command stream: same spec, same
bytes.  Concurrent benchmark clients regenerate the stream and take
every n-th command, so no coordination or shared state is needed.

Preset mixes (read-write-scan percentages):

    A  50-50-0  uniform
    B  95-5-0   uniform
    C  100-0-0  uniform (nominally scan-flavoured elsewhere; the
                numeric mix is read-only and that is what counts here)
    D  95-5-0   latest: reads favour recently written keys
    E  0-5-95   uniform scan starts, short ranges
"""

import math
import random
from dataclasses import dataclass, replace

from . import wire

DIST_UNIFORM = "uniform"
DIST_LATEST = "latest"

# recency bias for latest-mode reads: P(k writes back) = p * (1-p)^k
_LATEST_P = 0.2

_PRELOAD_SEED_XOR = 0x9E3779B97F4A7C15  # decorrelate preload values from the run


@dataclass(frozen=True)
class WorkloadSpec:
    read_pct: int
    write_pct: int
    scan_pct: int
    op_count: int
    key_count: int = 10000
    value_size: int = 3  # redis-benchmark's default payload
    distribution: str = DIST_UNIFORM
    scan_max: int = 100
    seed: int = 1

    def validate(self) -> "WorkloadSpec":
        if self.read_pct < 0 or self.write_pct < 0 or self.scan_pct < 0:
            raise ValueError("mix percentages must be >= 0")
        if self.read_pct + self.write_pct + self.scan_pct != 100:
            raise ValueError("mix must sum to 100, got %d"
                             % (self.read_pct + self.write_pct + self.scan_pct))
        if self.op_count < 1:
            raise ValueError("op_count must be >= 1")
        if self.key_count < 1:
            raise ValueError("key_count must be >= 1")
        if self.value_size < 1:
            raise ValueError("value_size must be >= 1")
        if self.scan_max < 1:
            raise ValueError("scan_max must be >= 1")
        if self.distribution not in (DIST_UNIFORM, DIST_LATEST):
            raise ValueError("distribution must be uniform or latest, got %r"
                             % (self.distribution,))
        return self


PRESETS = {
    "A": WorkloadSpec(50, 50, 0, op_count=1),
    "B": WorkloadSpec(95, 5, 0, op_count=1),
    "C": WorkloadSpec(100, 0, 0, op_count=1),
    "D": WorkloadSpec(95, 5, 0, op_count=1, distribution=DIST_LATEST),
    "E": WorkloadSpec(0, 5, 95, op_count=1),
}


def preset(name: str, **overrides) -> WorkloadSpec:
    try:
        base = PRESETS[name.upper()]
    except KeyError:
        raise ValueError("unknown workload preset %r" % (name,)) from None
    return replace(base, **overrides).validate()


def key_bytes(index: int) -> bytes:
    return b"key:%012d" % index


def _geometric(rng) -> int:
    # inverse-CDF sample of P(k) = p * (1-p)^k, k >= 0
    return int(math.log(1.0 - rng.random()) / math.log(1.0 - _LATEST_P))


def gen_workload(spec: WorkloadSpec):
    """Yield spec.op_count commands, a pure function of the WorkloadSpec."""
    spec.validate()
    rng = random.Random(spec.seed)
    read_cut = spec.read_pct
    write_cut = spec.read_pct + spec.write_pct
    latest = spec.distribution == DIST_LATEST
    # in latest mode writes append fresh keys, like a feed of new records
    next_new = spec.key_count
    last_written = spec.key_count - 1

    for _ in range(spec.op_count):
        draw = rng.randrange(100)
        if draw < read_cut:
            if latest:
                index = max(0, last_written - _geometric(rng))
            else:
                index = rng.randrange(spec.key_count)
            yield wire.get_cmd(key_bytes(index))
        elif draw < write_cut:
            if latest:
                index = next_new
                next_new += 1
                last_written = index
            else:
                index = rng.randrange(spec.key_count)
            yield wire.set_cmd(key_bytes(index), rng.randbytes(spec.value_size))
        else:
            start = rng.randrange(spec.key_count)
            yield wire.scan_cmd(key_bytes(start), rng.randint(1, spec.scan_max))


def gen_preload(spec: WorkloadSpec):
    """SET commands covering every key the run may read."""
    rng = random.Random(spec.seed ^ _PRELOAD_SEED_XOR)
    for index in range(spec.key_count):
        yield wire.set_cmd(key_bytes(index), rng.randbytes(spec.value_size))
