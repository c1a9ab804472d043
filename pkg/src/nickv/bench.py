"""Closed-loop benchmark engine.

Each client is a separate process running a blocking request loop: no
shared hot-path state, no GIL coupling with its peers.  Clients take
interleaved shards of one deterministic command stream (client i runs
ops i, i+n, i+2n, ...), wait on a barrier, then hammer the target and
report per-op latencies back to the parent for merging.

Latency is wall-clock per completed request in microseconds.  Sample
conservation holds by construction: every op either contributes one
sample or bumps error_count.
"""

import csv
import gc
import math
import multiprocessing as mp
import os
import threading
import time
from dataclasses import dataclass

from . import wire
from .client import Conn, Endpoint, TargetUnavailable
from .perf import PerfProfile, Role, reduce_timer_slack
from .router import EndpointUnavailable, ShardRouter, UnsupportedOperation
from .slots import SlotMap
from .workload import WorkloadSpec, gen_preload, gen_workload

CSV_HEADER = ["mode", "clients", "slaves", "value_size", "throughput_ops",
              "avg_us", "p99_us", "errors", "seed", "profile"]


class EmptySamples(Exception):
    """Percentile of zero samples is undefined."""


def percentile(samples, p: float) -> float:
    """Nearest-rank percentile: sorted value at index ceil(p*n) - 1."""
    if not 0 < p <= 1:
        raise ValueError("p must be in (0, 1], got %r" % (p,))
    if not samples:
        raise EmptySamples("no samples")
    ordered = sorted(samples)
    return ordered[math.ceil(p * len(ordered)) - 1]


@dataclass(frozen=True)
class SingleTarget:
    endpoint: Endpoint


@dataclass(frozen=True)
class ShardTarget:
    host: Endpoint
    nic: Endpoint
    map_bytes: bytes


@dataclass(frozen=True)
class BenchReport:
    mode: str
    clients: int
    slaves: int
    value_size: int
    throughput_ops: float
    avg_us: float
    p50_us: float
    p99_us: float
    errors: int
    seed: int
    profile: str
    op_count: int
    sample_count: int
    duration_s: float


def _make_executor(target, client_role: Role, profile: PerfProfile):
    if isinstance(target, SingleTarget):
        conn = Conn(target.endpoint, my_role=client_role, profile=profile)
        return conn, conn
    if isinstance(target, ShardTarget):
        router = ShardRouter(target.host, target.nic, SlotMap(target.map_bytes),
                             my_role=client_role, profile=profile)
        return router, router
    raise TypeError("unknown target %r" % (target,))




def _worker(idx: int, nclients: int, target, spec: WorkloadSpec,
            client_role: Role, profile_dict: dict, barrier, out_queue):
    try:
        reduce_timer_slack()
        profile = PerfProfile.from_dict(profile_dict)
        executor, closer = _make_executor(target, client_role, profile)
        ops = [cmd for i, cmd in enumerate(gen_workload(spec)) if i % nclients == idx]
        executor.connect()
        gc.disable()  # keep collector pauses out of the latency samples
        latencies = []
        errors = 0
        append = latencies.append
        request = executor.request
        clock = time.perf_counter_ns

        barrier.wait()
        t_start = time.perf_counter()
        for cmd in ops:
            begin = clock()
            try:
                reply = request(cmd)
            except (TargetUnavailable, EndpointUnavailable, UnsupportedOperation):
                errors += 1
                continue
            if reply.status == wire.ST_ERROR:
                errors += 1
                continue
            append((clock() - begin) / 1000.0)
        t_end = time.perf_counter()
        closer.close()
        out_queue.put((idx, t_start, t_end, latencies, errors, None))
    except Exception as exc:  # surfaced by the parent
        try:
            out_queue.put((idx, 0.0, 0.0, [], 0, "%s: %s" % (type(exc).__name__, exc)))
        finally:
            os._exit(1)


def preload(target, spec: WorkloadSpec, client_role: Role = Role.HOST,
            profile: PerfProfile | None = None) -> int:
    """Install the key population a read-bearing workload expects."""
    profile = profile or PerfProfile.zero()
    executor, closer = _make_executor(target, client_role, profile)
    count = 0
    try:
        for cmd in gen_preload(spec):
            reply = executor.request(cmd)
            if reply.status != wire.ST_OK:
                raise TargetUnavailable("preload SET failed: %s" % reply.status_name())
            count += 1
    finally:
        closer.close()
    return count


def warm(target, spec: WorkloadSpec, client_role: Role = Role.HOST,
         profile: PerfProfile | None = None) -> int:
    """GET every preloaded key once, e.g. to fill a cache tier."""
    from .workload import key_bytes
    profile = profile or PerfProfile.zero()
    executor, closer = _make_executor(target, client_role, profile)
    count = 0
    try:
        for index in range(spec.key_count):
            executor.request(wire.get_cmd(key_bytes(index)))
            count += 1
    finally:
        closer.close()
    return count


def _await_start(barrier, procs, out_queue, timeout: float) -> None:
    """Hold the start line until every client has arrived.

    A client that cannot reach the target dies before the barrier, so
    waiting out the full timeout would stall the caller for minutes;
    watch process liveness and surface the worker's error instead.
    """
    released = threading.Event()

    def _arrive():
        try:
            barrier.wait(timeout=timeout)
        except threading.BrokenBarrierError:
            return
        released.set()

    threading.Thread(target=_arrive, daemon=True).start()
    deadline = time.monotonic() + timeout
    while not released.wait(0.02):
        stalled = time.monotonic() > deadline
        if stalled or any(not p.is_alive() for p in procs):
            if released.is_set():  # everyone made it after all
                return
            barrier.abort()
            detail = "start timeout" if stalled else "client died before start"
            try:
                *_rest, msg = out_queue.get(timeout=0.5)
                detail = msg or detail
            except Exception:
                pass
            raise TargetUnavailable("benchmark clients failed to start: %s" % detail)


def run_bench(target, spec: WorkloadSpec, clients: int, *,
              client_role: Role = Role.HOST,
              profile: PerfProfile | None = None,
              mode: str = "single", slaves: int = 0,
              profile_label: str = "default",
              barrier_timeout: float = 180.0,
              op_timeout: float = 600.0) -> BenchReport:
    if clients < 1:
        raise ValueError("clients must be >= 1")
    spec.validate()
    profile = profile or PerfProfile.zero()

    ctx = mp.get_context("fork" if hasattr(os, "fork") else "spawn")
    barrier = ctx.Barrier(clients + 1)
    out_queue = ctx.Queue()
    procs = []
    for idx in range(clients):
        proc = ctx.Process(
            target=_worker,
            args=(idx, clients, target, spec, client_role, profile.to_dict(),
                  barrier, out_queue),
            daemon=True)
        proc.start()
        procs.append(proc)

    try:
        _await_start(barrier, procs, out_queue, barrier_timeout)
    except TargetUnavailable:
        for proc in procs:
            proc.terminate()
        raise

    results = []
    try:
        for _ in procs:
            results.append(out_queue.get(timeout=op_timeout))
    except Exception:
        for proc in procs:
            proc.terminate()
        raise TargetUnavailable("benchmark client never reported") from None
    for proc in procs:
        proc.join(timeout=30.0)

    failures = [msg for *_x, msg in results if msg]
    if failures:
        raise TargetUnavailable("client failed: %s" % failures[0])

    merged = []
    errors = 0
    for _idx, _t0, _t1, latencies, errs, _msg in results:
        merged.extend(latencies)
        errors += errs
    duration = max(r[2] for r in results) - min(r[1] for r in results)
    if duration <= 0:
        duration = 1e-9
    if merged:
        avg = sum(merged) / len(merged)
        p50 = percentile(merged, 0.50)
        p99 = percentile(merged, 0.99)
    else:
        avg = p50 = p99 = 0.0

    return BenchReport(
        mode=mode, clients=clients, slaves=slaves, value_size=spec.value_size,
        throughput_ops=len(merged) / duration, avg_us=avg, p50_us=p50,
        p99_us=p99, errors=errors, seed=spec.seed, profile=profile_label,
        op_count=spec.op_count, sample_count=len(merged), duration_s=duration)


def report_csv(report: BenchReport, path) -> None:
    """Append one data row, writing the header only on a fresh file."""
    need_header = True
    try:
        need_header = os.path.getsize(path) == 0
    except OSError:
        pass
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if need_header:
            writer.writerow(CSV_HEADER)
        writer.writerow([
            report.mode, report.clients, report.slaves, report.value_size,
            repr(report.throughput_ops), repr(report.avg_us), repr(report.p99_us),
            report.errors, report.seed, report.profile,
        ])
