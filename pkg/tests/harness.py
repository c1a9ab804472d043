"""Subprocess cluster harness for the trend and CLI tests.

Nodes run as real `nickv node` processes so the OS scheduler, not the
test, decides who gets the core.  Each process announces readiness with
a single `ready <addr>:<port>` line on stdout; teardown is SIGKILL
unless a test wants the graceful-shutdown path.
"""

import json
import os
import signal
import subprocess
import sys
import time

from nickv.client import Conn, Endpoint
from nickv.perf import PerfProfile, Role

_READY_TIMEOUT = 15.0


class NodeProc:
    def __init__(self, args, ready_timeout: float = _READY_TIMEOUT):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "nickv"] + list(args),
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        self.port = self._await_ready(ready_timeout)

    def _await_ready(self, timeout: float) -> int:
        deadline = time.monotonic() + timeout
        line = ""
        while time.monotonic() < deadline:
            line = self.proc.stdout.readline()
            if line.startswith("ready "):
                return int(line.rsplit(":", 1)[1])
            if line == "" and self.proc.poll() is not None:
                break
            time.sleep(0.01)
        err = self.proc.stderr.read() if self.proc.poll() is not None else ""
        self.kill()
        raise RuntimeError("node never became ready: %r %s" % (line, err))

    def endpoint(self, role: Role = Role.HOST) -> Endpoint:
        return Endpoint("127.0.0.1", self.port, role)

    def terminate(self, timeout: float = 15.0) -> int:
        if self.proc.poll() is None:
            self.proc.send_signal(signal.SIGTERM)
        try:
            self.proc.wait(timeout=timeout)
        except subprocess.TimeoutExpired:
            self.kill()
        return self.proc.returncode

    def kill(self):
        if self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait(timeout=10.0)
        for stream in (self.proc.stdout, self.proc.stderr):
            if stream:
                stream.close()


class Cluster:
    def __init__(self):
        self.procs = []

    def node(self, *args, sched: str = "normal", profile: str | None = None,
             perf_role: str = "host") -> NodeProc:
        argv = ["node", "--perf-role", perf_role, "--sched", sched]
        if profile:
            argv += ["--profile", profile]
        argv += list(args)
        proc = NodeProc(argv)
        self.procs.append(proc)
        return proc

    def kill_all(self):
        for proc in reversed(self.procs):
            proc.kill()
        self.procs.clear()


def write_profile(path, data: dict) -> str:
    path = os.fspath(path)
    with open(path, "w") as fh:
        json.dump(data, fh)
    return path


def replication_cluster(cluster: Cluster, mode: str, slaves: int,
                        profile: str | None = None,
                        offpath_sched: str = "normal") -> NodeProc:
    """Master plus `slaves` replicas; offload mode adds the fan-out proxy.

    Replicas (and the proxy) are the off-path components: with
    offpath_sched="idle" they yield the core to the serving path, the
    way dedicated replica boxes and NIC cores would never contend with
    the master in the first place.
    """
    proxy = None
    if mode == "offload":
        proxy = cluster.node("--kind", "proxy", sched=offpath_sched,
                             perf_role="nic", profile=profile)
    master_args = ["--kind", "master", "--mode", mode]
    if proxy is not None:
        master_args += ["--proxy", "127.0.0.1:%d" % proxy.port, "--proxy-role", "nic"]
    master = cluster.node(*master_args, profile=profile)
    if mode == "offload":
        reg = ["--register-to", "127.0.0.1:%d" % proxy.port, "--register-to-role", "nic"]
    else:
        reg = ["--register-to", "127.0.0.1:%d" % master.port]
    for _ in range(slaves):
        cluster.node("--kind", "slave", *reg, sched=offpath_sched, profile=profile)
    return master


def node_status(proc: NodeProc, role: Role = Role.HOST) -> dict:
    with Conn(proc.endpoint(role), profile=PerfProfile.zero()) as conn:
        return conn.status()


def wait_registered(proc: NodeProc, expect: int, role: Role = Role.HOST,
                    timeout: float = 15.0) -> None:
    deadline = time.monotonic() + timeout
    seen = -1
    while time.monotonic() < deadline:
        seen = len(node_status(proc, role).get("slaves", []))
        if seen >= expect:
            return
        time.sleep(0.05)
    raise RuntimeError("only %d of %d slaves registered" % (seen, expect))


def shard_pair(cluster: Cluster, profile: str | None = None):
    """Half-split shard pair: host-side node plus the slowed nic-side node."""
    host = cluster.node("--kind", "shard", "--shard-side", "host",
                        "--slot-split", "half", profile=profile)
    nic = cluster.node("--kind", "shard", "--shard-side", "nic",
                       "--slot-split", "half", perf_role="nic", profile=profile)
    return host, nic
