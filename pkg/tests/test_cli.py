"""Command line: exit codes, signals, status output, cluster files."""

import json
import socket
import subprocess
import sys

from nickv.client import Conn, Endpoint
from nickv.perf import Role

from harness import NodeProc, write_profile

ZERO_PROFILE = {
    "compute_slowdown": {"host": 1.0, "nic": 1.0},
    "hop_latency_us": {"host_host": 0, "host_nic": 0, "nic_nic": 0},
    "base_op_cost_us": 0,
    "per_send_cost_us": 0,
}


def _run(*args, timeout=60):
    return subprocess.run([sys.executable, "-m", "nickv"] + list(args),
                          capture_output=True, text=True, timeout=timeout)


def test_node_ready_line_and_clean_sigterm(tmp_path):
    prof = write_profile(tmp_path / "zero.json", ZERO_PROFILE)
    node = NodeProc(["node", "--kind", "plain", "--profile", prof])
    try:
        assert node.port > 0
        with Conn(Endpoint("127.0.0.1", node.port, Role.HOST)) as conn:
            assert conn.set(b"k", b"v").status == 0
        assert node.terminate() == 0
    finally:
        node.kill()


def test_config_error_exits_2():
    res = _run("node", "--kind", "master", "--mode", "offload")
    assert res.returncode == 2
    assert "config error" in res.stderr
    assert "proxy" in res.stderr


def test_bind_error_exits_3(tmp_path):
    holder = socket.socket()
    holder.bind(("127.0.0.1", 0))
    holder.listen(1)
    port = holder.getsockname()[1]
    try:
        res = _run("node", "--kind", "plain", "--listen", "127.0.0.1:%d" % port)
        assert res.returncode == 3
        assert "bind error" in res.stderr
    finally:
        holder.close()


def test_unreachable_target_exits_4():
    res = _run("status", "--target", "127.0.0.1:1")
    assert res.returncode == 4
    assert "target unavailable" in res.stderr

    res = _run("bench", "--target", "127.0.0.1:1", "--ops", "5",
               "--workload", "C", "--keys", "5")
    assert res.returncode == 4


def test_status_text_and_json(tmp_path):
    prof = write_profile(tmp_path / "zero.json", ZERO_PROFILE)
    node = NodeProc(["node", "--kind", "plain", "--name", "box", "--profile", prof])
    try:
        with Conn(Endpoint("127.0.0.1", node.port, Role.HOST)) as conn:
            conn.set(b"a", b"1")

        res = _run("status", "--target", "127.0.0.1:%d" % node.port)
        assert res.returncode == 0
        lines = dict(line.split("=", 1) for line in res.stdout.splitlines())
        assert lines["kind"] == "plain"
        assert lines["name"] == "box"
        assert lines["entry_count"] == "1"
        assert int(lines["counter.requests_in"]) >= 1

        res = _run("status", "--target", "127.0.0.1:%d" % node.port, "--json")
        info = json.loads(res.stdout)
        assert info["kind"] == "plain"
        assert info["write_count"] == 1
    finally:
        node.kill()


def test_bench_cli_end_to_end(tmp_path):
    prof = write_profile(tmp_path / "zero.json", ZERO_PROFILE)
    out_csv = tmp_path / "report.csv"
    node = NodeProc(["node", "--kind", "plain", "--profile", prof])
    try:
        res = _run("bench", "--target", "127.0.0.1:%d" % node.port,
                   "--workload", "A", "--ops", "400", "--keys", "50",
                   "--clients", "2", "--preload", "--profile", prof,
                   "--label", "smoke", "--out", str(out_csv))
        assert res.returncode == 0, res.stderr
        assert "mode=smoke" in res.stdout
        assert "errors=0" in res.stdout
        header, row = out_csv.read_text().strip().splitlines()
        assert header.startswith("mode,clients,slaves,value_size,throughput_ops")
        assert row.startswith("smoke,2,0,3,")
    finally:
        node.kill()


def test_bench_rejects_ambiguous_target():
    res = _run("bench", "--target", "127.0.0.1:1", "--shard-host", "127.0.0.1:2",
               "--shard-nic", "127.0.0.1:3", "--ops", "1")
    assert res.returncode == 2
    res = _run("bench", "--ops", "1")
    assert res.returncode == 2


def test_custom_mix_requires_valid_percentages():
    res = _run("bench", "--target", "127.0.0.1:1", "--workload", "custom",
               "--mix", "60,60,0", "--ops", "1")
    assert res.returncode == 2


def test_cluster_file_runs_whole_topology(tmp_path):
    config = {
        "profile": ZERO_PROFILE,
        "nodes": [
            {"kind": "master", "mode": "direct", "name": "m",
             "listen": "127.0.0.1:0"},
        ],
    }
    # slaves need a fixed master port, so pin one ahead of time
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    master_port = probe.getsockname()[1]
    probe.close()
    config["nodes"][0]["listen"] = "127.0.0.1:%d" % master_port
    config["nodes"] += [
        {"kind": "slave", "name": "s%d" % i,
         "register_to": "127.0.0.1:%d" % master_port}
        for i in range(2)
    ]
    path = tmp_path / "cluster.json"
    path.write_text(json.dumps(config))

    proc = subprocess.Popen([sys.executable, "-m", "nickv", "cluster",
                             "--config", str(path)],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                            text=True)
    try:
        ready = [proc.stdout.readline() for _ in range(3)]
        assert all(line.startswith("ready ") for line in ready)
        assert ready[0].startswith("ready m ")  # master first, slaves after

        with Conn(Endpoint("127.0.0.1", master_port, Role.HOST)) as conn:
            for i in range(50):
                conn.set(b"k%d" % i, b"v")
            status = conn.status()
        assert len(status["slaves"]) == 2

        proc.terminate()
        assert proc.wait(timeout=30) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
        proc.stdout.close()
        proc.stderr.close()
