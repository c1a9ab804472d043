"""Command-line entry points: node, cluster, bench, status.

One binary, one subcommand per job.  Exit codes: 0 clean shutdown,
2 configuration error, 3 bind failure, 4 target unreachable.
"""

import argparse
import json
import signal
import sys
import threading

from . import bench as bench_mod
from . import workload as wl
from .client import Conn, Endpoint, TargetUnavailable
from .config import (ConfigError, NodeConfig, load_topology, node_config_from_dict,
                     parse_hostport, resolve_slot_map)
from .node import BindError, build_node
from .perf import PerfProfile, Role, load_profile

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BIND = 3
EXIT_UNAVAILABLE = 4


def _role_arg(parser, flag, default, help_text):
    parser.add_argument(flag, choices=["host", "nic"], default=default, help=help_text)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="nickv",
        description="key-value cluster with an emulated device performance model")
    sub = parser.add_subparsers(dest="command", required=True)

    node = sub.add_parser("node", help="run one node")
    node.add_argument("--kind", required=True,
                      choices=["master", "slave", "proxy", "shard", "cachefront", "plain"])
    node.add_argument("--listen", default="127.0.0.1:0", help="bind address, host:port")
    node.add_argument("--name", default="")
    _role_arg(node, "--perf-role", "host", "performance role of this node")
    node.add_argument("--sched", choices=["normal", "idle"], default="normal",
                      help="idle: only run when the CPU is otherwise free")
    node.add_argument("--profile", help="performance profile JSON file")
    node.add_argument("--mode", choices=["direct", "offload"], help="master replication mode")
    node.add_argument("--proxy", help="master offload target, host:port")
    _role_arg(node, "--proxy-role", "nic", "performance role of the proxy")
    node.add_argument("--register-to", help="slave: upstream to announce to, host:port")
    _role_arg(node, "--register-to-role", "host", "performance role of the upstream")
    node.add_argument("--advertise", help="slave: address to announce instead of --listen")
    node.add_argument("--host-endpoint", help="cachefront: backing store, host:port")
    _role_arg(node, "--host-endpoint-role", "host", "performance role of the backing store")
    node.add_argument("--capacity", type=int, default=1024, help="cachefront entries")
    node.add_argument("--shard-side", choices=["host", "nic"], help="slot-map side served")
    node.add_argument("--slot-split", choices=["half", "even", "file"])
    node.add_argument("--slot-map", help="slot bitmap file (with --slot-split file)")
    node.add_argument("--drain-timeout", type=float, default=10.0)

    cluster = sub.add_parser("cluster", help="run a whole topology from one file")
    cluster.add_argument("--config", required=True, help="topology JSON file")

    ben = sub.add_parser("bench", help="run a closed-loop benchmark")
    ben.add_argument("--target", help="single target node, host:port")
    _role_arg(ben, "--target-role", "host", "performance role of the target")
    ben.add_argument("--shard-host", help="host-side shard, host:port")
    ben.add_argument("--shard-nic", help="nic-side shard, host:port")
    ben.add_argument("--slot-split", choices=["half", "even", "file"])
    ben.add_argument("--slot-map", help="slot bitmap file")
    _role_arg(ben, "--client-role", "host", "performance role of the clients")
    ben.add_argument("--workload", default="custom",
                     choices=["A", "B", "C", "D", "E", "custom"])
    ben.add_argument("--mix", help="custom read,write,scan percentages, e.g. 50,50,0")
    ben.add_argument("--dist", choices=["uniform", "latest"])
    ben.add_argument("--clients", type=int, default=1)
    ben.add_argument("--ops", type=int, default=100000)
    ben.add_argument("--keys", type=int, default=10000)
    ben.add_argument("--value-size", type=int, default=3)
    ben.add_argument("--scan-max", type=int, default=100)
    ben.add_argument("--seed", type=int, default=1)
    ben.add_argument("--profile", help="performance profile JSON file")
    ben.add_argument("--label", help="mode column for the report")
    ben.add_argument("--slaves", type=int, default=0, help="slave count, report metadata")
    ben.add_argument("--preload", action="store_true", help="SET the key population first")
    ben.add_argument("--warm", action="store_true", help="GET every key once before measuring")
    ben.add_argument("--out", help="append the report to this CSV file")

    status = sub.add_parser("status", help="query a running node")
    status.add_argument("--target", required=True, help="node to query, host:port")
    _role_arg(status, "--target-role", "host", "performance role of the target")
    status.add_argument("--json", action="store_true", help="raw JSON output")
    return parser


def _load_profile_arg(path) -> PerfProfile:
    if not path:
        return PerfProfile.default()
    return load_profile(path)


def _node_config(args) -> NodeConfig:
    data = {"kind": args.kind, "listen": args.listen, "name": args.name,
            "perf_role": args.perf_role, "sched": args.sched,
            "drain_timeout": args.drain_timeout, "capacity": args.capacity}
    if args.mode:
        data["mode"] = args.mode
    if args.proxy:
        data["proxy"] = {"address": parse_hostport(args.proxy, "proxy")[0],
                         "port": parse_hostport(args.proxy, "proxy")[1],
                         "role": args.proxy_role}
    if args.register_to:
        host, port = parse_hostport(args.register_to, "register_to")
        data["register_to"] = {"address": host, "port": port, "role": args.register_to_role}
    if args.advertise:
        data["advertise"] = args.advertise
    if args.host_endpoint:
        host, port = parse_hostport(args.host_endpoint, "host_endpoint")
        data["host_endpoint"] = {"address": host, "port": port,
                                 "role": args.host_endpoint_role}
    if args.shard_side:
        data["shard_side"] = args.shard_side
    if args.slot_split:
        data["slot_split"] = args.slot_split
    if args.slot_map:
        data["slot_map"] = args.slot_map
    return node_config_from_dict(data, profile=_load_profile_arg(args.profile))


def _wait_for_signal(stop_event):
    def handler(_signum, _frame):
        stop_event.set()
    signal.signal(signal.SIGTERM, handler)
    signal.signal(signal.SIGINT, handler)
    stop_event.wait()


def cmd_node(args) -> int:
    config = _node_config(args)
    node = build_node(config)
    node.start()
    print("ready %s:%d" % (config.listen_address, node.port), flush=True)
    stop_event = threading.Event()
    _wait_for_signal(stop_event)
    node.stop(drain=True)
    return EXIT_OK


def cmd_cluster(args) -> int:
    profile, configs = load_topology(args.config)
    nodes = []
    # slaves last so their registration targets are already listening
    for config in sorted(configs, key=lambda c: c.kind == "slave"):
        node = build_node(config, profile)
        node.start()
        nodes.append(node)
        print("ready %s %s:%d" % (config.name or config.kind,
                                  config.listen_address, node.port), flush=True)
    stop_event = threading.Event()
    _wait_for_signal(stop_event)
    for node in reversed(nodes):
        node.stop(drain=True)
    return EXIT_OK


def _bench_spec(args) -> wl.WorkloadSpec:
    overrides = {"op_count": args.ops, "key_count": args.keys,
                 "value_size": args.value_size, "scan_max": args.scan_max,
                 "seed": args.seed}
    if args.workload == "custom":
        if not args.mix:
            raise ConfigError("mix: custom workload needs --mix R,W,S")
        parts = args.mix.split(",")
        if len(parts) != 3:
            raise ConfigError("mix: expected three comma-separated percentages")
        try:
            read_pct, write_pct, scan_pct = (int(p) for p in parts)
        except ValueError:
            raise ConfigError("mix: percentages must be integers") from None
        spec = wl.WorkloadSpec(read_pct, write_pct, scan_pct,
                               distribution=args.dist or wl.DIST_UNIFORM, **overrides)
    else:
        if args.dist:
            overrides["distribution"] = args.dist
        spec = wl.preset(args.workload, **overrides)
    try:
        return spec.validate()
    except ValueError as exc:
        raise ConfigError("workload: %s" % exc) from None


def _bench_target(args):
    if args.target and (args.shard_host or args.shard_nic):
        raise ConfigError("target: give either --target or the shard pair, not both")
    if args.target:
        host, port = parse_hostport(args.target, "target")
        return bench_mod.SingleTarget(Endpoint(host, port, Role(args.target_role)))
    if args.shard_host and args.shard_nic:
        hh, hp = parse_hostport(args.shard_host, "shard_host")
        nh, np_ = parse_hostport(args.shard_nic, "shard_nic")
        slot_map = resolve_slot_map(args.slot_split, args.slot_map)
        if slot_map is None:
            from .slots import SlotMap
            slot_map = SlotMap.half()
        return bench_mod.ShardTarget(Endpoint(hh, hp, Role.HOST),
                                     Endpoint(nh, np_, Role.NIC),
                                     slot_map.to_bytes())
    raise ConfigError("target: need --target or both --shard-host and --shard-nic")


def cmd_bench(args) -> int:
    spec = _bench_spec(args)
    target = _bench_target(args)
    profile = _load_profile_arg(args.profile)
    profile_label = args.profile or "default"
    client_role = Role(args.client_role)
    label = args.label or ("shard" if isinstance(target, bench_mod.ShardTarget)
                           else "single")
    if args.preload:
        bench_mod.preload(target, spec, client_role=client_role, profile=profile)
    if args.warm:
        bench_mod.warm(target, spec, client_role=client_role, profile=profile)
    report = bench_mod.run_bench(
        target, spec, args.clients, client_role=client_role, profile=profile,
        mode=label, slaves=args.slaves, profile_label=profile_label)
    print("mode=%s clients=%d slaves=%d value_size=%d throughput=%.1f ops/s "
          "avg=%.1fus p50=%.1fus p99=%.1fus errors=%d samples=%d seed=%d"
          % (report.mode, report.clients, report.slaves, report.value_size,
             report.throughput_ops, report.avg_us, report.p50_us, report.p99_us,
             report.errors, report.sample_count, report.seed), flush=True)
    if args.out:
        bench_mod.report_csv(report, args.out)
    return EXIT_OK


def cmd_status(args) -> int:
    host, port = parse_hostport(args.target, "target")
    with Conn(Endpoint(host, port, Role(args.target_role))) as conn:
        info = conn.status()
    if args.json:
        print(json.dumps(info, indent=2, sort_keys=True))
        return EXIT_OK
    counters = info.pop("counters", {})
    for key in sorted(info):
        print("%s=%s" % (key, info[key]))
    for key in sorted(counters):
        print("counter.%s=%d" % (key, counters[key]))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"node": cmd_node, "cluster": cmd_cluster,
                "bench": cmd_bench, "status": cmd_status}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except BindError as exc:
        print("bind error: %s" % exc, file=sys.stderr)
        return EXIT_BIND
    except TargetUnavailable as exc:
        print("target unavailable: %s" % exc, file=sys.stderr)
        return EXIT_UNAVAILABLE


if __name__ == "__main__":
    sys.exit(main())
