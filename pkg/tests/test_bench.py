"""Benchmark harness: percentile math, CSV output, and a live run."""

import csv
import math
import random
import time

import pytest

from nickv.bench import (
    BenchReport, CSV_HEADER, EmptySamples, SingleTarget, percentile, preload,
    report_csv, run_bench, warm,
)
from nickv.client import TargetUnavailable
from nickv import workload as wl

from conftest import endpoint_of


def sort_oracle(samples, p):
    ordered = sorted(samples)
    return ordered[math.ceil(p * len(ordered)) - 1]


def test_percentile_small_cases():
    assert percentile([5.0], 0.99) == 5.0
    assert percentile([1.0, 2.0], 0.50) == 1.0
    assert percentile([1.0, 2.0], 0.51) == 2.0
    assert percentile([3.0, 1.0, 2.0], 1.0) == 3.0
    assert percentile([7.0] * 10, 0.99) == 7.0


def test_percentile_random_agreement():
    rng = random.Random(4)
    for _ in range(300):
        samples = [rng.uniform(0, 1000) for _ in range(rng.randint(1, 200))]
        p = rng.choice([0.5, 0.9, 0.95, 0.99, 1.0, rng.random() or 0.5])
        assert percentile(samples, p) == sort_oracle(samples, p)


def test_percentile_rejections():
    with pytest.raises(EmptySamples):
        percentile([], 0.5)
    with pytest.raises(ValueError):
        percentile([1.0], 0.0)
    with pytest.raises(ValueError):
        percentile([1.0], 1.0001)


def _report(**overrides) -> BenchReport:
    base = dict(mode="direct", clients=4, slaves=3, value_size=64,
                throughput_ops=12345.6789012345, avg_us=81.25,
                p50_us=75.0, p99_us=190.0078125, errors=0, seed=7,
                profile="default", op_count=1000, sample_count=1000,
                duration_s=0.081)
    base.update(overrides)
    return BenchReport(**base)


def test_csv_header_once_and_parse_back(tmp_path):
    path = tmp_path / "out.csv"
    report_csv(_report(), path)
    report_csv(_report(mode="offload", throughput_ops=1.0000000000000002), path)

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    with open(path) as fh:
        assert fh.read().count("throughput_ops") == 1  # header exactly once

    assert len(rows) == 2
    assert list(rows[0]) == CSV_HEADER
    first, second = rows
    assert first["mode"] == "direct"
    assert int(first["clients"]) == 4
    assert int(first["slaves"]) == 3
    assert int(first["value_size"]) == 64
    assert float(first["throughput_ops"]) == 12345.6789012345
    assert float(first["avg_us"]) == 81.25
    assert float(first["p99_us"]) == 190.0078125
    assert int(first["errors"]) == 0
    assert int(first["seed"]) == 7
    assert first["profile"] == "default"
    # repr round-trip keeps even the ugly floats exact
    assert float(second["throughput_ops"]) == 1.0000000000000002


def test_run_bench_collects_every_op(farm):
    node = farm.spawn("plain")
    target = SingleTarget(endpoint_of(node))
    spec = wl.preset("A", op_count=2000, key_count=200, value_size=8, seed=3)
    assert preload(target, spec) == 200
    assert warm(target, spec) == 200
    report = run_bench(target, spec, clients=2, mode="smoke", slaves=0)
    assert report.sample_count == 2000
    assert report.errors == 0
    assert report.throughput_ops > 0
    assert report.avg_us > 0
    assert report.p50_us <= report.p99_us
    assert report.mode == "smoke"
    assert report.seed == 3


def test_run_bench_single_client_matches_op_slicing(farm):
    node = farm.spawn("plain")
    target = SingleTarget(endpoint_of(node))
    spec = wl.preset("C", op_count=500, key_count=50, seed=5)
    preload(target, spec)
    report = run_bench(target, spec, clients=1)
    assert report.sample_count == 500
    assert report.errors == 0


def test_run_bench_reports_dead_target():
    from nickv.client import Endpoint
    from nickv.perf import Role
    target = SingleTarget(Endpoint("127.0.0.1", 1, Role.HOST))
    spec = wl.preset("C", op_count=10, key_count=5)
    t0 = time.monotonic()
    with pytest.raises(TargetUnavailable):
        run_bench(target, spec, clients=2)
    assert time.monotonic() - t0 < 30.0  # dead clients noticed, barrier not waited out


def test_run_bench_counts_error_replies(farm):
    # writes to a read-only replica come back as errors: counted, not sampled
    slave = farm.spawn("slave",
                       register_to=endpoint_of(farm.spawn("master", mode="direct")))
    spec = wl.WorkloadSpec(0, 100, 0, op_count=300, key_count=50, seed=2)
    report = run_bench(SingleTarget(endpoint_of(slave)), spec, clients=1)
    assert report.errors == 300
    assert report.sample_count == 0
