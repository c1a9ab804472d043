"""Performance model: defaults, parsing, spin and hop behavior."""

import json
import time

import pytest

from nickv.perf import (
    ALT_NIC_SLOWDOWN, DEFAULT_NIC_SLOWDOWN, PerfProfile, ProfileInvalid,
    ProfileParseError, Role, load_profile, sleep_us, spin_us,
)


def test_default_profile_values():
    prof = PerfProfile.default()
    assert prof.slowdown[Role.HOST] == 1.0
    assert prof.slowdown[Role.NIC] == DEFAULT_NIC_SLOWDOWN == 2.33
    assert ALT_NIC_SLOWDOWN == 9.18
    assert prof.hop_delay_us(Role.HOST, Role.HOST) == 10.0
    assert prof.hop_delay_us(Role.HOST, Role.NIC) == 11.0
    assert prof.hop_delay_us(Role.NIC, Role.NIC) == 11.0
    assert prof.base_op_cost_us == 2.0
    assert prof.per_send_cost_us == 2.0


def test_cost_scaling_by_role():
    prof = PerfProfile.default()
    assert prof.op_cost_us(Role.NIC) / prof.op_cost_us(Role.HOST) == 2.33
    assert prof.send_cost_us(Role.NIC) == 2.0 * 2.33
    assert prof.compute_penalty_us(Role.NIC, 100.0) == 233.0


def test_hop_matrix_is_symmetric():
    prof = PerfProfile.from_dict({"hop_latency_us": {"nic_host": 42.0}})
    assert prof.hop_delay_us(Role.HOST, Role.NIC) == 42.0
    assert prof.hop_delay_us(Role.NIC, Role.HOST) == 42.0


def test_zero_profile_is_all_zeros():
    prof = PerfProfile.zero()
    assert prof.base_op_cost_us == 0.0
    assert prof.per_send_cost_us == 0.0
    assert prof.op_cost_us(Role.NIC) == 0.0
    assert all(prof.hop_delay_us(a, b) == 0.0 for a in Role for b in Role)


def test_dict_roundtrip():
    prof = PerfProfile.from_dict({
        "compute_slowdown": {"nic": 9.18},
        "hop_latency_us": {"host_host": 1, "host_nic": 2, "nic_nic": 3},
        "base_op_cost_us": 5,
        "per_send_cost_us": 7,
    })
    again = PerfProfile.from_dict(prof.to_dict())
    assert again.to_dict() == prof.to_dict()
    assert again.slowdown[Role.NIC] == 9.18
    assert again.slowdown[Role.HOST] == 1.0  # untouched default


def test_partial_dict_falls_back_to_defaults():
    prof = PerfProfile.from_dict({"base_op_cost_us": 0})
    assert prof.base_op_cost_us == 0.0
    assert prof.slowdown[Role.NIC] == 2.33
    assert prof.hop_delay_us(Role.HOST, Role.HOST) == 10.0


def test_parse_rejections():
    with pytest.raises(ProfileParseError):
        PerfProfile.from_dict({"surprise": 1})
    with pytest.raises(ProfileParseError):
        PerfProfile.from_dict({"compute_slowdown": {"gpu": 1.0}})
    with pytest.raises(ProfileParseError):
        PerfProfile.from_dict({"hop_latency_us": {"host_host": "fast"}})
    with pytest.raises(ProfileParseError):
        PerfProfile.from_dict({"base_op_cost_us": True})
    with pytest.raises(ProfileParseError):
        PerfProfile.from_dict([1, 2])


def test_value_rejections():
    with pytest.raises(ProfileInvalid):
        PerfProfile.from_dict({"compute_slowdown": {"nic": 0}})
    with pytest.raises(ProfileInvalid):
        PerfProfile.from_dict({"hop_latency_us": {"nic_nic": -1}})
    with pytest.raises(ProfileInvalid):
        PerfProfile.from_dict({"base_op_cost_us": -0.5})


def test_load_profile_file(tmp_path):
    path = tmp_path / "prof.json"
    path.write_text(json.dumps({"compute_slowdown": {"nic": 3.5}}))
    assert load_profile(path).slowdown[Role.NIC] == 3.5

    empty = tmp_path / "empty.json"
    empty.write_text("  \n")
    assert load_profile(empty).to_dict() == PerfProfile.default().to_dict()

    broken = tmp_path / "broken.json"
    broken.write_text("{nope")
    with pytest.raises(ProfileParseError):
        load_profile(broken)


def test_spin_busy_waits_the_requested_time():
    t0 = time.perf_counter_ns()
    spin_us(200.0)
    elapsed_us = (time.perf_counter_ns() - t0) / 1000.0
    assert elapsed_us >= 200.0
    assert elapsed_us < 5000.0  # sanity: same order of magnitude


def test_spin_and_sleep_accept_zero():
    spin_us(0.0)
    sleep_us(0.0)
