from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from consortium_bridge.errors import ConfigurationError
from consortium_bridge.netsim import DelayModel, EventKind, FaultBehavior, Network, Process


class Recorder(Process):
    def __init__(self, node_id, net):
        super().__init__(node_id, net)
        self.got = []
        self.route(str, lambda src, msg: self.got.append((self.net.now, src, msg)))


def test_fixed_latency_delivery_time():
    net = Network(2, DelayModel(50))
    assert net.schedule_send(0, 1, "x", now=0) == 50
    assert net.run_until_quiet() == 50


def test_full_drop_records_fault():
    net = Network(2, DelayModel(50, drop_probability=1.0))
    assert net.schedule_send(0, 1, "x") is None
    assert net.trace[-1].kind is EventKind.FAULT
    assert net.dropped == 1


def test_unknown_node_is_configuration_error():
    net = Network(2, DelayModel(10))
    with pytest.raises(ConfigurationError):
        net.schedule_send(0, 5, "x")
    with pytest.raises(ConfigurationError):
        net.inject_fault(9, "silent")


def test_empty_queue_returns_zero():
    assert Network(1, DelayModel(1)).run_until_quiet() == 0


def test_single_timer_returns_its_time():
    net = Network(1, DelayModel(1))
    net.set_timer(0, 10, "tick")
    assert net.run_until_quiet() == 10


def test_horizon_is_reported_as_timeout():
    net = Network(1, DelayModel(1))
    net.set_timer(0, 100, "late")
    assert net.run_until_quiet(horizon=40) == 40
    assert net.timed_out and net.pending == 1


def test_jitter_is_clamped_to_delta_bound():
    with pytest.raises(ConfigurationError):
        DelayModel(400, 100, delta_bound=450)
    model = DelayModel(400, 100)
    assert model.delta_bound == 500


def _jittered_trace(seed):
    net = Network(3, DelayModel(400, 100), seed)
    nodes = [Recorder(i, net) for i in range(3)]
    for k in range(30):
        nodes[k % 3].send((k + 1) % 3, f"m{k}", reliable=False)
    net.run_until_quiet()
    return net.trace_lines()


def test_same_seed_same_delivery_times():
    assert _jittered_trace(42) == _jittered_trace(42)


def test_different_seed_changes_jitter():
    assert _jittered_trace(42) != _jittered_trace(43)


def test_trace_line_format():
    line = _jittered_trace(1)[0]
    time, kind, src, dst, digest = line.split(",")
    assert int(time) >= 300 and kind == "deliver"
    assert int(src) in range(3) and int(dst) in range(3)
    assert len(digest) == 16 and int(digest, 16) >= 0


def test_reliable_links_deliver_in_order_despite_drops():
    net = Network(2, DelayModel(20, 15, drop_probability=0.4), seed=5)
    a, b = Recorder(0, net), Recorder(1, net)
    for k in range(50):
        a.send(1, f"m{k}")
    net.run_until_quiet()
    assert [m for _, _, m in b.got] == [f"m{k}" for k in range(50)]
    assert net.dropped > 0


def test_fault_bound_flagging():
    net = Network(6, DelayModel(1), consortium_size=4)
    net.inject_fault(2, FaultBehavior.SILENT)
    assert not net.assumption_violated
    net.inject_fault(5, "silent")  # not a consortium member
    assert not net.assumption_violated
    net.inject_fault(3, "endorse-invalid")
    assert net.assumption_violated


def test_zero_faults_matches_baseline_trace():
    baseline = _jittered_trace(9)
    net = Network(3, DelayModel(400, 100), 9)
    nodes = [Recorder(i, net) for i in range(3)]
    assert net.faults == {}
    for k in range(30):
        nodes[k % 3].send((k + 1) % 3, f"m{k}", reliable=False)
    net.run_until_quiet()
    assert net.trace_lines() == baseline


def test_ties_broken_by_target_then_insertion():
    net = Network(3, DelayModel(10))
    order = []
    for node in range(3):
        net.register(node, lambda e: order.append((e.target, e.payload)))
    net.set_timer(2, 5, "c")
    net.set_timer(1, 5, "b2")
    net.set_timer(1, 5, "b1")
    net.set_timer(0, 5, "a")
    net.run_until_quiet()
    assert order == [(0, "a"), (1, "b2"), (1, "b1"), (2, "c")]


@settings(max_examples=40, deadline=None)
@given(base=st.integers(0, 500), jitter=st.integers(0, 200), seed=st.integers(0, 2 ** 64 - 1))
def test_delivery_latency_never_exceeds_bound(base, jitter, seed):
    net = Network(2, DelayModel(base, jitter), seed)
    for _ in range(20):
        when = net.schedule_send(0, 1, "x", now=0)
        assert base - jitter <= when <= base + jitter
        assert when >= 0


@settings(max_examples=30, deadline=None)
@given(times=st.lists(st.integers(0, 1000), min_size=1, max_size=40))
def test_events_fire_in_nondecreasing_time(times):
    net = Network(1, DelayModel(1))
    fired = []
    net.register(0, lambda e: fired.append(e.fire_time))
    for t in times:
        net.set_timer(0, t, "t")
    net.run_until_quiet()
    assert fired == sorted(times)
