from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings, strategies as st

from consortium_bridge.errors import ArgumentError, VersionError
from consortium_bridge.netsim import DelayModel, Network
from consortium_bridge.privchain import (ExecMode, Ledger, Outcome, PrivateChain, PrivTx, counting_contract,
                                         failed_transactions, run_execute_order, run_order_execute)

INC, DBL = "CallIncrement", "CallDouble"


def tx(proc, submitter=0, nonce=0):
    return PrivTx(submitter, "counter", proc, nonce=nonce)


def serial_result(procs, start=0):
    count = start
    for p in procs:
        count = (count + 1) % 100 if p == INC else count * 2 % 100
    return count


def test_increment_from_zero():
    ledger = Ledger([counting_contract()])
    run_order_execute(ledger, [tx(INC)])
    assert ledger.state("counter")["count"] == 1


def test_order_execute_values():
    a = Ledger([counting_contract()])
    run_order_execute(a, [tx(INC, 0), tx(DBL, 1)])
    b = Ledger([counting_contract()])
    run_order_execute(b, [tx(DBL, 1), tx(INC, 0)])
    assert a.state("counter")["count"] == 2
    assert b.state("counter")["count"] == 1


def test_modulo_wraparound():
    ledger = Ledger([counting_contract()])
    run_order_execute(ledger, [tx(INC, nonce=i) for i in range(50)] + [tx(DBL, nonce=99)])
    assert ledger.state("counter")["count"] == 0
    ledger = Ledger([counting_contract()])
    run_order_execute(ledger, [tx(INC, nonce=i) for i in range(100)])
    assert ledger.state("counter")["count"] == 0


def test_versions_are_queryable():
    ledger = Ledger([counting_contract()])
    run_order_execute(ledger, [tx(INC, 0), tx(DBL, 1)])
    assert ledger.query_state("counter", 0)["count"] == 0
    assert ledger.query_state("counter", 1)["count"] == 1
    assert ledger.query_state("counter")["count"] == 2
    with pytest.raises(VersionError):
        ledger.query_state("counter", 5)
    with pytest.raises(ArgumentError):
        ledger.query_state("missing")


def test_snapshots_are_read_only():
    ledger = Ledger([counting_contract()])
    with pytest.raises(TypeError):
        ledger.query_state("counter")["count"] = 7


def test_execute_order_requires_read_version():
    ledger = Ledger([counting_contract(ExecMode.EXECUTE_ORDER)])
    with pytest.raises(ArgumentError):
        ledger.apply(tx(INC))


def test_parallel_pair_commits_one_and_retries_other():
    ledger = Ledger([counting_contract(ExecMode.EXECUTE_ORDER)])
    inc, _ = ledger.simulate(tx(INC, 0))
    dbl, _ = ledger.simulate(tx(DBL, 1))
    records = run_execute_order(ledger, [inc, dbl])
    first_round = records[:2]
    assert [r.outcome for r in first_round] == [Outcome.COMMITTED, Outcome.REJECTED_CONFLICT]
    assert ledger.state("counter")["count"] == 2  # serial order I then D
    assert failed_transactions(records) == []


@pytest.mark.parametrize("k", range(1, 9))
def test_k_parallel_one_commit_per_round(k):
    ledger = Ledger([counting_contract(ExecMode.EXECUTE_ORDER)])
    batch = [ledger.simulate(tx(INC, i, nonce=i))[0] for i in range(k)]
    records = run_execute_order(ledger, batch)
    assert sum(r.committed for r in records[:k]) == 1
    assert sum(not r.committed for r in records[:k]) == k - 1
    assert ledger.state("counter")["count"] == k


def test_retry_limit_reports_failures():
    ledger = Ledger([counting_contract(ExecMode.EXECUTE_ORDER)])
    batch = [ledger.simulate(tx(INC, i, nonce=i))[0] for i in range(4)]
    records = run_execute_order(ledger, batch, retry_limit=1)
    assert len(failed_transactions(records)) == 2
    assert ledger.state("counter")["count"] == 2


@settings(max_examples=60, deadline=None)
@given(procs=st.lists(st.sampled_from([INC, DBL]), min_size=1, max_size=5), start=st.integers(0, 99))
def test_execute_order_matches_some_serial_order(procs, start):
    ledger = Ledger([counting_contract(ExecMode.EXECUTE_ORDER)])
    for i in range(start):
        ledger.apply(ledger.simulate(tx(INC, nonce=1000 + i))[0])
    batch = [ledger.simulate(tx(p, i, nonce=i))[0] for i, p in enumerate(procs)]
    run_execute_order(ledger, batch)
    serial = {serial_result(order, start) for order in itertools.permutations(procs)}
    assert ledger.state("counter")["count"] in serial


def _replicated(mode, n=4, seed=0, drop=0.0):
    net = Network(n + 1, DelayModel(20, 10, drop), seed)
    chain = PrivateChain(net, list(range(n)), n, lambda: [counting_contract(mode)], batch_timeout=30)
    return net, chain


@pytest.mark.parametrize("mode", list(ExecMode))
def test_replicas_agree_after_concurrent_submissions(mode):
    net, chain = _replicated(mode, drop=0.1, seed=3)
    for m in range(4):
        chain.submit_private_tx(m, "counter", INC if m % 2 == 0 else DBL)
    net.run_until_quiet()
    digests = {d for _, d in chain.replica_digests().values()}
    assert len(digests) == 1
    stats = [r.stats for r in chain.replicas.values()]
    assert sum(s.committed for s in stats) == 4
    if mode is ExecMode.ORDER_EXECUTE:
        assert sum(s.conflicts for s in stats) == 0


def test_non_member_cannot_submit():
    net, chain = _replicated(ExecMode.ORDER_EXECUTE)
    with pytest.raises(ArgumentError):
        chain.submit_private_tx(9, "counter", INC)


def test_silent_member_does_not_block_commits():
    net, chain = _replicated(ExecMode.ORDER_EXECUTE)
    net.inject_fault(3, "silent")
    chain.submit_private_tx(0, "counter", INC)
    assert chain.submit_private_tx(3, "counter", INC) is None
    net.run_until_quiet()
    assert chain.replicas[0].ledger.state("counter")["count"] == 1
